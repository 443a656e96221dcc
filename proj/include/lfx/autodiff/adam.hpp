#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lfx/autodiff/tensor.hpp"

namespace lfx::ad {

template <typename Scalar>
struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Buffer<Scalar>> m;
  std::vector<Buffer<Scalar>> v;
};

// Bias-corrected Adam update applied in place to every parameter that has a
// gradient. Moment buffers are created on the first call.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Buffer<Scalar>::Zero(p.value().size()));
      state.v.push_back(Buffer<Scalar>::Zero(p.value().size()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    if (state.m[i].size() != p.value().size()) throw ShapeError("adam_step: moment shape mismatch");
    const auto& g = p.grad();
    state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * g.square();
    const auto mhat = state.m[i] / static_cast<Scalar>(c1);
    const auto vhat = state.v[i] / static_cast<Scalar>(c2);
    p.value() -= static_cast<Scalar>(state.lr) * mhat / (vhat.sqrt() + static_cast<Scalar>(state.eps));
  }
}

template <typename Scalar>
void zero_grad(std::vector<Tensor<Scalar>>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace lfx::ad
