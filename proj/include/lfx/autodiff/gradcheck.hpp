#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lfx/autodiff/tensor.hpp"

namespace lfx::ad {

struct GradCheckOptions {
  double step = 1e-6;
  // Entries checked per tensor; all entries when the tensor is smaller.
  std::size_t max_entries = 24;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Central finite differences against the reverse pass for every tensor in
// `wrt`. `loss` must rebuild the graph from the current tensor values.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss,
                                  std::vector<Tensor<double>> wrt,
                                  const GradCheckOptions& opt = {}) {
  for (auto& t : wrt) t.zero_grad();
  backward(loss());
  std::vector<Buffer<double>> analytic;
  for (auto& t : wrt) analytic.push_back(t.has_grad() ? t.grad() : Buffer<double>::Zero(t.size()));

  GradCheckResult res;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > opt.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries);
    }
    for (auto i : idx) {
      const auto e = static_cast<Eigen::Index>(i);
      const double orig = t.value()[e];
      t.value()[e] = orig + opt.step;
      const double fp = loss().item();
      t.value()[e] = orig - opt.step;
      const double fm = loss().item();
      t.value()[e] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[ti][e];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = "tensor " + std::to_string(ti) + " entry " + std::to_string(i) +
                    " analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

}  // namespace lfx::ad
