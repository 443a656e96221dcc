#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lfx/model/layers.hpp"
#include "lfx/pipeline/resize.hpp"

namespace lfx::model {

// 3x3 spatial conv -> n_c42 C42 blocks -> n_epix EPIXformers -> task head.
template <typename Scalar>
class Network {
 public:
  Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Initializer init(seed);
    const std::size_t C = cfg_.channels;
    register_conv(params_, "stem", C, cfg_.in_channels, 3, 3, init);
    for (std::size_t i = 0; i < cfg_.n_c42; ++i)
      register_c42_block(params_, "c42." + std::to_string(i), block_config(), init);
    if (cfg_.use_epixformer)
      for (std::size_t i = 0; i < cfg_.n_epix; ++i)
        register_epixformer(params_, "epix." + std::to_string(i), C, cfg_.tie_epix_weights, init);
    if (cfg_.task == Task::SSR)
      register_ssr_head(params_, "head", C, cfg_.in_channels, cfg_.scale, init);
    else
      register_asr_head(params_, "head", C, cfg_.in_channels, cfg_.asr_in, cfg_.asr_out, init);
  }

  // Adopts existing parameters (e.g. from a checkpoint); every expected name
  // must be present with the expected shape.
  Network(const NetworkConfig& cfg, const ParameterStore<Scalar>& params) : Network(cfg, 0) {
    for (auto& [pname, t] : params_.entries()) {
      if (!params.contains(pname)) throw ConfigError("checkpoint lacks parameter " + pname);
      const auto& src = params.at(pname);
      if (src.shape() != t.shape())
        throw ShapeError("checkpoint parameter " + pname + " has shape " + ad::to_string(src.shape()) +
                         ", expected " + ad::to_string(t.shape()));
      params_.at(pname).value() = src.value();
    }
  }

  const NetworkConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& params() { return params_; }
  const ParameterStore<Scalar>& params() const { return params_; }

  C42BlockConfig block_config() const {
    return {cfg_.channels, cfg_.input_angular(), cfg_.use_vsi, 0.1};
  }
  MHXAConfig mhxa_config() const { return {cfg_.channels, cfg_.heads, cfg_.d_max, 1e-5}; }

  Tensor<Scalar> trunk(const Tensor<Scalar>& input) const {
    auto f = sai_conv(input, params_, "stem");
    for (std::size_t i = 0; i < cfg_.n_c42; ++i)
      f = c42_block(f, params_, "c42." + std::to_string(i), block_config());
    if (cfg_.use_epixformer)
      for (std::size_t i = 0; i < cfg_.n_epix; ++i)
        f = epixformer(f, params_, "epix." + std::to_string(i), mhxa_config());
    return f;
  }

  // input: [N, C_in, A, A, Y, X] with A = input_angular().
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const {
    check_input(input);
    auto f = trunk(input);
    if (cfg_.task == Task::SSR) {
      Tensor<Scalar> skip;
      if (cfg_.bicubic_skip) skip = bicubic_skip(input);
      return ssr_head(f, params_, "head", cfg_.scale, skip);
    }
    auto out = asr_head(f, params_, "head", cfg_.asr_out);
    if (cfg_.asr_copy_inputs) out = copy_sparse_inputs(out, input);
    return out;
  }

  // Single light field in, single light field out.
  LightField4D<Scalar> infer(const LightField4D<Scalar>& lf) const {
    const auto& d = lf.dims();
    auto in = Tensor<Scalar>::constant({1, d.c, d.u, d.v, d.y, d.x}, lf.data());
    auto out = forward(in);
    const auto& s = out.shape();
    return LightField4D<Scalar>(LfDims{s[1], s[2], s[3], s[4], s[5]}, out.value());
  }

  // Angular positions of the sparse inputs on the dense grid.
  std::vector<std::size_t> sparse_positions() const {
    std::vector<std::size_t> pos;
    const std::size_t step = cfg_.asr_in > 1 ? (cfg_.asr_out - 1) / (cfg_.asr_in - 1) : 0;
    for (std::size_t i = 0; i < cfg_.asr_in; ++i) pos.push_back(i * step);
    return pos;
  }

 private:
  void check_input(const Tensor<Scalar>& input) const {
    const std::size_t A = cfg_.input_angular();
    if (input.rank() != 6 || input.dim(1) != cfg_.in_channels || input.dim(2) != A ||
        input.dim(3) != A)
      throw ShapeError("network: input " + ad::to_string(input.shape()) + " does not match " +
                       to_string(cfg_.task) + " config (C=" + std::to_string(cfg_.in_channels) +
                       ", A=" + std::to_string(A) + ")");
  }

  // Per-view bicubic upsampling of the input; differentiable (the reverse
  // pass applies the transposed resampling matrices).
  Tensor<Scalar> bicubic_skip(const Tensor<Scalar>& input) const {
    const auto& s = input.shape();
    const std::size_t r = cfg_.scale;
    const std::size_t H = s[4], W = s[5];
    ad::Buffer<Scalar> up(static_cast<Eigen::Index>(ad::numel(s) * r * r));
    const std::size_t views = s[0] * s[1] * s[2] * s[3];
    const std::size_t in_plane = H * W, out_plane = in_plane * r * r;
    for (std::size_t i = 0; i < views; ++i) {
      Eigen::Map<const Image<Scalar>> view(input.value().data() + i * in_plane, Eigen::Index(H),
                                           Eigen::Index(W));
      Eigen::Map<Image<Scalar>>(up.data() + i * out_plane, Eigen::Index(H * r),
                                Eigen::Index(W * r)) =
          pipeline::bicubic_resize_to<Scalar>(Image<Scalar>(view), H * r, W * r);
    }
    const ad::RowMatrix<Scalar> ry = pipeline::resample_matrix(H, H * r).cast<Scalar>();
    const ad::RowMatrix<Scalar> rx = pipeline::resample_matrix(W, W * r).cast<Scalar>();
    auto pin = input.node_ptr();
    return ad::make_result<Scalar>(
        {s[0], s[1], s[2], s[3], H * r, W * r}, std::move(up), "bicubic_skip", {input},
        [pin, ry, rx, views, H, W, r](const ad::Node<Scalar>& self) {
          pin->ensure_grad();
          for (std::size_t i = 0; i < views; ++i) {
            ad::ConstMatMap<Scalar> g(self.grad.data() + i * H * W * r * r, Eigen::Index(H * r),
                                      Eigen::Index(W * r));
            ad::MatMap<Scalar>(pin->grad.data() + i * H * W, Eigen::Index(H), Eigen::Index(W))
                .noalias() += ry.transpose() * g * rx;
          }
        });
  }

  // Overwrites the dense-grid positions of the sparse inputs with the inputs.
  Tensor<Scalar> copy_sparse_inputs(const Tensor<Scalar>& out, const Tensor<Scalar>& input) const {
    const auto& s = out.shape();
    ad::Buffer<Scalar> keep = ad::Buffer<Scalar>::Ones(out.value().size());
    ad::Buffer<Scalar> fill = ad::Buffer<Scalar>::Zero(out.value().size());
    const auto pos = sparse_positions();
    const std::size_t plane = s[4] * s[5];
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t c = 0; c < s[1]; ++c)
        for (std::size_t i = 0; i < pos.size(); ++i)
          for (std::size_t j = 0; j < pos.size(); ++j) {
            const std::size_t o = (((n * s[1] + c) * s[2] + pos[i]) * s[3] + pos[j]) * plane;
            const std::size_t in =
                (((n * s[1] + c) * input.dim(2) + i) * input.dim(3) + j) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              keep[Eigen::Index(o + p)] = 0;
              fill[Eigen::Index(o + p)] = input.value()[Eigen::Index(in + p)];
            }
          }
    return ad::add(ad::mul(out, Tensor<Scalar>::constant(s, keep)),
                   Tensor<Scalar>::constant(s, fill));
  }

  NetworkConfig cfg_;
  ParameterStore<Scalar> params_;
};

}  // namespace lfx::model
