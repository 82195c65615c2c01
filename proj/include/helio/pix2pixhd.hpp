#pragma once

#include <cstdint>
#include <vector>

#include "helio/pix2pix.hpp"

namespace helio {

struct HDGeneratorSpec {
  std::size_t global_downsamples = 3;
  std::size_t global_residual_blocks = 9;
  std::size_t enhancer_residual_blocks = 3;
  std::size_t base_filters = 64;

  void validate() const;
  // 2^(global_downsamples + 1): the global generator's stride-2 stages plus
  // the enhancer's own downsampling.
  std::size_t required_multiple() const { return std::size_t{1} << (global_downsamples + 1); }
};

// out = in + F(in), F = conv3 -> norm -> relu -> conv3 -> norm.
class ResidualBlock final : public nn::Module {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t channels, nn::Rng& rng);

  Tensor forward(const Tensor& x, nn::Mode mode);
  Tensor backward(const Tensor& grad_y);
  void collect(nn::ParameterRefs& refs) override;

 private:
  nn::Conv2d conv1_, conv2_;
  nn::Norm2d norm1_, norm2_;
  nn::Act relu_{nn::Activation::Relu};
};

// Coarse-to-fine generator: a global generator G1 running on the 2x
// downscaled input, wrapped by a local enhancer G2 whose front-end features
// are summed with G1's last feature map before G2's back-end.
class HDGenerator final : public Generator {
 public:
  HDGenerator(const HDGeneratorSpec& spec, std::uint64_t seed);

  Tensor forward(const Tensor& x, nn::Mode mode) override;
  void backward(const Tensor& grad_output) override;
  void check_input(const Shape& shape) const override;
  void collect(nn::ParameterRefs& refs) override;

  const HDGeneratorSpec& spec() const { return spec_; }

  // G1's last feature map from the most recent forward (half resolution).
  const Tensor& global_features() const { return g1_features_; }
  // When set, the enhancer front-end's contribution to the fusion sum is dropped.
  void set_enhancer_front_ablation(bool ablate) { ablate_front_ = ablate; }
  // Runs only the enhancer back-end (residual trunk, upsampling, output head).
  Tensor enhancer_back_end(const Tensor& fused, nn::Mode mode);
  std::vector<ResidualBlock>& global_residual_blocks() { return g1_res_; }

 private:
  struct Stage {
    nn::Conv2d conv;
    nn::ConvTranspose2d tconv;
    bool transposed = false;
    nn::Norm2d norm;
    nn::Act act{nn::Activation::Relu};

    Tensor forward(const Tensor& x, nn::Mode mode);
    Tensor backward(const Tensor& g, bool want_grad_x = true);
    void collect(nn::ParameterRefs& refs);
  };

  HDGeneratorSpec spec_;
  Stage g1_in_;
  std::vector<Stage> g1_down_;
  std::vector<ResidualBlock> g1_res_;
  std::vector<Stage> g1_up_;
  Stage g2_in_, g2_down_;
  std::vector<ResidualBlock> g2_res_;
  Stage g2_up_;
  nn::Conv2d g2_out_;
  nn::Act tanh_{nn::Activation::Tanh};
  bool ablate_front_ = false;
  Tensor g1_features_;
};

struct MultiScaleDiscriminatorSpec {
  std::size_t num_scales = 2;
  DiscriminatorSpec per_scale;

  void validate() const;
};

using ScaleOutputs = std::vector<DiscriminatorOutput>;

// Independent PatchGANs; scale k (1-based) scores inputs average-pooled by 2^(k-1).
class MultiScaleDiscriminator final : public nn::Module {
 public:
  MultiScaleDiscriminator(const MultiScaleDiscriminatorSpec& spec, std::size_t input_channels,
                          std::uint64_t seed);

  ScaleOutputs forward(const Tensor& x, const Tensor& y, nn::Mode mode);
  // Per-scale map gradients (and optional per-layer feature gradients) of the
  // last forward; returns the gradient with respect to full-resolution y.
  Tensor backward_to_target(const std::vector<Tensor>& grad_maps,
                            const std::vector<std::vector<Tensor>>* feature_grads,
                            std::size_t x_channels);
  void collect(nn::ParameterRefs& refs) override;

  std::size_t num_scales() const { return scales_.size(); }
  PatchDiscriminator& scale(std::size_t k) { return scales_.at(k); }  // 0-based
  // Spatial side seen by scale k (0-based) for a given input side.
  static std::size_t side_at_scale(std::size_t input_side, std::size_t k) { return input_side >> k; }

 private:
  MultiScaleDiscriminatorSpec spec_;
  std::vector<PatchDiscriminator> scales_;
};

}  // namespace helio
