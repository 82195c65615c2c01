#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <vector>

#include "helio/nn.hpp"

namespace helio {

// Common surface of the two generator architectures.
class Generator : public nn::Module {
 public:
  virtual Tensor forward(const Tensor& x, nn::Mode mode) = 0;
  // Back-propagates d(loss)/d(output) of the last forward into parameter grads.
  virtual void backward(const Tensor& grad_output) = 0;
  // Throws ShapeMismatch unless (N, 3, side, side) is a valid input.
  virtual void check_input(const Shape& shape) const = 0;
};

struct GeneratorSpec {
  std::size_t depth = 10;
  std::size_t base_filters = 64;
  std::size_t max_filters = 512;
  std::set<std::size_t> dropout_blocks{1, 2, 3};  // 1-based decoder indices
  float dropout_rate = 0.5f;

  void validate() const;
  // Throws unless side == 2^depth * bottleneck with bottleneck >= 1.
  std::size_t bottleneck_side(std::size_t input_side) const;
  std::size_t encoder_channels(std::size_t block) const;  // 1-based
};

class UNetGenerator final : public Generator {
 public:
  UNetGenerator(const GeneratorSpec& spec, std::uint64_t seed);

  Tensor forward(const Tensor& x, nn::Mode mode) override;
  void backward(const Tensor& grad_output) override;
  void check_input(const Shape& shape) const override;
  void collect(nn::ParameterRefs& refs) override;

  const GeneratorSpec& spec() const { return spec_; }
  // Activations of the last forward, index 0 = block 1.
  const std::vector<Tensor>& encoder_outputs() const { return enc_out_; }
  const std::vector<Tensor>& decoder_outputs() const { return dec_out_; }
  // Replaces encoder block `block`'s skip tensor with zeros (block < depth).
  void set_skip_ablation(std::size_t block, bool ablate);

 private:
  struct Encoder {
    nn::Conv2d conv;
    nn::Norm2d norm;
    bool has_norm = false;
    nn::Act act;
  };
  struct Decoder {
    nn::ConvTranspose2d conv;
    nn::Norm2d norm;
    bool has_norm = false;
    nn::Dropout dropout;
    nn::Act act;
  };

  GeneratorSpec spec_;
  std::vector<Encoder> encoders_;
  std::vector<Decoder> decoders_;
  std::vector<bool> skip_ablated_;
  std::vector<Tensor> enc_out_;
  std::vector<Tensor> dec_out_;
  std::vector<std::size_t> dec_in_head_channels_;
};

struct DiscriminatorSpec {
  std::size_t strided_layers = 3;
  std::size_t base_filters = 64;
  std::size_t kernel_size = 4;
  std::size_t max_filters = 512;

  void validate() const;
  std::size_t layer_count() const { return strided_layers + 2; }
  std::size_t padding() const { return (kernel_size - 1) / 2; }
};

// Side of the patch map produced for a square input of the given side.
std::size_t patch_map_side(const DiscriminatorSpec& spec, std::size_t input_side);

struct DiscriminatorOutput {
  Tensor map;                     // (N, 1, h, w), values in (0, 1)
  std::vector<Tensor> features;   // one per layer; the last one is `map`
};

// PatchGAN: strided convolutions, then two stride-1 convolutions down to a
// one-channel sigmoid map. Scores the channel concatenation of (x, y).
class PatchDiscriminator final : public nn::Module {
 public:
  PatchDiscriminator(const DiscriminatorSpec& spec, std::size_t input_channels,
                     std::uint64_t seed, const std::string& prefix = "disc");

  DiscriminatorOutput forward(const Tensor& x, const Tensor& y, nn::Mode mode);
  // Gradient of the last forward with respect to its concatenated input.
  // feature_grads, if given, holds one (possibly empty) tensor per layer that
  // is added to that layer's output gradient.
  Tensor backward(const Tensor& grad_map, const std::vector<Tensor>* feature_grads = nullptr);
  void collect(nn::ParameterRefs& refs) override;

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  struct Layer {
    nn::Conv2d conv;
    nn::Norm2d norm;
    bool has_norm = false;
    nn::Act act;
  };
  DiscriminatorSpec spec_;
  std::vector<Layer> layers_;
};

}  // namespace helio
