#include "helio/pix2pix.hpp"

#include <algorithm>

namespace helio {

namespace {

constexpr float kLeakySlope = 0.2f;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void require_square_nchw(const Shape& s, std::size_t channels) {
  if (s.size() != 4 || s[1] != channels || s[2] != s[3]) {
    throw Error(ErrorKind::ShapeMismatch, "expected (N, " + std::to_string(channels) +
                                              ", S, S) input, got " + shape_string(s));
  }
}

}  // namespace

// ---------------------------------------------------------- GeneratorSpec

void GeneratorSpec::validate() const {
  if (depth < 3) throw Error(ErrorKind::InvalidSpec, "U-Net depth must be >= 3");
  if (base_filters == 0 || max_filters < base_filters) {
    throw Error(ErrorKind::InvalidSpec, "U-Net filter counts must satisfy 0 < base <= max");
  }
  if (dropout_rate < 0.0f || dropout_rate >= 1.0f) {
    throw Error(ErrorKind::InvalidSpec, "dropout rate must be in [0, 1)");
  }
  for (std::size_t b : dropout_blocks) {
    if (b == 0 || b >= depth) {
      throw Error(ErrorKind::InvalidSpec,
                  "dropout block index " + std::to_string(b) + " outside 1..depth-1");
    }
  }
}

std::size_t GeneratorSpec::bottleneck_side(std::size_t input_side) const {
  const std::size_t factor = std::size_t{1} << depth;
  if (input_side < factor || input_side % factor != 0) {
    throw Error(ErrorKind::ShapeMismatch,
                "input side " + std::to_string(input_side) + " must be a multiple of 2^" +
                    std::to_string(depth) + " = " + std::to_string(factor));
  }
  return input_side / factor;
}

std::size_t GeneratorSpec::encoder_channels(std::size_t block) const {
  std::size_t c = base_filters;
  for (std::size_t i = 1; i < block && c < max_filters; ++i) c *= 2;
  return std::min(c, max_filters);
}

// ---------------------------------------------------------- UNetGenerator

UNetGenerator::UNetGenerator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  nn::Rng rng(seed);
  const std::size_t d = spec_.depth;
  encoders_.resize(d);
  for (std::size_t i = 1; i <= d; ++i) {
    Encoder& e = encoders_[i - 1];
    const std::size_t cin = i == 1 ? 3 : spec_.encoder_channels(i - 1);
    const std::size_t cout = spec_.encoder_channels(i);
    // No normalization on the first block or on the bottleneck, whose 1x1
    // maps carry no spatial statistics.
    e.has_norm = i > 1 && i < d;
    const std::string name = "gen.enc" + std::to_string(i);
    e.conv = nn::Conv2d(name + ".conv", cin, cout, 4, 2, 1, !e.has_norm, rng);
    if (e.has_norm) e.norm = nn::Norm2d(name + ".norm", nn::NormKind::Batch, cout, rng);
    e.act = nn::Act(nn::Activation::LeakyRelu, kLeakySlope);
  }
  decoders_.resize(d);
  dec_in_head_channels_.resize(d);
  std::size_t prev = 0;
  for (std::size_t j = 1; j <= d; ++j) {
    Decoder& b = decoders_[j - 1];
    const std::size_t skip = spec_.encoder_channels(d - j + 1);
    const std::size_t cin = j == 1 ? skip : prev + skip;
    dec_in_head_channels_[j - 1] = j == 1 ? skip : prev;
    const bool last = j == d;
    const std::size_t cout = last ? 3 : spec_.encoder_channels(d - j);
    const std::string name = "gen.dec" + std::to_string(j);
    b.has_norm = !last;
    b.conv = nn::ConvTranspose2d(name + ".conv", cin, cout, 4, 2, 1, 0, last, rng);
    if (b.has_norm) b.norm = nn::Norm2d(name + ".norm", nn::NormKind::Batch, cout, rng);
    if (spec_.dropout_blocks.count(j)) {
      b.dropout = nn::Dropout(spec_.dropout_rate, derive_seed(seed, j));
    }
    b.act = nn::Act(last ? nn::Activation::Tanh : nn::Activation::Relu);
    prev = cout;
  }
  skip_ablated_.assign(d, false);
}

void UNetGenerator::check_input(const Shape& shape) const {
  require_square_nchw(shape, 3);
  spec_.bottleneck_side(shape[2]);
}

void UNetGenerator::set_skip_ablation(std::size_t block, bool ablate) {
  if (block == 0 || block >= spec_.depth) {
    throw Error(ErrorKind::InvalidSpec, "skip connections exist for encoder blocks 1..depth-1");
  }
  skip_ablated_[block - 1] = ablate;
}

Tensor UNetGenerator::forward(const Tensor& x, nn::Mode mode) {
  check_input(x.shape());
  const std::size_t d = spec_.depth;
  enc_out_.resize(d);
  dec_out_.resize(d);
  Tensor h = x;
  for (std::size_t i = 0; i < d; ++i) {
    Encoder& e = encoders_[i];
    h = e.conv.forward(h);
    if (e.has_norm) h = e.norm.forward(h, mode);
    h = e.act.forward(h);
    enc_out_[i] = h;
  }
  for (std::size_t j = 1; j <= d; ++j) {
    Decoder& b = decoders_[j - 1];
    Tensor in;
    if (j == 1) {
      in = enc_out_[d - 1];
    } else {
      const std::size_t skip_block = d - j + 1;  // 1-based encoder index
      const Tensor& skip = enc_out_[skip_block - 1];
      in = skip_ablated_[skip_block - 1] ? concat_channels(dec_out_[j - 2], Tensor(skip.shape()))
                                         : concat_channels(dec_out_[j - 2], skip);
    }
    Tensor y = b.conv.forward(in);
    if (b.has_norm) y = b.norm.forward(y, mode);
    y = b.dropout.forward(y, mode);
    dec_out_[j - 1] = b.act.forward(y);
  }
  return dec_out_[d - 1];
}

void UNetGenerator::backward(const Tensor& grad_output) {
  const std::size_t d = spec_.depth;
  std::vector<Tensor> enc_grad(d);
  Tensor g = grad_output;
  for (std::size_t j = d; j >= 1; --j) {
    Decoder& b = decoders_[j - 1];
    g = b.act.backward(g);
    g = b.dropout.backward(g);
    if (b.has_norm) g = b.norm.backward(g);
    Tensor gin = b.conv.backward(g);
    if (j == 1) {
      enc_grad[d - 1] = std::move(gin);
    } else {
      auto [head, skip] = split_channels(gin, dec_in_head_channels_[j - 1]);
      const std::size_t skip_block = d - j + 1;
      if (!skip_ablated_[skip_block - 1]) enc_grad[skip_block - 1] = std::move(skip);
      g = std::move(head);
    }
  }
  Tensor carry;
  for (std::size_t i = d; i >= 1; --i) {
    Encoder& e = encoders_[i - 1];
    Tensor ge = std::move(enc_grad[i - 1]);
    if (ge.empty()) ge = Tensor(enc_out_[i - 1].shape());
    if (!carry.empty()) add_inplace(ge, carry);
    ge = e.act.backward(ge);
    if (e.has_norm) ge = e.norm.backward(ge);
    carry = e.conv.backward(ge, /*want_grad_x=*/i > 1);
  }
}

void UNetGenerator::collect(nn::ParameterRefs& refs) {
  for (Encoder& e : encoders_) {
    e.conv.collect(refs);
    if (e.has_norm) e.norm.collect(refs);
  }
  for (Decoder& b : decoders_) {
    b.conv.collect(refs);
    if (b.has_norm) b.norm.collect(refs);
  }
}

// ------------------------------------------------------ DiscriminatorSpec

void DiscriminatorSpec::validate() const {
  if (strided_layers < 1) throw Error(ErrorKind::InvalidSpec, "need at least one stride-2 layer");
  if (kernel_size < 2) throw Error(ErrorKind::InvalidSpec, "kernel size must be >= 2");
  if (base_filters == 0 || max_filters < base_filters) {
    throw Error(ErrorKind::InvalidSpec, "discriminator filter counts must satisfy 0 < base <= max");
  }
}

std::size_t patch_map_side(const DiscriminatorSpec& spec, std::size_t input_side) {
  std::size_t s = input_side;
  const std::size_t k = spec.kernel_size, p = spec.padding();
  for (std::size_t i = 0; i < spec.strided_layers; ++i) s = kernels::conv_out_size(s, k, 2, p);
  s = kernels::conv_out_size(s, k, 1, p);
  return kernels::conv_out_size(s, k, 1, p);
}

// ----------------------------------------------------- PatchDiscriminator

PatchDiscriminator::PatchDiscriminator(const DiscriminatorSpec& spec, std::size_t input_channels,
                                       std::uint64_t seed, const std::string& prefix)
    : spec_(spec) {
  spec_.validate();
  nn::Rng rng(seed);
  const std::size_t n = spec_.layer_count(), k = spec_.kernel_size, p = spec_.padding();
  layers_.resize(n);
  std::size_t cin = input_channels, width = spec_.base_filters;
  for (std::size_t l = 1; l <= n; ++l) {
    Layer& L = layers_[l - 1];
    const bool last = l == n;
    const std::size_t stride = l <= spec_.strided_layers ? 2 : 1;
    const std::size_t cout = last ? 1 : std::min(width, spec_.max_filters);
    L.has_norm = l > 1 && !last;
    const std::string name = prefix + ".layer" + std::to_string(l);
    L.conv = nn::Conv2d(name + ".conv", cin, cout, k, stride, p, !L.has_norm, rng);
    if (L.has_norm) L.norm = nn::Norm2d(name + ".norm", nn::NormKind::Batch, cout, rng);
    L.act = last ? nn::Act(nn::Activation::Sigmoid) : nn::Act(nn::Activation::LeakyRelu, kLeakySlope);
    cin = cout;
    width *= 2;
  }
}

DiscriminatorOutput PatchDiscriminator::forward(const Tensor& x, const Tensor& y, nn::Mode mode) {
  if (x.rank() != 4 || y.rank() != 4 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) ||
      x.dim(3) != y.dim(3)) {
    throw Error(ErrorKind::ShapeMismatch, "discriminator inputs differ: " +
                                              shape_string(x.shape()) + " vs " +
                                              shape_string(y.shape()));
  }
  DiscriminatorOutput out;
  Tensor h = concat_channels(x, y);
  for (Layer& L : layers_) {
    h = L.conv.forward(h);
    if (L.has_norm) h = L.norm.forward(h, mode);
    h = L.act.forward(h);
    out.features.push_back(h);
  }
  out.map = out.features.back();
  return out;
}

Tensor PatchDiscriminator::backward(const Tensor& grad_map,
                                    const std::vector<Tensor>* feature_grads) {
  Tensor g = grad_map;
  for (std::size_t l = layers_.size(); l >= 1; --l) {
    if (feature_grads && l - 1 < feature_grads->size() && !(*feature_grads)[l - 1].empty()) {
      if (g.empty()) g = Tensor((*feature_grads)[l - 1].shape());
      add_inplace(g, (*feature_grads)[l - 1]);
    }
    if (g.empty()) throw Error(ErrorKind::ShapeMismatch, "discriminator backward without gradient");
    Layer& L = layers_[l - 1];
    g = L.act.backward(g);
    if (L.has_norm) g = L.norm.backward(g);
    g = L.conv.backward(g);
  }
  return g;
}

void PatchDiscriminator::collect(nn::ParameterRefs& refs) {
  for (Layer& L : layers_) {
    L.conv.collect(refs);
    if (L.has_norm) L.norm.collect(refs);
  }
}

}  // namespace helio
