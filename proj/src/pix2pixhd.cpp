#include "helio/pix2pixhd.hpp"

namespace helio {

using nn::Mode;
using nn::NormKind;

// --------------------------------------------------------- HDGeneratorSpec

void HDGeneratorSpec::validate() const {
  if (global_downsamples < 1) throw Error(ErrorKind::InvalidSpec, "global_downsamples must be >= 1");
  if (global_residual_blocks < 1 || enhancer_residual_blocks < 1) {
    throw Error(ErrorKind::InvalidSpec, "residual block counts must be >= 1");
  }
  if (base_filters == 0) throw Error(ErrorKind::InvalidSpec, "base_filters must be > 0");
}

// ----------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(const std::string& name, std::size_t channels, nn::Rng& rng)
    : conv1_(name + ".conv1", channels, channels, 3, 1, 1, false, rng),
      conv2_(name + ".conv2", channels, channels, 3, 1, 1, false, rng),
      norm1_(name + ".norm1", NormKind::Instance, channels, rng),
      norm2_(name + ".norm2", NormKind::Instance, channels, rng) {}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = relu_.forward(norm1_.forward(conv1_.forward(x), mode));
  h = norm2_.forward(conv2_.forward(h), mode);
  add_inplace(h, x);
  return h;
}

Tensor ResidualBlock::backward(const Tensor& grad_y) {
  Tensor g = conv2_.backward(norm2_.backward(grad_y));
  g = conv1_.backward(norm1_.backward(relu_.backward(g)));
  add_inplace(g, grad_y);
  return g;
}

void ResidualBlock::collect(nn::ParameterRefs& refs) {
  conv1_.collect(refs);
  norm1_.collect(refs);
  conv2_.collect(refs);
  norm2_.collect(refs);
}

// ----------------------------------------------------------- HDGenerator

Tensor HDGenerator::Stage::forward(const Tensor& x, Mode mode) {
  Tensor h = transposed ? tconv.forward(x) : conv.forward(x);
  return act.forward(norm.forward(h, mode));
}

Tensor HDGenerator::Stage::backward(const Tensor& g, bool want_grad_x) {
  Tensor h = norm.backward(act.backward(g));
  return transposed ? tconv.backward(h, want_grad_x) : conv.backward(h, want_grad_x);
}

void HDGenerator::Stage::collect(nn::ParameterRefs& refs) {
  if (transposed) {
    tconv.collect(refs);
  } else {
    conv.collect(refs);
  }
  norm.collect(refs);
}

HDGenerator::HDGenerator(const HDGeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  nn::Rng rng(seed);
  const std::size_t f = spec_.base_filters;
  const std::size_t gf = 2 * f;  // global generator width

  auto conv_stage = [&](const std::string& name, std::size_t cin, std::size_t cout,
                        std::size_t k, std::size_t stride, std::size_t pad) {
    Stage s;
    s.conv = nn::Conv2d(name + ".conv", cin, cout, k, stride, pad, false, rng);
    s.norm = nn::Norm2d(name + ".norm", NormKind::Instance, cout, rng);
    return s;
  };
  auto up_stage = [&](const std::string& name, std::size_t cin, std::size_t cout) {
    Stage s;
    s.transposed = true;
    s.tconv = nn::ConvTranspose2d(name + ".conv", cin, cout, 3, 2, 1, 1, false, rng);
    s.norm = nn::Norm2d(name + ".norm", NormKind::Instance, cout, rng);
    return s;
  };

  g1_in_ = conv_stage("gen.g1.in", 3, gf, 7, 1, 3);
  std::size_t c = gf;
  for (std::size_t i = 0; i < spec_.global_downsamples; ++i) {
    g1_down_.push_back(conv_stage("gen.g1.down" + std::to_string(i + 1), c, 2 * c, 3, 2, 1));
    c *= 2;
  }
  for (std::size_t i = 0; i < spec_.global_residual_blocks; ++i) {
    g1_res_.emplace_back("gen.g1.res" + std::to_string(i + 1), c, rng);
  }
  for (std::size_t i = 0; i < spec_.global_downsamples; ++i) {
    g1_up_.push_back(up_stage("gen.g1.up" + std::to_string(i + 1), c, c / 2));
    c /= 2;
  }

  g2_in_ = conv_stage("gen.g2.in", 3, f, 7, 1, 3);
  g2_down_ = conv_stage("gen.g2.down", f, gf, 3, 2, 1);
  for (std::size_t i = 0; i < spec_.enhancer_residual_blocks; ++i) {
    g2_res_.emplace_back("gen.g2.res" + std::to_string(i + 1), gf, rng);
  }
  g2_up_ = up_stage("gen.g2.up", gf, f);
  g2_out_ = nn::Conv2d("gen.g2.out", f, 3, 7, 1, 3, true, rng);
}

void HDGenerator::check_input(const Shape& shape) const {
  if (shape.size() != 4 || shape[1] != 3 || shape[2] != shape[3]) {
    throw Error(ErrorKind::ShapeMismatch, "expected (N, 3, S, S) input, got " + shape_string(shape));
  }
  const std::size_t m = spec_.required_multiple();
  if (shape[2] < m || shape[2] % m != 0) {
    throw Error(ErrorKind::ShapeMismatch, "input side " + std::to_string(shape[2]) +
                                              " must be a multiple of " + std::to_string(m));
  }
}

Tensor HDGenerator::forward(const Tensor& x, Mode mode) {
  check_input(x.shape());
  Tensor h = g1_in_.forward(avg_pool2(x), mode);
  for (Stage& s : g1_down_) h = s.forward(h, mode);
  for (ResidualBlock& r : g1_res_) h = r.forward(h, mode);
  for (Stage& s : g1_up_) h = s.forward(h, mode);
  g1_features_ = h;

  Tensor fused = g2_down_.forward(g2_in_.forward(x, mode), mode);
  if (ablate_front_) {
    fused = g1_features_;
  } else {
    add_inplace(fused, g1_features_);
  }
  return enhancer_back_end(fused, mode);
}

Tensor HDGenerator::enhancer_back_end(const Tensor& fused, Mode mode) {
  Tensor h = fused;
  for (ResidualBlock& r : g2_res_) h = r.forward(h, mode);
  h = g2_up_.forward(h, mode);
  return tanh_.forward(g2_out_.forward(h));
}

void HDGenerator::backward(const Tensor& grad_output) {
  Tensor g = g2_out_.backward(tanh_.backward(grad_output));
  g = g2_up_.backward(g);
  for (std::size_t i = g2_res_.size(); i-- > 0;) g = g2_res_[i].backward(g);
  const Tensor grad_fused = g;

  if (!ablate_front_) {
    Tensor gf = g2_down_.backward(grad_fused);
    g2_in_.backward(gf, false);
  }
  Tensor h = grad_fused;
  for (std::size_t i = g1_up_.size(); i-- > 0;) h = g1_up_[i].backward(h);
  for (std::size_t i = g1_res_.size(); i-- > 0;) h = g1_res_[i].backward(h);
  for (std::size_t i = g1_down_.size(); i-- > 0;) h = g1_down_[i].backward(h);
  g1_in_.backward(h, false);
}

void HDGenerator::collect(nn::ParameterRefs& refs) {
  g1_in_.collect(refs);
  for (Stage& s : g1_down_) s.collect(refs);
  for (ResidualBlock& r : g1_res_) r.collect(refs);
  for (Stage& s : g1_up_) s.collect(refs);
  g2_in_.collect(refs);
  g2_down_.collect(refs);
  for (ResidualBlock& r : g2_res_) r.collect(refs);
  g2_up_.collect(refs);
  g2_out_.collect(refs);
}

// ---------------------------------------------- MultiScaleDiscriminator

void MultiScaleDiscriminatorSpec::validate() const {
  if (num_scales < 1) throw Error(ErrorKind::InvalidSpec, "num_scales must be >= 1");
  per_scale.validate();
}

MultiScaleDiscriminator::MultiScaleDiscriminator(const MultiScaleDiscriminatorSpec& spec,
                                                 std::size_t input_channels, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  for (std::size_t k = 0; k < spec_.num_scales; ++k) {
    scales_.emplace_back(spec_.per_scale, input_channels, seed + 7919 * k,
                         "disc.scale" + std::to_string(k + 1));
  }
}

ScaleOutputs MultiScaleDiscriminator::forward(const Tensor& x, const Tensor& y, Mode mode) {
  ScaleOutputs out;
  Tensor xs = x, ys = y;
  for (std::size_t k = 0; k < scales_.size(); ++k) {
    if (k > 0) {
      xs = avg_pool2(xs);
      ys = avg_pool2(ys);
    }
    out.push_back(scales_[k].forward(xs, ys, mode));
  }
  return out;
}

Tensor MultiScaleDiscriminator::backward_to_target(
    const std::vector<Tensor>& grad_maps, const std::vector<std::vector<Tensor>>* feature_grads,
    std::size_t x_channels) {
  if (grad_maps.size() != scales_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "one map gradient per scale required");
  }
  Tensor carry;  // gradient w.r.t. y at the current scale, from coarser scales
  for (std::size_t k = scales_.size(); k-- > 0;) {
    const std::vector<Tensor>* fg = feature_grads ? &(*feature_grads)[k] : nullptr;
    Tensor g_in = scales_[k].backward(grad_maps[k], fg);
    Tensor gy = split_channels(g_in, x_channels).second;
    if (!carry.empty()) add_inplace(gy, carry);
    carry = k > 0 ? avg_pool2_backward(gy) : std::move(gy);
  }
  return carry;
}

void MultiScaleDiscriminator::collect(nn::ParameterRefs& refs) {
  for (PatchDiscriminator& d : scales_) d.collect(refs);
}

}  // namespace helio
