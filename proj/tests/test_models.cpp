#include <gtest/gtest.h>

#include "helio/pix2pix.hpp"
#include "helio/pix2pixhd.hpp"
#include "test_util.hpp"

using namespace helio;
using helio::nn::Mode;
using helio::testutil::dot;
using helio::testutil::random_tensor;
using helio::testutil::rel_err;

namespace {

GeneratorSpec small_unet(std::size_t depth) {
  GeneratorSpec s;
  s.depth = depth;
  s.base_filters = 4;
  s.max_filters = 16;
  std::erase_if(s.dropout_blocks, [depth](std::size_t b) { return b >= depth; });
  return s;
}

HDGeneratorSpec small_hd() {
  HDGeneratorSpec s;
  s.global_downsamples = 2;
  s.global_residual_blocks = 2;
  s.enhancer_residual_blocks = 1;
  s.base_filters = 4;
  return s;
}

DiscriminatorSpec small_disc() {
  DiscriminatorSpec s;
  s.strided_layers = 2;
  s.base_filters = 4;
  s.max_filters = 16;
  return s;
}

// Output side of a k4 s2 p1 / k4 s1 p1 stack, written out independently.
std::size_t oracle_patch_side(std::size_t side, std::size_t strided, std::size_t k) {
  const std::size_t p = (k - 1) / 2;
  for (std::size_t i = 0; i < strided; ++i) side = (side + 2 * p - k) / 2 + 1;
  for (int i = 0; i < 2; ++i) side = side + 2 * p - k + 1;
  return side;
}

// At the default N(0, 0.02) init, normalization layers divide by tiny
// standard deviations and float finite differences drown in noise. Scaling
// the conv weights up makes the network well conditioned for the check.
void condition_for_fd(nn::Module& m) {
  for (nn::Parameter* p : m.parameters().params) {
    if (p->name.find("weight") == std::string::npos) continue;
    for (float& v : p->value.values()) v *= 25.0f;
  }
}

// For each parameter tensor, compares <grad, d> against the central
// difference of the loss along a random direction d. Two step sizes are used;
// their disagreement estimates float round-off and widens the allowance.
// `loss` must run a forward and return a scalar; `grad` must run forward +
// backward.
void check_parameter_gradients(nn::Module& m, const std::function<double()>& loss,
                               const std::function<void()>& grad, double tol = 5e-2) {
  m.zero_grad();
  grad();
  std::mt19937_64 rng(99);
  for (nn::Parameter* p : m.parameters().params) {
    const Tensor dir = random_tensor(p->value.shape(), rng);
    const Tensor orig = p->value;
    auto along = [&](double h) {
      for (std::size_t i = 0; i < orig.size(); ++i) p->value[i] = orig[i] + static_cast<float>(h) * dir[i];
      const double up = loss();
      for (std::size_t i = 0; i < orig.size(); ++i) p->value[i] = orig[i] - static_cast<float>(h) * dir[i];
      const double down = loss();
      p->value = orig;
      return (up - down) / (2 * h);
    };
    const double coarse = along(3e-4), fine = along(1e-4);
    const double analytic = dot(p->grad, dir);
    const double allowance =
        tol * std::max({std::abs(analytic), std::abs(coarse), 0.1}) + 2.0 * std::abs(coarse - fine);
    EXPECT_LE(std::abs(analytic - coarse), allowance)
        << p->name << " analytic " << analytic << " numeric " << coarse << " / " << fine;
  }
}

// Same idea for an input tensor and its analytic gradient.
void check_input_gradient(Tensor& input, const Tensor& analytic, const std::function<double()>& loss,
                          std::size_t stride, double tol = 5e-2) {
  std::size_t checked = 0, skipped = 0;
  for (std::size_t i = 0; i < input.size(); i += stride) {
    const auto fd = testutil::central_difference(input[i], loss);
    if (!fd.reliable) {
      ++skipped;
      continue;
    }
    ++checked;
    EXPECT_LT(rel_err(analytic[i], fd.value, 5e-2), tol)
        << "coordinate " << i << " analytic " << analytic[i] << " numeric " << fd.value;
  }
  EXPECT_GT(checked, 0u);
  EXPECT_LE(skipped, (checked + skipped) / 4);
}

void expect_all_grads_nonzero(nn::Module& m) {
  for (nn::Parameter* p : m.parameters().params) {
    double acc = 0.0;
    for (float g : p->grad.values()) acc += std::abs(g);
    EXPECT_GT(acc, 0.0) << p->name;
  }
}

}  // namespace

// ------------------------------------------------------------------ U-Net

TEST(UNet, ShapeLadderMatchesDepth) {
  for (std::size_t depth : {3u, 4u, 5u}) {
    const std::size_t side = std::size_t{1} << depth;
    UNetGenerator g(small_unet(depth), 1);
    std::mt19937_64 rng(depth);
    const Tensor x = random_tensor({1, 3, side, side}, rng);
    const Tensor y = g.forward(x, Mode::Eval);
    EXPECT_EQ(y.shape(), x.shape());
    ASSERT_EQ(g.encoder_outputs().size(), depth);
    for (std::size_t i = 1; i <= depth; ++i) {
      const Tensor& e = g.encoder_outputs()[i - 1];
      EXPECT_EQ(e.dim(1), g.spec().encoder_channels(i));
      EXPECT_EQ(e.dim(2), side >> i);
    }
    EXPECT_EQ(g.encoder_outputs().back().dim(2), 1u);
  }
}

TEST(UNet, FullDepthOnLargeInputReachesUnitBottleneck) {
  GeneratorSpec s;
  s.depth = 10;
  s.base_filters = 2;
  s.max_filters = 8;
  s.dropout_blocks.clear();
  EXPECT_EQ(s.bottleneck_side(1024), 1u);
  UNetGenerator g(s, 5);
  Tensor x({1, 3, 1024, 1024}, 0.25f);
  const Tensor y = g.forward(x, Mode::Eval);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(g.encoder_outputs().back().dim(2), 1u);
  EXPECT_EQ(g.encoder_outputs().back().dim(3), 1u);
}

TEST(UNet, RejectsIndivisibleOrWrongChannelInputs) {
  UNetGenerator g(small_unet(4), 1);
  EXPECT_THROW(g.forward(Tensor({1, 3, 24, 24}), Mode::Eval), Error);
  EXPECT_THROW(g.forward(Tensor({1, 1, 16, 16}), Mode::Eval), Error);
  EXPECT_THROW(g.forward(Tensor({1, 3, 8, 8}), Mode::Eval), Error);
  GeneratorSpec bad = small_unet(4);
  bad.dropout_blocks = {4};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(UNet, OutputBoundedAndFinite) {
  UNetGenerator g(small_unet(4), 2);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng, -50.0, 50.0);
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    const Tensor y = g.forward(x, mode);
    EXPECT_TRUE(testutil::all_finite(y));
    for (float v : y.values()) EXPECT_LE(std::abs(v), 1.0f);
  }
}

TEST(UNet, SameSeedSameWeightsAndEvalIsDeterministic) {
  UNetGenerator a(small_unet(4), 42), b(small_unet(4), 42), c(small_unet(4), 43);
  const auto wa = testutil::snapshot(a), wb = testutil::snapshot(b), wc = testutil::snapshot(c);
  EXPECT_EQ(wa, wb);
  EXPECT_NE(wa, wc);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 3, 16, 16}, rng);
  EXPECT_EQ(a.forward(x, Mode::Eval), a.forward(x, Mode::Eval));
  EXPECT_EQ(a.forward(x, Mode::Eval), b.forward(x, Mode::Eval));
}

TEST(UNet, ParameterGradientsMatchFiniteDifferences) {
  GeneratorSpec s = small_unet(3);
  s.dropout_blocks.clear();
  UNetGenerator g(s, 7);
  condition_for_fd(g);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const Tensor probe = random_tensor({2, 3, 8, 8}, rng);
  check_parameter_gradients(
      g, [&] { return dot(probe, g.forward(x, Mode::Train)); },
      [&] {
        g.forward(x, Mode::Train);
        g.backward(probe);
      });
}

TEST(UNet, EveryParameterReceivesGradient) {
  UNetGenerator g(small_unet(4), 9);
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng);
  g.zero_grad();
  const Tensor y = g.forward(x, Mode::Train);
  g.backward(random_tensor(y.shape(), rng));
  expect_all_grads_nonzero(g);
}

TEST(UNet, SkipAblationOnlyAffectsDecoderFromInjectionPoint) {
  const std::size_t depth = 5;
  GeneratorSpec s = small_unet(depth);
  s.dropout_blocks.clear();
  UNetGenerator g(s, 11);
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng);
  g.forward(x, Mode::Eval);
  const auto enc_ref = g.encoder_outputs();
  const auto dec_ref = g.decoder_outputs();
  for (std::size_t block = 1; block < depth; ++block) {
    g.set_skip_ablation(block, true);
    g.forward(x, Mode::Eval);
    EXPECT_EQ(g.encoder_outputs(), enc_ref);
    // Encoder block i feeds decoder block depth - i + 1.
    const std::size_t inject = depth - block + 1;
    for (std::size_t j = 1; j <= depth; ++j) {
      if (j < inject) {
        EXPECT_EQ(g.decoder_outputs()[j - 1], dec_ref[j - 1]) << "block " << block << " dec " << j;
      } else {
        EXPECT_NE(g.decoder_outputs()[j - 1], dec_ref[j - 1]) << "block " << block << " dec " << j;
      }
    }
    g.set_skip_ablation(block, false);
  }
  EXPECT_THROW(g.set_skip_ablation(depth, true), Error);
}

// ---------------------------------------------------------- PatchGAN

TEST(PatchGAN, MapSideMatchesIndependentFormula) {
  DiscriminatorSpec s;  // three stride-2 layers, kernel 4
  EXPECT_EQ(patch_map_side(s, 256), 30u);
  EXPECT_EQ(patch_map_side(s, 1024), 126u);
  EXPECT_EQ(patch_map_side(s, 64), 6u);
  for (std::size_t strided : {1u, 2u, 3u}) {
    for (std::size_t side : {32u, 64u, 100u, 256u}) {
      DiscriminatorSpec t;
      t.strided_layers = strided;
      EXPECT_EQ(patch_map_side(t, side), oracle_patch_side(side, strided, 4));
    }
  }
}

TEST(PatchGAN, ForwardShapesAndRange) {
  DiscriminatorSpec s = small_disc();
  PatchDiscriminator d(s, 6, 3);
  std::mt19937_64 rng(13);
  const Tensor x = random_tensor({2, 3, 32, 32}, rng), y = random_tensor({2, 3, 32, 32}, rng);
  const DiscriminatorOutput out = d.forward(x, y, Mode::Train);
  const std::size_t side = oracle_patch_side(32, s.strided_layers, s.kernel_size);
  EXPECT_EQ(out.map.shape(), (Shape{2, 1, side, side}));
  ASSERT_EQ(out.features.size(), s.layer_count());
  EXPECT_EQ(out.features.back(), out.map);
  for (float v : out.map.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_THROW(d.forward(x, Tensor({2, 3, 16, 16}), Mode::Train), Error);
}

TEST(PatchGAN, InputGradientMatchesFiniteDifferences) {
  PatchDiscriminator d(small_disc(), 6, 4);
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng);
  Tensor y = random_tensor({2, 3, 16, 16}, rng);
  DiscriminatorOutput out = d.forward(x, y, Mode::Train);
  const Tensor probe = random_tensor(out.map.shape(), rng);
  std::vector<Tensor> fprobe;
  for (const Tensor& f : out.features) fprobe.push_back(random_tensor(f.shape(), rng));
  auto loss = [&] {
    const DiscriminatorOutput o = d.forward(x, y, Mode::Train);
    double s = dot(probe, o.map);
    for (std::size_t l = 0; l < o.features.size(); ++l) s += dot(fprobe[l], o.features[l]);
    return s;
  };
  loss();
  const Tensor g = d.backward(probe, &fprobe);
  const Tensor gy = split_channels(g, 3).second;
  check_input_gradient(y, gy, loss, 7);
}

TEST(PatchGAN, ParameterGradientsMatchFiniteDifferences) {
  PatchDiscriminator d(small_disc(), 6, 5);
  condition_for_fd(d);
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng), y = random_tensor({2, 3, 16, 16}, rng);
  const Tensor probe = random_tensor(d.forward(x, y, Mode::Train).map.shape(), rng);
  check_parameter_gradients(
      d, [&] { return dot(probe, d.forward(x, y, Mode::Train).map); },
      [&] {
        d.forward(x, y, Mode::Train);
        d.backward(probe);
      });
}

// -------------------------------------------------------------- HD generator

TEST(HDGenerator, ShapesRangeAndDeterminism) {
  HDGenerator g(small_hd(), 21), g2(small_hd(), 21);
  EXPECT_EQ(testutil::snapshot(g), testutil::snapshot(g2));
  std::mt19937_64 rng(22);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng, -3.0, 3.0);
  const Tensor y = g.forward(x, Mode::Eval);
  EXPECT_EQ(y.shape(), x.shape());
  for (float v : y.values()) EXPECT_LE(std::abs(v), 1.0f);
  // G1 features live at half resolution with 2F channels.
  EXPECT_EQ(g.global_features().shape(), (Shape{1, 8, 16, 16}));
  EXPECT_EQ(y, g.forward(x, Mode::Eval));
  EXPECT_EQ(y, g2.forward(x, Mode::Eval));
  EXPECT_THROW(g.forward(Tensor({1, 3, 20, 20}), Mode::Eval), Error);
}

TEST(HDGenerator, FrontEndAblationEqualsBackEndOfGlobalFeatures) {
  HDGenerator g(small_hd(), 23);
  std::mt19937_64 rng(24);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng);
  const Tensor full = g.forward(x, Mode::Eval);
  g.set_enhancer_front_ablation(true);
  const Tensor ablated = g.forward(x, Mode::Eval);
  const Tensor expected = g.enhancer_back_end(g.global_features(), Mode::Eval);
  EXPECT_EQ(ablated, expected);
  EXPECT_NE(ablated, full);
}

TEST(HDGenerator, ZeroedResidualBranchIsIdentity) {
  nn::Rng init(25);
  ResidualBlock block("r", 4, init);
  for (nn::Parameter* p : block.parameters().params) {
    if (p->name.find("norm2") != std::string::npos) p->value.zero();  // gamma and beta
  }
  std::mt19937_64 rng(26);
  const Tensor x = random_tensor({1, 4, 8, 8}, rng);
  EXPECT_EQ(block.forward(x, Mode::Eval), x);
}

TEST(HDGenerator, ParameterGradientsMatchFiniteDifferences) {
  HDGenerator g(small_hd(), 27);
  condition_for_fd(g);
  std::mt19937_64 rng(28);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng);
  const Tensor probe = random_tensor({1, 3, 32, 32}, rng);
  check_parameter_gradients(
      g, [&] { return dot(probe, g.forward(x, Mode::Train)); },
      [&] {
        g.forward(x, Mode::Train);
        g.backward(probe);
      });
  g.zero_grad();
  g.forward(x, Mode::Train);
  g.backward(probe);
  expect_all_grads_nonzero(g);
}

// ------------------------------------------------- multi-scale discriminator

TEST(MultiScale, SecondScaleSeesPooledInputs) {
  MultiScaleDiscriminatorSpec s;
  s.per_scale = small_disc();
  MultiScaleDiscriminator d(s, 6, 31);
  std::mt19937_64 rng(32);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng), y = random_tensor({1, 3, 32, 32}, rng);
  const ScaleOutputs out = d.forward(x, y, Mode::Eval);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(MultiScaleDiscriminator::side_at_scale(32, 1), 16u);
  const DiscriminatorOutput direct = d.scale(1).forward(avg_pool2(x), avg_pool2(y), Mode::Eval);
  EXPECT_EQ(out[1].map, direct.map);
  EXPECT_EQ(out[1].map.dim(2), oracle_patch_side(16, 2, 4));
}

TEST(MultiScale, SingleScaleMatchesPlainPatchGAN) {
  MultiScaleDiscriminatorSpec s;
  s.num_scales = 1;
  s.per_scale = small_disc();
  MultiScaleDiscriminator ms(s, 6, 33);
  PatchDiscriminator single(s.per_scale, 6, 33, "disc.scale1");
  std::mt19937_64 rng(34);
  const Tensor x = random_tensor({1, 3, 16, 16}, rng), y = random_tensor({1, 3, 16, 16}, rng);
  EXPECT_EQ(ms.forward(x, y, Mode::Eval)[0].map, single.forward(x, y, Mode::Eval).map);
}

TEST(MultiScale, TargetGradientMatchesFiniteDifferences) {
  MultiScaleDiscriminatorSpec s;
  s.per_scale = small_disc();
  MultiScaleDiscriminator d(s, 6, 35);
  std::mt19937_64 rng(36);
  const Tensor x = random_tensor({1, 3, 32, 32}, rng);
  Tensor y = random_tensor({1, 3, 32, 32}, rng);
  ScaleOutputs out = d.forward(x, y, Mode::Train);
  std::vector<Tensor> probes;
  for (const auto& o : out) probes.push_back(random_tensor(o.map.shape(), rng));
  auto loss = [&] {
    const ScaleOutputs o = d.forward(x, y, Mode::Train);
    double a = 0.0;
    for (std::size_t k = 0; k < o.size(); ++k) a += dot(probes[k], o[k].map);
    return a;
  };
  loss();
  const Tensor gy = d.backward_to_target(probes, nullptr, 3);
  ASSERT_EQ(gy.shape(), y.shape());
  check_input_gradient(y, gy, loss, 13);
}
