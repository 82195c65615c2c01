#pragma once

// Adversarial, pixel-distance and feature-matching objectives with their
// analytic gradients. Templated on the scalar type: training runs in float,
// gradient checks run in double.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "helio/tensor.hpp"

namespace helio::losses {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

enum class AdversarialForm {
  NonSaturating,  // generator minimizes -log d(x, g(x))
  Minimax,        // generator minimizes log(1 - d(x, g(x)))
};

enum class FeatureMatchingNorm {
  PerLayerMean,  // each layer's L1 sum divided by its element count
  Sum,           // plain L1 sums
};

struct LossWeights {
  double lambda_l1 = 100.0;
  double lambda_fm = 10.0;

  void validate() const {
    if (!(lambda_l1 >= 0.0) || !(lambda_fm >= 0.0)) {
      throw Error(ErrorKind::InvalidSpec, "loss weights must be >= 0");
    }
  }
};

struct LossBundle {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_pixel_or_fm = 0.0;  // L1 term for pix2pix, feature matching for pix2pixhd
  double g_total = 0.0;
};

template <typename T>
using Maps = std::vector<BasicTensor<T>>;
// Per scale, one tensor per discriminator layer.
template <typename T>
using FeatureStack = std::vector<std::vector<BasicTensor<T>>>;

namespace detail {

template <typename T>
void check_probabilities(const BasicTensor<T>& m) {
  for (const T v : m.values()) {
    if (!(v >= T(0) && v <= T(1))) {
      throw Error(ErrorKind::DomainError,
                  "discriminator output " + std::to_string(static_cast<double>(v)) +
                      " outside [0, 1]");
    }
  }
}

template <typename T>
struct Clamped {
  T value;
  bool active;  // true when the clamp changed the value (zero derivative)
};

template <typename T>
Clamped<T> clamp_prob(T p) {
  const T lo = static_cast<T>(kProbClamp), hi = static_cast<T>(1.0 - kProbClamp);
  if (p < lo) return {lo, true};
  if (p > hi) return {hi, true};
  return {p, false};
}

template <typename T>
void prepare_grads(const Maps<T>& like, Maps<T>* grads) {
  if (!grads) return;
  grads->clear();
  for (const auto& m : like) grads->emplace_back(m.shape());
}

}  // namespace detail

// Mean over scales of  -E[log d(x,y)] - E[log(1 - d(x,g(x)))].
template <typename T>
T adversarial_d_loss(const Maps<T>& real, const Maps<T>& fake, Maps<T>* grad_real = nullptr,
                     Maps<T>* grad_fake = nullptr) {
  if (real.size() != fake.size() || real.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "real and fake map lists must be non-empty and equal length");
  }
  detail::prepare_grads(real, grad_real);
  detail::prepare_grads(fake, grad_fake);
  const double scales = static_cast<double>(real.size());
  double total = 0.0;
  for (std::size_t s = 0; s < real.size(); ++s) {
    detail::check_probabilities(real[s]);
    detail::check_probabilities(fake[s]);
    const double nr = static_cast<double>(real[s].size());
    const double nf = static_cast<double>(fake[s].size());
    double acc_r = 0.0, acc_f = 0.0;
    for (std::size_t i = 0; i < real[s].size(); ++i) {
      const auto c = detail::clamp_prob(real[s][i]);
      acc_r -= std::log(static_cast<double>(c.value));
      if (grad_real && !c.active) {
        (*grad_real)[s][i] = static_cast<T>(-1.0 / (scales * nr * static_cast<double>(c.value)));
      }
    }
    for (std::size_t i = 0; i < fake[s].size(); ++i) {
      const auto c = detail::clamp_prob(fake[s][i]);
      acc_f -= std::log(1.0 - static_cast<double>(c.value));
      if (grad_fake && !c.active) {
        (*grad_fake)[s][i] =
            static_cast<T>(1.0 / (scales * nf * (1.0 - static_cast<double>(c.value))));
      }
    }
    total += acc_r / nr + acc_f / nf;
  }
  return static_cast<T>(total / scales);
}

// Mean over scales of the generator's adversarial term.
template <typename T>
T adversarial_g_loss(const Maps<T>& fake, AdversarialForm form = AdversarialForm::NonSaturating,
                     Maps<T>* grad_fake = nullptr) {
  if (fake.empty()) throw Error(ErrorKind::ShapeMismatch, "no fake maps");
  detail::prepare_grads(fake, grad_fake);
  const double scales = static_cast<double>(fake.size());
  double total = 0.0;
  for (std::size_t s = 0; s < fake.size(); ++s) {
    detail::check_probabilities(fake[s]);
    const double n = static_cast<double>(fake[s].size());
    double acc = 0.0;
    for (std::size_t i = 0; i < fake[s].size(); ++i) {
      const auto c = detail::clamp_prob(fake[s][i]);
      const double p = static_cast<double>(c.value);
      double g;
      if (form == AdversarialForm::NonSaturating) {
        acc -= std::log(p);
        g = -1.0 / p;
      } else {
        acc += std::log(1.0 - p);
        g = -1.0 / (1.0 - p);
      }
      if (grad_fake && !c.active) (*grad_fake)[s][i] = static_cast<T>(g / (scales * n));
    }
    total += acc / n;
  }
  return static_cast<T>(total / scales);
}

// Mean absolute difference.
template <typename T>
T l1_pixel_loss(const BasicTensor<T>& generated, const BasicTensor<T>& target,
                BasicTensor<T>* grad_generated = nullptr) {
  require_same_shape(generated.shape(), target.shape(), "l1_pixel_loss");
  const double n = static_cast<double>(generated.size());
  if (grad_generated) *grad_generated = BasicTensor<T>(generated.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const double d = static_cast<double>(generated[i]) - static_cast<double>(target[i]);
    acc += std::abs(d);
    if (grad_generated) (*grad_generated)[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n);
  }
  return static_cast<T>(acc / n);
}

// Per scale: sum over layers of (1/N_i) * ||real_i - fake_i||_1, averaged over
// scales. Real features are constants; the gradient is taken w.r.t. fake.
template <typename T>
T feature_matching_loss(const FeatureStack<T>& real, const FeatureStack<T>& fake,
                        FeatureMatchingNorm norm = FeatureMatchingNorm::PerLayerMean,
                        FeatureStack<T>* grad_fake = nullptr) {
  if (real.size() != fake.size() || real.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "feature stacks must be non-empty with one entry per scale");
  }
  if (grad_fake) grad_fake->assign(fake.size(), {});
  const double scales = static_cast<double>(real.size());
  double total = 0.0;
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].size() != fake[s].size()) {
      throw Error(ErrorKind::ShapeMismatch, "feature lists differ in layer count");
    }
    for (std::size_t l = 0; l < real[s].size(); ++l) {
      const auto& r = real[s][l];
      const auto& f = fake[s][l];
      require_same_shape(r.shape(), f.shape(), "feature_matching_loss");
      const double scale = norm == FeatureMatchingNorm::PerLayerMean ? 1.0 / static_cast<double>(r.size()) : 1.0;
      double acc = 0.0;
      BasicTensor<T> g;
      if (grad_fake) g = BasicTensor<T>(f.shape());
      for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = static_cast<double>(f[i]) - static_cast<double>(r[i]);
        acc += std::abs(d);
        if (grad_fake) g[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * scale / scales);
      }
      total += acc * scale;
      if (grad_fake) (*grad_fake)[s].push_back(std::move(g));
    }
  }
  return static_cast<T>(total / scales);
}

template <typename T>
struct Pix2PixGrads {
  Maps<T> fake_maps;
  BasicTensor<T> generated;
};

// g_total = g_adv + lambda_l1 * L1.
template <typename T>
LossBundle pix2pix_generator_objective(const Maps<T>& fake_maps, const BasicTensor<T>& generated,
                                       const BasicTensor<T>& target, const LossWeights& w,
                                       AdversarialForm form = AdversarialForm::NonSaturating,
                                       Pix2PixGrads<T>* grads = nullptr) {
  w.validate();
  LossBundle b;
  b.g_adv = adversarial_g_loss(fake_maps, form, grads ? &grads->fake_maps : nullptr);
  b.g_pixel_or_fm = l1_pixel_loss(generated, target, grads ? &grads->generated : nullptr);
  b.g_total = b.g_adv + w.lambda_l1 * b.g_pixel_or_fm;
  if (grads) {
    for (auto& v : grads->generated.values()) v = static_cast<T>(v * w.lambda_l1);
  }
  return b;
}

template <typename T>
struct Pix2PixHDGrads {
  Maps<T> fake_maps;          // per scale
  FeatureStack<T> fake_features;
};

// Generator total = sum_k adv_g(scale k) + lambda_fm * sum_k FM(scale k).
// d_loss = sum_k adv_d(scale k). Feature-matching gradients reach only the
// fake branch.
template <typename T>
LossBundle pix2pixhd_objective(const Maps<T>& real_maps, const FeatureStack<T>& real_features,
                               const Maps<T>& fake_maps, const FeatureStack<T>& fake_features,
                               const LossWeights& w,
                               AdversarialForm form = AdversarialForm::NonSaturating,
                               FeatureMatchingNorm norm = FeatureMatchingNorm::PerLayerMean,
                               Pix2PixHDGrads<T>* grads = nullptr) {
  w.validate();
  const std::size_t scales = fake_maps.size();
  if (real_maps.size() != scales || real_features.size() != scales ||
      fake_features.size() != scales) {
    throw Error(ErrorKind::ShapeMismatch, "pix2pixhd objective needs matching per-scale inputs");
  }
  LossBundle b;
  if (grads) {
    grads->fake_maps.clear();
    grads->fake_features.clear();
  }
  for (std::size_t k = 0; k < scales; ++k) {
    const Maps<T> rm{real_maps[k]}, fm{fake_maps[k]};
    b.d_loss += adversarial_d_loss(rm, fm);
    Maps<T> gm;
    b.g_adv += adversarial_g_loss(fm, form, grads ? &gm : nullptr);
    FeatureStack<T> gf;
    b.g_pixel_or_fm += feature_matching_loss(FeatureStack<T>{real_features[k]},
                                             FeatureStack<T>{fake_features[k]}, norm,
                                             grads ? &gf : nullptr);
    if (grads) {
      grads->fake_maps.push_back(std::move(gm[0]));
      for (auto& t : gf[0]) {
        for (auto& v : t.values()) v = static_cast<T>(v * w.lambda_fm);
      }
      grads->fake_features.push_back(std::move(gf[0]));
    }
  }
  b.g_total = b.g_adv + w.lambda_fm * b.g_pixel_or_fm;
  return b;
}

std::string to_string(AdversarialForm form);
AdversarialForm parse_adversarial_form(const std::string& s);
std::string to_string(FeatureMatchingNorm norm);
FeatureMatchingNorm parse_feature_matching_norm(const std::string& s);

}  // namespace helio::losses
