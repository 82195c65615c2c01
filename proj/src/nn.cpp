#include "helio/nn.hpp"

#include <cmath>

namespace helio::nn {

void Module::zero_grad() {
  for (Parameter* p : parameters().params) p->grad.zero();
}

void init_normal(Tensor& t, float mean, float stddev, Rng& rng) {
  std::normal_distribution<float> dist(mean, stddev);
  for (float& v : t.values()) v = dist(rng);
}

namespace {

Parameter make_param(const std::string& name, Shape shape) {
  Parameter p{name, Tensor(shape), Tensor(shape)};
  return p;
}

void push(ParameterRefs& refs, Parameter& p) {
  if (!p.value.empty()) refs.params.push_back(&p);
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t pad, bool bias, Rng& rng)
    : weight_(make_param(name + ".weight", {out_channels, in_channels, kernel, kernel})),
      params_{stride, pad, 0} {
  init_normal(weight_.value, 0.0f, 0.02f, rng);
  if (bias) bias_ = make_param(name + ".bias", {out_channels});
}

Tensor Conv2d::forward(const Tensor& x) {
  input_ = x;
  return kernels::conv2d_forward(x, weight_.value, bias_.value, params_);
}

Tensor Conv2d::backward(const Tensor& grad_y, bool want_grad_x) {
  return kernels::conv2d_backward(input_, weight_.value, grad_y, params_, weight_.grad,
                                  bias_.value.empty() ? nullptr : &bias_.grad, want_grad_x);
}

void Conv2d::collect(ParameterRefs& refs) {
  push(refs, weight_);
  push(refs, bias_);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(const std::string& name, std::size_t in_channels,
                                 std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                 std::size_t pad, std::size_t output_pad, bool bias, Rng& rng)
    : weight_(make_param(name + ".weight", {in_channels, out_channels, kernel, kernel})),
      params_{stride, pad, output_pad} {
  init_normal(weight_.value, 0.0f, 0.02f, rng);
  if (bias) bias_ = make_param(name + ".bias", {out_channels});
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  input_ = x;
  return kernels::conv_transpose2d_forward(x, weight_.value, bias_.value, params_);
}

Tensor ConvTranspose2d::backward(const Tensor& grad_y, bool want_grad_x) {
  return kernels::conv_transpose2d_backward(input_, weight_.value, grad_y, params_, weight_.grad,
                                            bias_.value.empty() ? nullptr : &bias_.grad,
                                            want_grad_x);
}

void ConvTranspose2d::collect(ParameterRefs& refs) {
  push(refs, weight_);
  push(refs, bias_);
}

// ---------------------------------------------------------------- Norm2d

Norm2d::Norm2d(const std::string& name, NormKind kind, std::size_t channels, Rng& rng)
    : kind_(kind),
      gamma_(make_param(name + ".gamma", {channels})),
      beta_(make_param(name + ".beta", {channels})) {
  init_normal(gamma_.value, 1.0f, 0.02f, rng);
  if (kind == NormKind::Batch) {
    running_mean_ = {name + ".running_mean", Tensor({channels}, 0.0f)};
    running_var_ = {name + ".running_var", Tensor({channels}, 1.0f)};
  }
}

namespace {

// Statistics groups: batch norm groups the planes (n, c) by c; instance norm
// treats each plane as its own group.
struct GroupLayout {
  std::size_t groups;
  std::size_t planes_per_group;
  std::size_t n, c, hw;

  std::size_t plane(std::size_t g, std::size_t k, NormKind kind) const {
    return kind == NormKind::Batch ? k * c + g : g;
  }
  std::size_t channel(std::size_t g, NormKind kind) const {
    return kind == NormKind::Batch ? g : g % c;
  }
};

GroupLayout layout_for(const Tensor& x, NormKind kind) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (kind == NormKind::Batch) return {c, n, n, c, hw};
  return {n * c, 1, n, c, hw};
}

}  // namespace

Tensor Norm2d::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != gamma_.value.size()) {
    throw Error(ErrorKind::ShapeMismatch, "Norm2d channel count mismatch");
  }
  const GroupLayout L = layout_for(x, kind_);
  used_batch_stats_ = !(kind_ == NormKind::Batch && mode == Mode::Eval);
  normalized_ = Tensor(x.shape());
  inv_std_.assign(L.groups, 0.0f);
  Tensor y(x.shape());

#pragma omp parallel for schedule(static)
  for (std::size_t g = 0; g < L.groups; ++g) {
    const std::size_t ch = L.channel(g, kind_);
    double mean = 0.0, var = 0.0;
    const std::size_t count = L.planes_per_group * L.hw;
    if (used_batch_stats_) {
      for (std::size_t k = 0; k < L.planes_per_group; ++k) {
        const float* p = x.data() + L.plane(g, k, kind_) * L.hw;
        for (std::size_t q = 0; q < L.hw; ++q) mean += p[q];
      }
      mean /= static_cast<double>(count);
      for (std::size_t k = 0; k < L.planes_per_group; ++k) {
        const float* p = x.data() + L.plane(g, k, kind_) * L.hw;
        for (std::size_t q = 0; q < L.hw; ++q) {
          const double d = p[q] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      if (kind_ == NormKind::Batch && mode == Mode::Train) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        running_mean_.value[ch] =
            (1.0f - kMomentum) * running_mean_.value[ch] + kMomentum * static_cast<float>(mean);
        running_var_.value[ch] = (1.0f - kMomentum) * running_var_.value[ch] +
                                 kMomentum * static_cast<float>(unbiased);
      }
    } else {
      mean = running_mean_.value[ch];
      var = running_var_.value[ch];
    }
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var + kEps));
    inv_std_[g] = inv_std;
    const float m = static_cast<float>(mean);
    const float gamma = gamma_.value[ch], beta = beta_.value[ch];
    for (std::size_t k = 0; k < L.planes_per_group; ++k) {
      const std::size_t off = L.plane(g, k, kind_) * L.hw;
      const float* p = x.data() + off;
      float* xh = normalized_.data() + off;
      float* out = y.data() + off;
      for (std::size_t q = 0; q < L.hw; ++q) {
        xh[q] = (p[q] - m) * inv_std;
        out[q] = gamma * xh[q] + beta;
      }
    }
  }
  return y;
}

Tensor Norm2d::backward(const Tensor& grad_y) {
  const GroupLayout L = layout_for(grad_y, kind_);
  Tensor grad_x(grad_y.shape());
  std::vector<double> dgamma(L.groups, 0.0), dbeta(L.groups, 0.0);

#pragma omp parallel for schedule(static)
  for (std::size_t g = 0; g < L.groups; ++g) {
    const std::size_t ch = L.channel(g, kind_);
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t k = 0; k < L.planes_per_group; ++k) {
      const std::size_t off = L.plane(g, k, kind_) * L.hw;
      const float* gy = grad_y.data() + off;
      const float* xh = normalized_.data() + off;
      for (std::size_t q = 0; q < L.hw; ++q) {
        sum_g += gy[q];
        sum_gx += static_cast<double>(gy[q]) * xh[q];
      }
    }
    dgamma[g] = sum_gx;
    dbeta[g] = sum_g;
    const double count = static_cast<double>(L.planes_per_group * L.hw);
    const double scale = static_cast<double>(gamma_.value[ch]) * inv_std_[g];
    const double mean_g = sum_g / count, mean_gx = sum_gx / count;
    for (std::size_t k = 0; k < L.planes_per_group; ++k) {
      const std::size_t off = L.plane(g, k, kind_) * L.hw;
      const float* gy = grad_y.data() + off;
      const float* xh = normalized_.data() + off;
      float* gx = grad_x.data() + off;
      if (used_batch_stats_) {
        for (std::size_t q = 0; q < L.hw; ++q) {
          gx[q] = static_cast<float>(scale * (gy[q] - mean_g - xh[q] * mean_gx));
        }
      } else {
        for (std::size_t q = 0; q < L.hw; ++q) gx[q] = static_cast<float>(scale * gy[q]);
      }
    }
  }
  for (std::size_t g = 0; g < L.groups; ++g) {
    const std::size_t ch = L.channel(g, kind_);
    gamma_.grad[ch] += static_cast<float>(dgamma[g]);
    beta_.grad[ch] += static_cast<float>(dbeta[g]);
  }
  return grad_x;
}

void Norm2d::collect(ParameterRefs& refs) {
  push(refs, gamma_);
  push(refs, beta_);
  if (!running_mean_.value.empty()) {
    refs.buffers.push_back(&running_mean_);
    refs.buffers.push_back(&running_var_);
  }
}

// ------------------------------------------------------------ activations

Tensor Act::forward(const Tensor& x) {
  Tensor y(x.shape());
  const float* in = x.data();
  float* out = y.data();
  const std::size_t n = x.size();
  switch (kind_) {
    case Activation::Identity:
      y = x;
      break;
    case Activation::Relu:
#pragma omp parallel for simd schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
      break;
    case Activation::LeakyRelu: {
      const float s = slope_;
#pragma omp parallel for simd schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : s * in[i];
      break;
    }
    case Activation::Tanh:
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
      break;
    case Activation::Sigmoid:
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-in[i]));
      break;
  }
  cache_ = (kind_ == Activation::Tanh || kind_ == Activation::Sigmoid) ? y : x;
  return y;
}

Tensor Act::backward(const Tensor& grad_y) const {
  Tensor g(grad_y.shape());
  const float* gy = grad_y.data();
  const float* c = cache_.data();
  float* out = g.data();
  const std::size_t n = grad_y.size();
  switch (kind_) {
    case Activation::Identity:
      return grad_y;
    case Activation::Relu:
#pragma omp parallel for simd schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = c[i] > 0.0f ? gy[i] : 0.0f;
      break;
    case Activation::LeakyRelu: {
      const float s = slope_;
#pragma omp parallel for simd schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = c[i] > 0.0f ? gy[i] : s * gy[i];
      break;
    }
    case Activation::Tanh:
#pragma omp parallel for simd schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = gy[i] * (1.0f - c[i] * c[i]);
      break;
    case Activation::Sigmoid:
#pragma omp parallel for simd schedule(static)
      for (std::size_t i = 0; i < n; ++i) out[i] = gy[i] * c[i] * (1.0f - c[i]);
      break;
  }
  return g;
}

// ---------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::Eval || rate_ <= 0.0f) {
    mask_.clear();
    return x;
  }
  // Inverted dropout: kept activations are scaled so eval mode needs no rescale.
  const float keep_scale = 1.0f / (1.0f - rate_);
  std::bernoulli_distribution keep(1.0 - rate_);
  mask_.resize(x.size());
  for (float& m : mask_) m = keep(rng_) ? keep_scale : 0.0f;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask_[i];
  return y;
}

Tensor Dropout::backward(const Tensor& grad_y) const {
  if (mask_.empty()) return grad_y;
  Tensor g(grad_y.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_y[i] * mask_[i];
  return g;
}

// ------------------------------------------------------------------- Adam

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  const float step_size = static_cast<float>(cfg_.learning_rate / bc1);
  const float inv_bc2_sqrt = static_cast<float>(1.0 / std::sqrt(bc2));
  const float b1 = cfg_.beta1, b2 = cfg_.beta2, eps = cfg_.eps;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* w = params_[i]->value.data();
    const float* g = params_[i]->grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    const std::size_t n = params_[i]->value.size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t q = 0; q < n; ++q) {
      m[q] = b1 * m[q] + (1.0f - b1) * g[q];
      v[q] = b2 * v[q] + (1.0f - b2) * g[q] * g[q];
      const float denom = std::sqrt(v[q]) * inv_bc2_sqrt + eps;
      w[q] -= step_size * m[q] / denom;
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->grad.zero();
}

}  // namespace helio::nn
