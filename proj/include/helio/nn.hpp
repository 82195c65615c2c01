#pragma once

// Minimal layer library with explicit forward/backward. Each layer caches what
// its backward pass needs from the most recent forward call, so a forward must
// be followed by at most one backward before the next forward.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "helio/kernels.hpp"
#include "helio/tensor.hpp"

namespace helio::nn {

enum class Mode { Train, Eval };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Non-trainable state that still belongs in a checkpoint (running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

struct ParameterRefs {
  std::vector<Parameter*> params;
  std::vector<Buffer*> buffers;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(ParameterRefs& refs) = 0;

  ParameterRefs parameters() {
    ParameterRefs refs;
    collect(refs);
    return refs;
  }
  void zero_grad();
};

using Rng = std::mt19937_64;

class Conv2d final : public Module {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, std::size_t stride, std::size_t pad, bool bias, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y, bool want_grad_x = true);
  void collect(ParameterRefs& refs) override;

  Parameter& weight() { return weight_; }
  std::size_t out_channels() const { return weight_.value.dim(0); }

 private:
  Parameter weight_;
  Parameter bias_;
  kernels::ConvParams params_;
  Tensor input_;
};

class ConvTranspose2d final : public Module {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                  std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t output_pad,
                  bool bias, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y, bool want_grad_x = true);
  void collect(ParameterRefs& refs) override;

 private:
  Parameter weight_;
  Parameter bias_;
  kernels::ConvParams params_;
  Tensor input_;
};

enum class NormKind { Batch, Instance };

// Batch norm normalizes each channel over (N, H, W) and keeps running
// statistics for eval mode; instance norm normalizes each (n, c) plane over
// (H, W) in both modes.
class Norm2d final : public Module {
 public:
  Norm2d() = default;
  Norm2d(const std::string& name, NormKind kind, std::size_t channels, Rng& rng);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_y);
  void collect(ParameterRefs& refs) override;

  static constexpr float kEps = 1e-5f;
  static constexpr float kMomentum = 0.1f;

 private:
  NormKind kind_ = NormKind::Batch;
  Parameter gamma_;
  Parameter beta_;
  Buffer running_mean_;
  Buffer running_var_;
  Tensor normalized_;
  std::vector<float> inv_std_;  // per statistics group
  bool used_batch_stats_ = true;
};

enum class Activation { Identity, Relu, LeakyRelu, Tanh, Sigmoid };

class Act {
 public:
  Act() = default;
  explicit Act(Activation kind, float slope = 0.2f) : kind_(kind), slope_(slope) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_y) const;
  Activation kind() const { return kind_; }

 private:
  Activation kind_ = Activation::Identity;
  float slope_ = 0.2f;
  Tensor cache_;  // input for rectifiers, output for squashing functions
};

class Dropout {
 public:
  Dropout() = default;
  Dropout(float rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_y) const;

 private:
  float rate_ = 0.0f;
  Rng rng_;
  std::vector<float> mask_;
};

struct AdamConfig {
  float learning_rate = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step();
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t t_ = 0;
};

// Fills a tensor with N(mean, stddev) draws.
void init_normal(Tensor& t, float mean, float stddev, Rng& rng);

}  // namespace helio::nn
