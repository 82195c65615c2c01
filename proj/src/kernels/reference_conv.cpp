// Direct-loop convolutions. Slow and serial; these exist to check the
// im2col/GEMM path and as the benchmark baseline.

#include "helio/kernels.hpp"

namespace helio::kernels::reference {
namespace {

inline bool inside(std::ptrdiff_t v, std::size_t bound) {
  return v >= 0 && v < static_cast<std::ptrdiff_t>(bound);
}

inline std::ptrdiff_t tap(std::size_t out, std::size_t k, ConvParams p) {
  return static_cast<std::ptrdiff_t>(out * p.stride + k) - static_cast<std::ptrdiff_t>(p.pad);
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvParams p) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  const std::size_t oh = conv_out_size(h, k, p.stride, p.pad);
  const std::size_t ow = conv_out_size(w, k, p.stride, p.pad);
  Tensor y({n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto yy = tap(i, ki, p), xx = tap(j, kj, p);
                if (!inside(yy, h) || !inside(xx, w)) continue;
                acc += static_cast<double>(weight.at(o, c, ki, kj)) *
                       x.at(b, c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
              }
          y.at(b, o, i, j) = static_cast<float>(acc);
        }
  return y;
}

Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, ConvParams p,
                       Tensor& grad_weight, Tensor* grad_bias, bool want_grad_x) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  const std::size_t oh = grad_y.dim(2), ow = grad_y.dim(3);
  TensorD gx(x.shape());
  TensorD gw(weight.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const double g = grad_y.at(b, o, i, j);
          if (grad_bias) (*grad_bias)[o] += static_cast<float>(g);
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto yy = tap(i, ki, p), xx = tap(j, kj, p);
                if (!inside(yy, h) || !inside(xx, w)) continue;
                const auto uy = static_cast<std::size_t>(yy), ux = static_cast<std::size_t>(xx);
                gw.at(o, c, ki, kj) += g * x.at(b, c, uy, ux);
                gx.at(b, c, uy, ux) += g * weight.at(o, c, ki, kj);
              }
        }
  for (std::size_t q = 0; q < gw.size(); ++q) grad_weight[q] += static_cast<float>(gw[q]);
  return want_grad_x ? tensor_cast<float>(gx) : Tensor{};
}

Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                                ConvParams p) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = conv_transpose_out_size(h, k, p.stride, p.pad, p.output_pad);
  const std::size_t ow = conv_transpose_out_size(w, k, p.stride, p.pad, p.output_pad);
  TensorD y({n, cout, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double v = x.at(b, c, i, j);
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto yy = tap(i, ki, p), xx = tap(j, kj, p);
                if (!inside(yy, oh) || !inside(xx, ow)) continue;
                y.at(b, o, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) +=
                    v * weight.at(c, o, ki, kj);
              }
        }
  if (!bias.empty()) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t q = 0; q < oh * ow; ++q) y[(b * cout + o) * oh * ow + q] += bias[o];
  }
  return tensor_cast<float>(y);
}

Tensor conv_transpose2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y,
                                 ConvParams p, Tensor& grad_weight, Tensor* grad_bias,
                                 bool want_grad_x) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = grad_y.dim(2), ow = grad_y.dim(3);
  TensorD gx(x.shape());
  TensorD gw(weight.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto yy = tap(i, ki, p), xx = tap(j, kj, p);
                if (!inside(yy, oh) || !inside(xx, ow)) continue;
                const double g =
                    grad_y.at(b, o, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                gx.at(b, c, i, j) += g * weight.at(c, o, ki, kj);
                gw.at(c, o, ki, kj) += g * x.at(b, c, i, j);
              }
  if (grad_bias) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = 0.0;
        for (std::size_t q = 0; q < oh * ow; ++q) acc += grad_y[(b * cout + o) * oh * ow + q];
        (*grad_bias)[o] += static_cast<float>(acc);
      }
  }
  for (std::size_t q = 0; q < gw.size(); ++q) grad_weight[q] += static_cast<float>(gw[q]);
  return want_grad_x ? tensor_cast<float>(gx) : Tensor{};
}

}  // namespace helio::kernels::reference
