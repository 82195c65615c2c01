#include <vector>

#include "helio/kernels.hpp"

namespace helio::kernels {

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) {
    throw Error(ErrorKind::ShapeMismatch,
                "input side " + std::to_string(in) + " too small for kernel " +
                    std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t conv_transpose_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                    std::size_t pad, std::size_t output_pad) {
  return (in - 1) * stride + kernel + output_pad - 2 * pad;
}

void im2col(const float* image, const ConvGeometry& g, float* col) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t rows = g.channels * kk;
  const std::size_t cols = g.out_h * g.out_w;
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h);
  const auto iw = static_cast<std::ptrdiff_t>(g.in_w);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = r / kk;
    const auto ki = static_cast<std::ptrdiff_t>((r % kk) / g.kernel);
    const auto kj = static_cast<std::ptrdiff_t>(r % g.kernel);
    const float* plane = image + c * g.in_h * g.in_w;
    float* dst = col + r * cols;
    for (std::size_t oi = 0; oi < g.out_h; ++oi) {
      const std::ptrdiff_t y =
          static_cast<std::ptrdiff_t>(oi * g.stride) - static_cast<std::ptrdiff_t>(g.pad) + ki;
      float* row = dst + oi * g.out_w;
      if (y < 0 || y >= ih) {
        for (std::size_t oj = 0; oj < g.out_w; ++oj) row[oj] = 0.0f;
        continue;
      }
      const float* src = plane + y * iw;
      for (std::size_t oj = 0; oj < g.out_w; ++oj) {
        const std::ptrdiff_t x =
            static_cast<std::ptrdiff_t>(oj * g.stride) - static_cast<std::ptrdiff_t>(g.pad) + kj;
        row[oj] = (x >= 0 && x < iw) ? src[x] : 0.0f;
      }
    }
  }
}

void col2im(const float* col, const ConvGeometry& g, float* image) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t cols = g.out_h * g.out_w;
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h);
  const auto iw = static_cast<std::ptrdiff_t>(g.in_w);
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < g.channels; ++c) {
    float* plane = image + c * g.in_h * g.in_w;
    for (std::size_t q = 0; q < kk; ++q) {
      const auto ki = static_cast<std::ptrdiff_t>(q / g.kernel);
      const auto kj = static_cast<std::ptrdiff_t>(q % g.kernel);
      const float* src = col + (c * kk + q) * cols;
      for (std::size_t oi = 0; oi < g.out_h; ++oi) {
        const std::ptrdiff_t y =
            static_cast<std::ptrdiff_t>(oi * g.stride) - static_cast<std::ptrdiff_t>(g.pad) + ki;
        if (y < 0 || y >= ih) continue;
        float* dst = plane + y * iw;
        const float* row = src + oi * g.out_w;
        for (std::size_t oj = 0; oj < g.out_w; ++oj) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(oj * g.stride) -
                                   static_cast<std::ptrdiff_t>(g.pad) + kj;
          if (x >= 0 && x < iw) dst[x] += row[oj];
        }
      }
    }
  }
}

namespace {

void check_conv_args(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::size_t weight_in_axis, std::size_t weight_out_axis) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw Error(ErrorKind::ShapeMismatch, "convolution expects NCHW input and square kernels");
  }
  if (x.dim(1) != weight.dim(weight_in_axis)) {
    throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(x.dim(1)) +
                                              " channels, weight expects " +
                                              std::to_string(weight.dim(weight_in_axis)));
  }
  if (!bias.empty() && bias.size() != weight.dim(weight_out_axis)) {
    throw Error(ErrorKind::ShapeMismatch, "bias length does not match output channels");
  }
}

void add_bias(Tensor& y, const Tensor& bias) {
  if (bias.empty()) return;
  const std::size_t n = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < c; ++o) {
      float* p = y.data() + (i * c + o) * hw;
      const float b = bias[o];
      for (std::size_t q = 0; q < hw; ++q) p[q] += b;
    }
  }
}

void accumulate_bias_grad(const Tensor& grad_y, Tensor& grad_bias) {
  const std::size_t n = grad_y.dim(0), c = grad_y.dim(1), hw = grad_y.dim(2) * grad_y.dim(3);
#pragma omp parallel for schedule(static)
  for (std::size_t o = 0; o < c; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = grad_y.data() + (i * c + o) * hw;
      for (std::size_t q = 0; q < hw; ++q) acc += p[q];
    }
    grad_bias[o] += static_cast<float>(acc);
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvParams p) {
  check_conv_args(x, weight, bias, 1, 0);
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weight.dim(0), k = weight.dim(2);
  const ConvGeometry g{cin,
                       x.dim(2),
                       x.dim(3),
                       conv_out_size(x.dim(2), k, p.stride, p.pad),
                       conv_out_size(x.dim(3), k, p.stride, p.pad),
                       k,
                       p.stride,
                       p.pad};
  const std::size_t rows = cin * k * k, hw = g.out_h * g.out_w;
  Tensor y({n, cout, g.out_h, g.out_w});
  std::vector<float> col(rows * hw);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.data() + i * cin * g.in_h * g.in_w, g, col.data());
    gemm(Trans::No, Trans::No, cout, hw, rows, weight.data(), rows, col.data(), hw, 0.0f,
         y.data() + i * cout * hw, hw);
  }
  add_bias(y, bias);
  return y;
}

Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, ConvParams p,
                       Tensor& grad_weight, Tensor* grad_bias, bool want_grad_x) {
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weight.dim(0), k = weight.dim(2);
  const ConvGeometry g{cin, x.dim(2), x.dim(3), grad_y.dim(2), grad_y.dim(3), k, p.stride, p.pad};
  const std::size_t rows = cin * k * k, hw = g.out_h * g.out_w;
  std::vector<float> col(rows * hw);
  Tensor grad_x;
  if (want_grad_x) grad_x = Tensor(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const float* gy = grad_y.data() + i * cout * hw;
    im2col(x.data() + i * cin * g.in_h * g.in_w, g, col.data());
    gemm(Trans::No, Trans::Yes, cout, rows, hw, gy, hw, col.data(), hw, 1.0f, grad_weight.data(),
         rows);
    if (want_grad_x) {
      gemm(Trans::Yes, Trans::No, rows, hw, cout, weight.data(), rows, gy, hw, 0.0f, col.data(),
           hw);
      col2im(col.data(), g, grad_x.data() + i * cin * g.in_h * g.in_w);
    }
  }
  if (grad_bias) accumulate_bias_grad(grad_y, *grad_bias);
  return grad_x;
}

Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                                ConvParams p) {
  check_conv_args(x, weight, bias, 0, 1);
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = conv_transpose_out_size(x.dim(2), k, p.stride, p.pad, p.output_pad);
  const std::size_t ow = conv_transpose_out_size(x.dim(3), k, p.stride, p.pad, p.output_pad);
  // The transposed convolution is the adjoint of a convolution from the
  // output grid back onto the input grid.
  const ConvGeometry g{cout, oh, ow, x.dim(2), x.dim(3), k, p.stride, p.pad};
  const std::size_t rows = cout * k * k, hw = x.dim(2) * x.dim(3);
  Tensor y({n, cout, oh, ow});
  std::vector<float> col(rows * hw);
  for (std::size_t i = 0; i < n; ++i) {
    gemm(Trans::Yes, Trans::No, rows, hw, cin, weight.data(), rows, x.data() + i * cin * hw, hw,
         0.0f, col.data(), hw);
    col2im(col.data(), g, y.data() + i * cout * oh * ow);
  }
  add_bias(y, bias);
  return y;
}

Tensor conv_transpose2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y,
                                 ConvParams p, Tensor& grad_weight, Tensor* grad_bias,
                                 bool want_grad_x) {
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = grad_y.dim(2), ow = grad_y.dim(3);
  const ConvGeometry g{cout, oh, ow, x.dim(2), x.dim(3), k, p.stride, p.pad};
  const std::size_t rows = cout * k * k, hw = x.dim(2) * x.dim(3);
  std::vector<float> col(rows * hw);
  Tensor grad_x;
  if (want_grad_x) grad_x = Tensor(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    im2col(grad_y.data() + i * cout * oh * ow, g, col.data());
    const float* xi = x.data() + i * cin * hw;
    gemm(Trans::No, Trans::Yes, cin, rows, hw, xi, hw, col.data(), hw, 1.0f, grad_weight.data(),
         rows);
    if (want_grad_x) {
      gemm(Trans::No, Trans::No, cin, hw, rows, weight.data(), rows, col.data(), hw, 0.0f,
           grad_x.data() + i * cin * hw, hw);
    }
  }
  if (grad_bias) accumulate_bias_grad(grad_y, *grad_bias);
  return grad_x;
}

}  // namespace helio::kernels
