#pragma once

// Compute kernels behind the network layers. The top-level namespace holds the
// OpenMP-parallel implementations (packed GEMM + im2col); `reference` holds
// direct serial loops used as test oracles and benchmark baselines.

#include <cstddef>

#include "helio/tensor.hpp"

namespace helio::kernels {

enum class Trans { No, Yes };

// C = beta * C + op(A) * op(B), row-major. op(A) is M x K, op(B) is K x N.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);

// Geometry of a strided, zero-padded square-kernel convolution from an
// (channels, in_h, in_w) image to an (out_h, out_w) grid.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);
std::size_t conv_transpose_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                    std::size_t pad, std::size_t output_pad);

// col has shape (channels * kernel * kernel, out_h * out_w).
void im2col(const float* image, const ConvGeometry& g, float* col);
// Adjoint of im2col; accumulates into image.
void col2im(const float* col, const ConvGeometry& g, float* image);

struct ConvParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t output_pad = 0;  // transposed convolution only
};

// x: (N, Cin, H, W); weight: (Cout, Cin, k, k); bias: (Cout) or empty.
Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvParams p);
// Accumulates into grad_weight / grad_bias (if non-null); returns grad_x when wanted.
Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, ConvParams p,
                       Tensor& grad_weight, Tensor* grad_bias, bool want_grad_x);

// x: (N, Cin, H, W); weight: (Cin, Cout, k, k); bias: (Cout) or empty.
Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                                ConvParams p);
Tensor conv_transpose2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y,
                                 ConvParams p, Tensor& grad_weight, Tensor* grad_bias,
                                 bool want_grad_x);

namespace reference {

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvParams p);
Tensor conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, ConvParams p,
                       Tensor& grad_weight, Tensor* grad_bias, bool want_grad_x);
Tensor conv_transpose2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias,
                                ConvParams p);
Tensor conv_transpose2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y,
                                 ConvParams p, Tensor& grad_weight, Tensor* grad_bias,
                                 bool want_grad_x);

}  // namespace reference

}  // namespace helio::kernels
