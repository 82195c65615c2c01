#include "helio/tensor.hpp"

#include <cstring>

namespace helio {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

void require_same_shape(const Shape& a, const Shape& b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3)) {
    throw Error(ErrorKind::ShapeMismatch,
                "concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ca + cb) * hw, a.data() + i * ca * hw, ca * hw * sizeof(float));
    std::memcpy(out.data() + (i * (ca + cb) + ca) * hw, b.data() + i * cb * hw,
                cb * hw * sizeof(float));
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t channels_a) {
  const std::size_t n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  if (channels_a > c) throw Error(ErrorKind::ShapeMismatch, "split_channels: too many channels");
  const std::size_t cb = c - channels_a;
  Tensor a({n, channels_a, t.dim(2), t.dim(3)});
  Tensor b({n, cb, t.dim(2), t.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(a.data() + i * channels_a * hw, t.data() + i * c * hw,
                channels_a * hw * sizeof(float));
    std::memcpy(b.data() + i * cb * hw, t.data() + (i * c + channels_a) * hw,
                cb * hw * sizeof(float));
  }
  return {std::move(a), std::move(b)};
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2) {
    throw Error(ErrorKind::ShapeMismatch, "avg_pool2 needs even spatial dims, got " +
                                              shape_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Tensor out({x.dim(0), x.dim(1), h, w});
  const std::size_t iw = x.dim(3);
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.data() + p * 4 * h * w;
    float* dst = out.data() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const float* q = src + 2 * i * iw + 2 * j;
        dst[i * w + j] = 0.25f * (q[0] + q[1] + q[iw] + q[iw + 1]);
      }
    }
  }
  return out;
}

Tensor avg_pool2_backward(const Tensor& grad_out) {
  const std::size_t planes = grad_out.dim(0) * grad_out.dim(1), h = grad_out.dim(2),
                    w = grad_out.dim(3);
  Tensor grad({grad_out.dim(0), grad_out.dim(1), 2 * h, 2 * w});
  const std::size_t iw = 2 * w;
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = grad_out.data() + p * h * w;
    float* dst = grad.data() + p * 4 * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const float g = 0.25f * src[i * w + j];
        float* q = dst + 2 * i * iw + 2 * j;
        q[0] = g;
        q[1] = g;
        q[iw] = g;
        q[iw + 1] = g;
      }
    }
  }
  return grad;
}

Tensor upsample2_nearest(const Tensor& x) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.data() + p * h * w;
    float* dst = out.data() + p * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst.shape(), src.shape(), "add_inplace");
  float* d = dst.data();
  const float* s = src.data();
  const std::size_t n = dst.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

}  // namespace helio
