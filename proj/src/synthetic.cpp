#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "helio/data.hpp"
#include "helio/error.hpp"

namespace helio {

namespace fs = std::filesystem;

std::string to_string(SyntheticTask) { return "gaussian_blobs"; }

SyntheticTask parse_synthetic_task(const std::string& s) {
  if (s == "gaussian_blobs" || s == "GAUSSIAN_BLOBS") return SyntheticTask::GaussianBlobs;
  throw Error(ErrorKind::InvalidSpec, "unknown synthetic task '" + s + "'");
}

Timestamp synthetic_timestamp(std::size_t index) {
  return make_timestamp(2012, 1, 1) + std::chrono::hours{static_cast<long long>(index)};
}

Tensor synthetic_input(std::size_t size, std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  const double s = static_cast<double>(size);
  std::uniform_int_distribution<int> count(3, 8);
  std::uniform_real_distribution<double> pos(0.0, s), amp(0.5, 1.5), radius(s / 32.0, s / 8.0);
  std::bernoulli_distribution negative(0.5);

  struct Blob {
    double x, y, a, inv2r2;
  };
  std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
  for (Blob& b : blobs) {
    b.x = pos(rng);
    b.y = pos(rng);
    b.a = amp(rng) * (negative(rng) ? -1.0 : 1.0);
    const double r = radius(rng);
    b.inv2r2 = 1.0 / (2.0 * r * r);
  }
  Tensor t({3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double f = 0.0;
      for (const Blob& b : blobs) {
        const double dx = static_cast<double>(x) - b.x, dy = static_cast<double>(y) - b.y;
        f += b.a * std::exp(-(dx * dx + dy * dy) * b.inv2r2);
      }
      const float v = static_cast<float>(std::tanh(f));
      for (std::size_t c = 0; c < 3; ++c) t[c * plane + y * size + x] = v;
    }
  }
  return t;
}

Tensor synthetic_target(const Tensor& input) {
  if (input.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "synthetic_target expects (C, H, W)");
  const std::size_t h = input.dim(1), w = input.dim(2), plane = h * w;
  std::vector<double> m(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    const double x = input[i];
    m[i] = 1.0 - std::exp(-4.0 * x * x);
  }
  // Separable Gaussian blur, sigma 1, radius 3, edge-replicated.
  constexpr int kRadius = 3;
  double k[2 * kRadius + 1];
  double ksum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) ksum += k[i + kRadius] = std::exp(-0.5 * i * i);
  for (double& v : k) v /= ksum;
  auto clampi = [](long long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long long>(v, 0, static_cast<long long>(n) - 1));
  };
  std::vector<double> tmp(plane), out(plane);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) s += k[i + kRadius] * m[y * w + clampi(static_cast<long long>(x) + i, w)];
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) s += k[i + kRadius] * tmp[clampi(static_cast<long long>(y) + i, h) * w + x];
      out[y * w + x] = s;
    }
  }
  Tensor t({3, h, w});
  for (std::size_t i = 0; i < plane; ++i) {
    const float v = static_cast<float>(2.0 * out[i] - 1.0);
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = v;
  }
  return t;
}

DatasetManifest make_synthetic_dataset(const SyntheticOptions& opt, const fs::path& out_dir) {
  if (!is_power_of_two(opt.size) || opt.size < 16) {
    throw Error(ErrorKind::InvalidSize, "synthetic size must be a power of two >= 16, got " + std::to_string(opt.size));
  }
  if (opt.n == 0) throw Error(ErrorKind::InvalidSize, "synthetic dataset needs n >= 1");
  const std::size_t n_test = opt.n_test ? opt.n_test : opt.n / 10;
  if (n_test > opt.n) throw Error(ErrorKind::InvalidSize, "n_test exceeds n");

  std::error_code ec;
  fs::create_directories(out_dir / "input", ec);
  fs::create_directories(out_dir / "target", ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.base_dir = out_dir;
  m.input_instrument = Instrument::SyntheticIn;
  m.target_instrument = Instrument::SyntheticOut;
  m.entries.resize(opt.n);
  std::vector<std::string> errors(opt.n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < opt.n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "pair_%05zu.bin", i);
    ManifestEntry& e = m.entries[i];
    e.input_path = std::string("input/") + name;
    e.target_path = std::string("target/") + name;
    e.timestamp = synthetic_timestamp(i);
    e.split = i >= opt.n - n_test ? Split::Test : Split::Train;
    try {
      const Tensor in = synthetic_input(opt.size, opt.seed, i);
      write_image_cache(out_dir / e.input_path, in);
      write_image_cache(out_dir / e.target_path, synthetic_target(in));
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  }
  for (const std::string& err : errors) {
    if (!err.empty()) throw Error(ErrorKind::IoFailure, err);
  }
  write_manifest(m, out_dir / "manifest.tsv");
  return m;
}

}  // namespace helio
