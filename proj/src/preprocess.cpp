#include <algorithm>
#include <cmath>
#include <numbers>

#include "helio/data.hpp"
#include "helio/error.hpp"

namespace helio {

namespace {

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::string to_string(Instrument i) {
  switch (i) {
    case Instrument::HMI: return "HMI";
    case Instrument::AIA0304: return "AIA0304";
    case Instrument::SyntheticIn: return "SYNTHETIC_IN";
    case Instrument::SyntheticOut: return "SYNTHETIC_OUT";
  }
  return "?";
}

Instrument parse_instrument(const std::string& s) {
  for (Instrument i : {Instrument::HMI, Instrument::AIA0304, Instrument::SyntheticIn,
                       Instrument::SyntheticOut}) {
    if (upper(s) == to_string(i)) return i;
  }
  throw Error(ErrorKind::InvalidSpec, "unknown instrument '" + s + "'");
}

Instrument instrument_from_header(const FitsImage& raw) {
  const std::string ins = upper(raw.find("INSTRUME").value_or("") + " " + raw.find("TELESCOP").value_or(""));
  if (ins.find("HMI") != std::string::npos) return Instrument::HMI;
  if (ins.find("AIA") != std::string::npos) {
    const double wl = raw.number_or("WAVELNTH", 0.0);
    if (std::abs(wl - 304.0) < 0.5) return Instrument::AIA0304;
    throw Error(ErrorKind::InvalidSpec, "AIA passband " + std::to_string(wl) + " is not 304");
  }
  throw Error(ErrorKind::MissingHeaderKey, "INSTRUME/TELESCOP do not name HMI or AIA");
}

// ------------------------------------------------------------ normalization

NormalizationRecord NormalizationRecord::defaults() {
  NormalizationRecord r;
  r.ranges[Instrument::HMI] = {-100.0, 100.0};
  r.ranges[Instrument::AIA0304] = {0.0, 1.0};
  r.ranges[Instrument::SyntheticIn] = {-1.0, 1.0};
  r.ranges[Instrument::SyntheticOut] = {0.0, 1.0};
  return r;
}

const ClipRange& NormalizationRecord::at(Instrument i) const {
  const auto it = ranges.find(i);
  if (it == ranges.end()) {
    throw Error(ErrorKind::InvalidSpec, "no normalization range for " + to_string(i));
  }
  if (!(it->second.hi > it->second.lo)) {
    throw Error(ErrorKind::InvalidSpec, "empty normalization range for " + to_string(i));
  }
  return it->second;
}

float NormalizationRecord::to_unit(Instrument i, double raw) const {
  const ClipRange& r = at(i);
  const double c = std::clamp(raw, r.lo, r.hi);
  return static_cast<float>(2.0 * (c - r.lo) / (r.hi - r.lo) - 1.0);
}

double NormalizationRecord::to_raw(Instrument i, double unit) const {
  const ClipRange& r = at(i);
  return r.lo + (unit + 1.0) * 0.5 * (r.hi - r.lo);
}

// ------------------------------------------------------------------ geometry

DiskGeometry disk_geometry(const FitsImage& raw) {
  DiskGeometry g;
  const double crpix1 = raw.number("CRPIX1");
  const double crpix2 = raw.number("CRPIX2");
  const double cdelt1 = raw.number_or("CDELT1", 1.0);
  const double cdelt2 = raw.number_or("CDELT2", cdelt1);
  const double crval1 = raw.number_or("CRVAL1", 0.0);
  const double crval2 = raw.number_or("CRVAL2", 0.0);
  g.roll_deg = raw.number_or("CROTA2", 0.0);
  const double rho = g.roll_deg * std::numbers::pi / 180.0;
  // The disk centre is world (0, 0); invert world = CRVAL + CDELT * R(rho) * (p - CRPIX).
  const double a = -crval1 / cdelt1, b = -crval2 / cdelt2;
  g.center_x = crpix1 - 1.0 + std::cos(rho) * a + std::sin(rho) * b;
  g.center_y = crpix2 - 1.0 - std::sin(rho) * a + std::cos(rho) * b;
  if (const double r = raw.number_or("R_SUN", 0.0); r > 0.0) {
    g.radius_px = r;
  } else if (const double rs = raw.number_or("RSUN_OBS", 0.0); rs > 0.0) {
    g.radius_px = rs / std::abs(cdelt1);
  }
  return g;
}

ResampledRaw resample_raw(const FitsImage& raw, std::size_t target_size, double max_nan_fraction) {
  if (!is_power_of_two(target_size)) {
    throw Error(ErrorKind::InvalidSize, "target size " + std::to_string(target_size) + " is not a power of two");
  }
  if (raw.width == 0 || raw.height == 0 || raw.data.size() != raw.width * raw.height) {
    throw Error(ErrorKind::MalformedFits, "empty or inconsistent raw image");
  }
  ResampledRaw out;
  out.side = target_size;
  out.timestamp = raw.timestamp();
  out.instrument = instrument_from_header(raw);
  const DiskGeometry geo = disk_geometry(raw);

  // NaN census: on-disk only when the radius is known.
  const std::size_t w = raw.width, h = raw.height;
  std::vector<double> clean(raw.data);
  std::size_t on_disk = 0, on_disk_nan = 0;
  const double r2 = geo.radius_px * geo.radius_px;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - geo.center_x, dy = static_cast<double>(y) - geo.center_y;
      const bool disk = geo.radius_px <= 0.0 || dx * dx + dy * dy <= r2;
      double& v = clean[y * w + x];
      const bool bad = !std::isfinite(v);
      on_disk += disk;
      on_disk_nan += disk && bad;
      if (bad) v = 0.0;
    }
  }
  out.nan_fraction = on_disk ? static_cast<double>(on_disk_nan) / static_cast<double>(on_disk) : 0.0;
  if (out.nan_fraction > max_nan_fraction) {
    throw Error(ErrorKind::NonFiniteResult, "on-disk NaN fraction " + std::to_string(out.nan_fraction) +
                                                " exceeds " + std::to_string(max_nan_fraction));
  }

  // Area averaging over k x k boxes, k = floor(scale).
  const double scale = static_cast<double>(std::max(w, h)) / static_cast<double>(target_size);
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(scale)));
  const std::size_t bw = w / k, bh = h / k;
  std::vector<double> binned;
  const std::vector<double>* grid = &clean;
  if (k > 1) {
    binned.assign(bw * bh, 0.0);
    const double inv = 1.0 / static_cast<double>(k * k);
#pragma omp parallel for schedule(static)
    for (std::size_t by = 0; by < bh; ++by) {
      for (std::size_t bx = 0; bx < bw; ++bx) {
        double s = 0.0;
        for (std::size_t yy = by * k; yy < by * k + k; ++yy) {
          for (std::size_t xx = bx * k; xx < bx * k + k; ++xx) s += clean[yy * w + xx];
        }
        binned[by * bw + bx] = s * inv;
      }
    }
    grid = &binned;
  }
  const std::size_t gw = k > 1 ? bw : w, gh = k > 1 ? bh : h;
  auto sample = [&](long long x, long long y) {
    if (x < 0 || y < 0 || x >= static_cast<long long>(gw) || y >= static_cast<long long>(gh)) return 0.0;
    return (*grid)[static_cast<std::size_t>(y) * gw + static_cast<std::size_t>(x)];
  };

  const double rho = geo.roll_deg * std::numbers::pi / 180.0;
  const double cr = std::cos(rho), sr = std::sin(rho);
  const double co = (static_cast<double>(target_size) - 1.0) / 2.0;
  const double kd = static_cast<double>(k), shift = (kd - 1.0) / 2.0;
  out.values.assign(target_size * target_size, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t v = 0; v < target_size; ++v) {
    for (std::size_t u = 0; u < target_size; ++u) {
      const double a = (static_cast<double>(u) - co) * scale;
      const double b = (static_cast<double>(v) - co) * scale;
      // Output axes are world axes; map back through R(-rho).
      const double px = geo.center_x + cr * a + sr * b;
      const double py = geo.center_y - sr * a + cr * b;
      const double qx = (px - shift) / kd, qy = (py - shift) / kd;
      const double fx = std::floor(qx), fy = std::floor(qy);
      const double tx = qx - fx, ty = qy - fy;
      const auto ix = static_cast<long long>(fx), iy = static_cast<long long>(fy);
      double val = (1 - tx) * (1 - ty) * sample(ix, iy);
      if (tx != 0.0) val += tx * (1 - ty) * sample(ix + 1, iy);
      if (ty != 0.0) val += (1 - tx) * ty * sample(ix, iy + 1);
      if (tx != 0.0 && ty != 0.0) val += tx * ty * sample(ix + 1, iy + 1);
      out.values[v * target_size + u] = val;
    }
  }
  return out;
}

SolarImage normalize(const ResampledRaw& raw, const NormalizationRecord& norm) {
  SolarImage img;
  img.timestamp = raw.timestamp;
  img.instrument = raw.instrument;
  img.nan_fraction = raw.nan_fraction;
  const std::size_t s = raw.side, plane = s * s;
  img.pixels = Tensor({3, s, s});
  float* p = img.pixels.data();
  for (std::size_t i = 0; i < plane; ++i) {
    const float v = norm.to_unit(raw.instrument, raw.values[i]);
    p[i] = v;
    p[plane + i] = v;
    p[2 * plane + i] = v;
  }
  return img;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::InvalidSpec, "percentile of an empty set");
  if (!(q >= 0.0 && q <= 100.0)) throw Error(ErrorKind::InvalidSpec, "percentile outside [0, 100]");
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + frac * (b - a);
}

// ----------------------------------------------------------------- screening

std::string to_string(QualityReason r) {
  switch (r) {
    case QualityReason::NanFraction: return "NAN_FRACTION";
    case QualityReason::Saturation: return "SATURATION";
    case QualityReason::OffDiskMisalignment: return "OFF_DISK_MISALIGNMENT";
  }
  return "?";
}

QualityVerdict quality_screen(const SolarImage& img, const ScreeningConfig& cfg) {
  QualityVerdict v;
  const std::size_t h = img.pixels.dim(1), w = img.pixels.dim(2), plane = h * w;
  const float* p = img.pixels.data();  // channel 0; the others are copies

  bool nonfinite = false;
  std::size_t saturated = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (!std::isfinite(p[i])) nonfinite = true;
    saturated += p[i] >= 1.0f - 1e-6f;
  }
  if (nonfinite || img.nan_fraction > cfg.max_nan_fraction) v.reasons.push_back(QualityReason::NanFraction);
  if (static_cast<double>(saturated) / static_cast<double>(plane) > cfg.max_saturation_fraction) {
    v.reasons.push_back(QualityReason::Saturation);
  }

  if (img.instrument == Instrument::AIA0304 && !nonfinite) {
    std::vector<double> vals(p, p + plane);
    const double mid = 0.5 * (percentile(vals, 5.0) + percentile(vals, 95.0));
    double sx = 0.0, sy = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (p[y * w + x] > mid) {
          sx += static_cast<double>(x);
          sy += static_cast<double>(y);
          ++n;
        }
      }
    }
    bool off = n == 0;  // no disk found
    if (n) {
      const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
      off = std::hypot(sx / n - cx, sy / n - cy) > cfg.max_misalignment_px;
    }
    if (off) v.reasons.push_back(QualityReason::OffDiskMisalignment);
  }
  v.accepted = v.reasons.empty();
  return v;
}

}  // namespace helio
