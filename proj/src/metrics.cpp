#include "helio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "helio/error.hpp"

namespace helio::metrics {

namespace fs = std::filesystem;

namespace {

void require_same(const Plane& a, const Plane& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.values.size() != b.values.size()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": images differ in shape");
  }
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < h; ++y) {
    const double* row = src.data() + y * w;
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * row[x + i];
      tmp[y * ow + x] = s;
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

Plane to_intensity(const Tensor& image, const NormalizationRecord& norm, Instrument instrument) {
  std::size_t c = 0, h = 0, w = 0;
  if (image.rank() == 3) {
    c = image.dim(0), h = image.dim(1), w = image.dim(2);
  } else if (image.rank() == 4 && image.dim(0) == 1) {
    c = image.dim(1), h = image.dim(2), w = image.dim(3);
  } else {
    throw Error(ErrorKind::ShapeMismatch, "metrics expect one (C, H, W) image, got " + shape_string(image.shape()));
  }
  if (c == 0) throw Error(ErrorKind::ShapeMismatch, "image has no channels");
  Plane p{h, w, std::vector<double>(h * w)};
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += image[k * plane + i];
    p.values[i] = norm.to_raw(instrument, s / static_cast<double>(c));
  }
  return p;
}

void SsimParams::validate() const {
  if (window_size == 0 || window_size % 2 == 0) throw Error(ErrorKind::InvalidSpec, "SSIM window must be odd");
  if (!(window_sigma > 0) || !(k1 > 0) || !(k2 > 0) || !(dynamic_range > 0)) {
    throw Error(ErrorKind::InvalidSpec, "SSIM sigma, k1, k2 and dynamic range must be positive");
  }
}

std::string MetricParams::describe() const {
  std::ostringstream os;
  os << "window_size=" << ssim.window_size << " window_sigma=" << num(ssim.window_sigma) << " k1=" << num(ssim.k1)
     << " k2=" << num(ssim.k2) << " dynamic_range=" << num(ssim.dynamic_range) << " ppe_threshold=" << num(ppe_threshold)
     << " re=" << (absolute_re ? "absolute" : "signed");
  return os.str();
}

MetricParams default_params(const NormalizationRecord& norm, Instrument instrument) {
  MetricParams p;
  const ClipRange& r = norm.at(instrument);
  p.ssim.dynamic_range = r.hi - r.lo;
  return p;
}

double relative_error(const Plane& gen, const Plane& real, bool absolute) {
  require_same(gen, real, "relative_error");
  double sg = 0.0, sr = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    sg += gen.values[i];
    sr += real.values[i];
  }
  if (sr == 0.0) throw Error(ErrorKind::ZeroDenominator, "real image sums to zero");
  const double re = (sg - sr) / sr;
  return absolute ? std::abs(re) : re;
}

double pearson_cc(const Plane& gen, const Plane& real) {
  require_same(gen, real, "pearson_cc");
  const std::size_t n = gen.size();
  if (n == 0) throw Error(ErrorKind::ConstantImage, "empty image");
  for (const Plane* p : {&gen, &real}) {
    const auto [lo, hi] = std::minmax_element(p->values.begin(), p->values.end());
    if (*lo == *hi) throw Error(ErrorKind::ConstantImage, "Pearson correlation of a constant image");
  }
  double mg = 0.0, mr = 0.0;
#pragma omp parallel for reduction(+ : mg, mr)
  for (std::size_t i = 0; i < n; ++i) {
    mg += gen.values[i];
    mr += real.values[i];
  }
  mg /= static_cast<double>(n);
  mr /= static_cast<double>(n);
  double sgg = 0.0, srr = 0.0, sgr = 0.0;
#pragma omp parallel for reduction(+ : sgg, srr, sgr)
  for (std::size_t i = 0; i < n; ++i) {
    const double a = gen.values[i] - mg, b = real.values[i] - mr;
    sgg += a * a;
    srr += b * b;
    sgr += a * b;
  }
  if (sgg == 0.0 || srr == 0.0) throw Error(ErrorKind::ConstantImage, "Pearson correlation of a constant image");
  return std::clamp(sgr / std::sqrt(sgg * srr), -1.0, 1.0);
}

double ppe(const Plane& gen, const Plane& real, double threshold, double dynamic_range) {
  require_same(gen, real, "ppe");
  if (gen.size() == 0) return 0.0;
  const double eps = 1e-6 * dynamic_range;
  std::size_t good = 0;
#pragma omp parallel for reduction(+ : good)
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const double r = real.values[i];
    good += std::abs(gen.values[i] - r) / std::max(std::abs(r), eps) < threshold;
  }
  return static_cast<double>(good) / static_cast<double>(gen.size());
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    sum += k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  for (double& v : k) v /= sum;
  return k;
}

double ssim(const Plane& gen, const Plane& real, const SsimParams& p) {
  require_same(gen, real, "ssim");
  p.validate();
  if (gen.height < p.window_size || gen.width < p.window_size) {
    throw Error(ErrorKind::ImageTooSmall, std::to_string(gen.height) + "x" + std::to_string(gen.width) +
                                              " image is smaller than the SSIM window " + std::to_string(p.window_size));
  }
  const std::size_t h = gen.height, w = gen.width, n = gen.size();
  const std::vector<double> k = gaussian_window(p.window_size, p.window_sigma);
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = gen.values[i], b = real.values[i];
    xx[i] = a * a;
    yy[i] = b * b;
    xy[i] = a * b;
  }
  const auto mx = filter_valid(gen.values, h, w, k), my = filter_valid(real.values, h, w, k);
  const auto exx = filter_valid(xx, h, w, k), eyy = filter_valid(yy, h, w, k), exy = filter_valid(xy, h, w, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
#pragma omp parallel for reduction(+ : total)
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx[i], uy = my[i];
    const double vx = exx[i] - ux * ux, vy = eyy[i] - uy * uy, cov = exy[i] - ux * uy;
    total += ((2 * (ux * uy) + c1) * (2 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

MetricRow score_pair(const std::string& id, const Plane& gen, const Plane& real, const MetricParams& p) {
  return {id, relative_error(gen, real, p.absolute_re), pearson_cc(gen, real),
          ppe(gen, real, p.ppe_threshold, p.ssim.dynamic_range), ssim(gen, real, p.ssim)};
}

MetricsReport aggregate(std::vector<MetricRow> rows, const MetricParams& p) {
  MetricsReport r;
  r.params = p;
  r.n_images = rows.size();
  for (const MetricRow& row : rows) {
    r.aggregate.re += row.re;
    r.aggregate.pcc += row.pcc;
    r.aggregate.ppe10 += row.ppe10;
    r.aggregate.ssim += row.ssim;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    r.aggregate.re /= n;
    r.aggregate.pcc /= n;
    r.aggregate.ppe10 /= n;
    r.aggregate.ssim /= n;
  }
  r.per_image = std::move(rows);
  return r;
}

MetricsReport evaluate_dataset(const Translator& translate, const PairSet& pairs, const NormalizationRecord& norm,
                               Instrument target_instrument, const MetricParams& p) {
  if (pairs.size() == 0) throw Error(ErrorKind::EmptySplit, "no pairs to evaluate");
  std::vector<MetricRow> rows;
  rows.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Tensor& in = pairs.inputs[i];
    const Tensor batch = in.rank() == 3 ? in.reshaped({1, in.dim(0), in.dim(1), in.dim(2)}) : in;
    const Tensor out = translate(batch);
    const Plane gen = to_intensity(out, norm, target_instrument);
    const Plane real = to_intensity(pairs.targets[i], norm, target_instrument);
    rows.push_back(score_pair(pairs.ids[i], gen, real, p));
  }
  return aggregate(std::move(rows), p);
}

void write_report(const MetricsReport& r, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << "# " << r.params.describe() << "\n";
  out << "id,re,pcc,ppe10,ssim\n";
  auto row = [&out](const MetricRow& m) {
    out << m.id << ',' << num(m.re) << ',' << num(m.pcc) << ',' << num(m.ppe10) << ',' << num(m.ssim) << '\n';
  };
  for (const MetricRow& m : r.per_image) row(m);
  row(r.aggregate);
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

MetricsReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string() + ": cannot open report");
  MetricsReport r;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::istringstream ls(line);
    MetricRow m;
    std::string f[5];
    for (auto& s : f) std::getline(ls, s, ',');
    try {
      m = {f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])};
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidSpec, path.string() + ": bad report row '" + line + "'");
    }
    (m.id == "MEAN" ? r.aggregate : r.per_image.emplace_back()) = m;
  }
  r.n_images = r.per_image.size();
  return r;
}

}  // namespace helio::metrics
