#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "helio/data.hpp"
#include "helio/tensor.hpp"

namespace helio::metrics {

// One intensity-domain plane, row-major.
struct Plane {
  std::size_t height = 0, width = 0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

// Channel mean of a (C, H, W) or (1, C, H, W) unit-range image, mapped back
// to raw intensity through `norm` for `instrument`. No clipping.
Plane to_intensity(const Tensor& image, const NormalizationRecord& norm, Instrument instrument);

struct SsimParams {
  std::size_t window_size = 11;
  double window_sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
};

struct MetricParams {
  SsimParams ssim;
  double ppe_threshold = 0.10;
  bool absolute_re = false;  // |RE| instead of the signed ratio

  std::string describe() const;
};

// Defaults with dynamic range set to the clip width of `instrument`.
MetricParams default_params(const NormalizationRecord& norm, Instrument instrument);

// (sum(gen) - sum(real)) / sum(real). Throws ZeroDenominator.
double relative_error(const Plane& gen, const Plane& real, bool absolute = false);
// Throws ConstantImage if either side has zero variance.
double pearson_cc(const Plane& gen, const Plane& real);
// Fraction of pixels with |gen - real| / max(|real|, 1e-6 * dynamic_range) < threshold.
double ppe(const Plane& gen, const Plane& real, double threshold, double dynamic_range);
// Mean SSIM over valid window positions. Throws ImageTooSmall.
double ssim(const Plane& gen, const Plane& real, const SsimParams& p);

// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_window(std::size_t size, double sigma);

struct MetricRow {
  std::string id;
  double re = 0, pcc = 0, ppe10 = 0, ssim = 0;
};

struct MetricsReport {
  std::vector<MetricRow> per_image;
  MetricRow aggregate{"MEAN"};
  std::size_t n_images = 0;
  MetricParams params;
};

MetricRow score_pair(const std::string& id, const Plane& gen, const Plane& real, const MetricParams& p);
MetricsReport aggregate(std::vector<MetricRow> rows, const MetricParams& p);

// Maps a unit-range (1, C, H, W) input batch to a generated batch.
using Translator = std::function<Tensor(const Tensor&)>;

// Runs `translate` on each pair in order and scores it against the target.
MetricsReport evaluate_dataset(const Translator& translate, const PairSet& pairs,
                               const NormalizationRecord& norm, Instrument target_instrument,
                               const MetricParams& p);

void write_report(const MetricsReport& r, const std::filesystem::path& path);
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace helio::metrics
