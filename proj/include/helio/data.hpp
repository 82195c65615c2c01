#pragma once

// Preprocessing, quality screening, timestamp pairing, manifests and the
// synthetic paired dataset.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "helio/fits.hpp"
#include "helio/tensor.hpp"
#include "helio/timestamp.hpp"

namespace helio {

enum class Instrument { HMI, AIA0304, SyntheticIn, SyntheticOut };

std::string to_string(Instrument i);
Instrument parse_instrument(const std::string& s);
// From INSTRUME / TELESCOP / WAVELNTH; throws MissingHeaderKey when unknown.
Instrument instrument_from_header(const FitsImage& raw);

struct SolarImage {
  Tensor pixels;  // (3, H, W), values in [-1, 1], channels identical
  Timestamp timestamp{};
  Instrument instrument = Instrument::SyntheticIn;
  std::string source_path;
  double nan_fraction = 0.0;  // on-disk NaN fraction before cleaning

  std::size_t side() const { return pixels.dim(1); }
};

struct ClipRange {
  double lo = -1.0;
  double hi = 1.0;
};

// Per-instrument raw value range mapped affinely onto [-1, 1].
struct NormalizationRecord {
  std::map<Instrument, ClipRange> ranges;

  // HMI +-100, AIA [0, 1] placeholder (replace with the training-set
  // percentile), synthetic input [-1, 1], synthetic output [0, 1].
  static NormalizationRecord defaults();

  const ClipRange& at(Instrument i) const;
  float to_unit(Instrument i, double raw) const;
  double to_raw(Instrument i, double unit) const;
};

// Geometry stage of preprocessing, still in raw units.
struct ResampledRaw {
  std::size_t side = 0;
  std::vector<double> values;  // side * side, row-major, NaN-free
  double nan_fraction = 0.0;
  Timestamp timestamp{};
  Instrument instrument = Instrument::HMI;
};

// Disk centre (0-based pixel coordinates) and roll angle read from the
// header: CRPIX1/2 shifted by CRVAL1/2 through CDELT1/2 and CROTA2.
struct DiskGeometry {
  double center_x = 0.0;
  double center_y = 0.0;
  double roll_deg = 0.0;
  double radius_px = 0.0;  // 0 when the header has no solar radius
};
DiskGeometry disk_geometry(const FitsImage& raw);

// Centres the disk, rotates the roll angle out and resamples to
// target_size x target_size: box-averages by the integer part of the scale
// factor, then bilinear interpolation. Samples outside the source read 0.
// NaNs off the disk become 0; if the on-disk NaN fraction exceeds
// max_nan_fraction, throws NonFiniteResult.
ResampledRaw resample_raw(const FitsImage& raw, std::size_t target_size,
                          double max_nan_fraction = 0.0);

SolarImage normalize(const ResampledRaw& raw, const NormalizationRecord& norm);

inline SolarImage preprocess(const FitsImage& raw, std::size_t target_size,
                             const NormalizationRecord& norm, double max_nan_fraction = 0.0) {
  return normalize(resample_raw(raw, target_size, max_nan_fraction), norm);
}

// The q-th percentile (q in [0, 100]) by linear interpolation between order
// statistics. Used for the AIA clip ceiling.
double percentile(std::vector<double> values, double q);

enum class QualityReason { NanFraction, Saturation, OffDiskMisalignment };
std::string to_string(QualityReason r);

struct QualityVerdict {
  bool accepted = true;
  std::vector<QualityReason> reasons;
};

struct ScreeningConfig {
  double max_nan_fraction = 0.0;
  double max_saturation_fraction = 0.05;  // pixels at +1
  double max_misalignment_px = 4.0;       // bright-disk centroid vs grid centre (AIA only)
};

// All comparisons are strict: a value exactly at its bound passes.
QualityVerdict quality_screen(const SolarImage& img, const ScreeningConfig& cfg = {});

struct PairMatch {
  std::size_t input_index = 0;
  std::size_t target_index = 0;
  double time_delta_s = 0.0;  // target - input
};

// One-to-one matching of two sorted timestamp lists within tolerance_s.
// Maximizes the number of pairs, then minimizes the total |dt|. Output is in
// timestamp order. Throws UnsortedInput.
std::vector<PairMatch> pair_by_timestamp(const std::vector<Timestamp>& inputs,
                                         const std::vector<Timestamp>& targets, double tolerance_s);

enum class Split { Train, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string input_path;
  std::string target_path;
  Timestamp timestamp{};
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  double pairing_tolerance_s = 600.0;
  NormalizationRecord normalization = NormalizationRecord::defaults();
  Instrument input_instrument = Instrument::HMI;
  Instrument target_instrument = Instrument::AIA0304;
  // Relative entry paths resolve against this directory.
  std::filesystem::path base_dir;

  std::size_t count(Split s) const;
  std::vector<ManifestEntry> subset(Split s) const;
  std::filesystem::path resolve(const std::string& p) const;
  // Throws InvalidSpec on duplicate paths or a timestamp in both splits.
  void validate() const;
};

// Writes `path` and the normalization sidecar `path` + ".norm".
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Half-open [begin, end).
struct DateRange {
  Timestamp begin{};
  Timestamp end{};
  bool contains(Timestamp t) const { return t >= begin && t < end; }
};

struct SplitRule {
  std::vector<DateRange> test_ranges;
  // October through December 2014.
  static SplitRule default_rule();
  bool is_test(Timestamp t) const;
};

// Tags entries by the rule. An empty side is reported through `warnings`
// (EmptySplit), not thrown.
DatasetManifest split_manifest(std::vector<ManifestEntry> entries, const SplitRule& rule,
                               std::vector<std::string>* warnings = nullptr);

// Cache format: u32 H, u32 W (little-endian), then float32 channel-major.
void write_image_cache(const std::filesystem::path& path, const Tensor& chw);
Tensor read_image_cache(const std::filesystem::path& path);

enum class SyntheticTask { GaussianBlobs };
std::string to_string(SyntheticTask t);
SyntheticTask parse_synthetic_task(const std::string& s);

struct SyntheticOptions {
  std::size_t n = 100;
  std::size_t size = 64;
  std::uint64_t seed = 1;
  SyntheticTask task = SyntheticTask::GaussianBlobs;
  std::size_t n_test = 0;  // 0 means n / 10; test entries are the latest
};

// Input pixels of pair `index` (3, size, size): tanh of a sum of signed
// Gaussian blobs, drawn from an RNG seeded by (seed, index).
Tensor synthetic_input(std::size_t size, std::uint64_t seed, std::size_t index);
// Fixed target transform: 2 * blur_sigma1(1 - exp(-4 x^2)) - 1.
Tensor synthetic_target(const Tensor& input);
Timestamp synthetic_timestamp(std::size_t index);

// Writes input/ and target/ cache files plus manifest.tsv under out_dir and
// returns the manifest. Throws InvalidSize unless size is a power of two >= 16.
DatasetManifest make_synthetic_dataset(const SyntheticOptions& opt,
                                       const std::filesystem::path& out_dir);

struct PairSet {
  std::vector<Tensor> inputs;   // (3, S, S) each
  std::vector<Tensor> targets;
  std::vector<Timestamp> timestamps;
  std::vector<std::string> ids;  // input file stem
  std::size_t size() const { return inputs.size(); }
};

// Loads the cached images of the given split.
PairSet load_pairs(const DatasetManifest& m, Split split);

struct PrepareOptions {
  std::size_t image_size = 1024;
  double tolerance_s = 600.0;
  SplitRule rule = SplitRule::default_rule();
  ScreeningConfig screening;
  // AIA clip ceiling: this percentile of the training targets' raw values.
  double target_percentile = 99.5;
  // Pixels sampled per target image for the percentile.
  std::size_t percentile_samples = 4096;
};

struct PrepareResult {
  DatasetManifest manifest;
  std::size_t fits_files = 0;
  std::size_t rejected = 0;  // files not in an accepted pair
  std::vector<std::string> notes;  // one line per rejected file, plus split warnings
};

// Recursively collects *.fits / *.fts / *.fit under input_dir, preprocesses,
// pairs HMI with AIA 304 by time, splits, screens both images of each pair
// and writes input/, target/ and manifest.tsv under out_dir. Throws
// MissingFile when no FITS file is found and EmptySplit when no pair survives.
PrepareResult prepare_dataset(const std::filesystem::path& input_dir, const std::filesystem::path& out_dir,
                              const PrepareOptions& opt = {});

bool is_power_of_two(std::size_t n);

}  // namespace helio
