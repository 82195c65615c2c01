#include <algorithm>
#include <cctype>
#include <cstdio>
#include <tuple>

#include "helio/data.hpp"
#include "helio/error.hpp"

namespace helio {

namespace fs = std::filesystem;

namespace {

struct Scan {
  fs::path path;
  Instrument instrument = Instrument::HMI;
  Timestamp timestamp{};
  std::vector<double> sample;  // strided raw values, AIA only
  std::string error;
};

bool is_fits_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".fits" || ext == ".fts" || ext == ".fit";
}

std::vector<fs::path> find_fits(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorKind::MissingFile, dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir, ec)) {
    if (e.is_regular_file() && is_fits_name(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string reasons_text(const QualityVerdict& v) {
  std::string s;
  for (QualityReason r : v.reasons) s += (s.empty() ? "" : ",") + to_string(r);
  return s;
}

}  // namespace

PrepareResult prepare_dataset(const fs::path& input_dir, const fs::path& out_dir, const PrepareOptions& opt) {
  if (!is_power_of_two(opt.image_size)) {
    throw Error(ErrorKind::InvalidSize, "image size must be a power of two, got " + std::to_string(opt.image_size));
  }
  const std::vector<fs::path> files = find_fits(input_dir);
  if (files.empty()) throw Error(ErrorKind::MissingFile, "no FITS files found in " + input_dir.string());

  PrepareResult res;
  res.fits_files = files.size();

  std::vector<Scan> scans(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < files.size(); ++i) {
    Scan& s = scans[i];
    s.path = files[i];
    try {
      const FitsImage raw = read_fits(s.path);
      s.instrument = instrument_from_header(raw);
      s.timestamp = raw.timestamp();
      const ResampledRaw r = resample_raw(raw, opt.image_size, opt.screening.max_nan_fraction);
      if (s.instrument == Instrument::AIA0304) {
        const std::size_t stride = std::max<std::size_t>(1, r.values.size() / std::max<std::size_t>(1, opt.percentile_samples));
        for (std::size_t k = 0; k < r.values.size(); k += stride) s.sample.push_back(r.values[k]);
      }
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  }

  std::vector<std::size_t> hmi, aia;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    if (!scans[i].error.empty()) {
      res.notes.push_back(scans[i].path.string() + ": " + scans[i].error);
      continue;
    }
    (scans[i].instrument == Instrument::HMI ? hmi : aia).push_back(i);
  }
  auto by_time = [&scans](std::size_t a, std::size_t b) {
    return std::tie(scans[a].timestamp, scans[a].path) < std::tie(scans[b].timestamp, scans[b].path);
  };
  std::sort(hmi.begin(), hmi.end(), by_time);
  std::sort(aia.begin(), aia.end(), by_time);
  std::vector<Timestamp> t_in, t_tg;
  for (std::size_t i : hmi) t_in.push_back(scans[i].timestamp);
  for (std::size_t i : aia) t_tg.push_back(scans[i].timestamp);
  const std::vector<PairMatch> pairs = pair_by_timestamp(t_in, t_tg, opt.tolerance_s);
  {
    std::vector<bool> used_in(hmi.size()), used_tg(aia.size());
    for (const PairMatch& p : pairs) used_in[p.input_index] = used_tg[p.target_index] = true;
    for (std::size_t i = 0; i < hmi.size(); ++i) {
      if (!used_in[i]) res.notes.push_back(scans[hmi[i]].path.string() + ": no target within tolerance");
    }
    for (std::size_t i = 0; i < aia.size(); ++i) {
      if (!used_tg[i]) res.notes.push_back(scans[aia[i]].path.string() + ": no input within tolerance");
    }
  }

  NormalizationRecord norm = NormalizationRecord::defaults();
  std::vector<double> pool;
  for (const PairMatch& p : pairs) {
    if (opt.rule.is_test(t_in[p.input_index])) continue;
    const auto& s = scans[aia[p.target_index]].sample;
    pool.insert(pool.end(), s.begin(), s.end());
  }
  if (!pool.empty()) {
    const double hi = percentile(std::move(pool), opt.target_percentile);
    if (hi > 0.0) {
      norm.ranges[Instrument::AIA0304] = {0.0, hi};
    } else {
      res.notes.push_back("AIA training percentile is not positive; keeping the default clip range");
    }
  } else {
    res.notes.push_back("no training pairs; keeping the default AIA clip range");
  }

  std::error_code ec;
  fs::create_directories(out_dir / "input", ec);
  fs::create_directories(out_dir / "target", ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestEntry> entries(pairs.size());
  std::vector<std::string> rejected(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Scan& in = scans[hmi[pairs[k].input_index]];
    const Scan& tg = scans[aia[pairs[k].target_index]];
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%05zu_", k);
    const std::string name = prefix + in.path.stem().string() + ".bin";
    ManifestEntry& e = entries[k];
    e.input_path = "input/" + name;
    e.target_path = "target/" + name;
    e.timestamp = in.timestamp;
    try {
      const SolarImage a = preprocess(read_fits(in.path), opt.image_size, norm, opt.screening.max_nan_fraction);
      const SolarImage b = preprocess(read_fits(tg.path), opt.image_size, norm, opt.screening.max_nan_fraction);
      const QualityVerdict va = quality_screen(a, opt.screening), vb = quality_screen(b, opt.screening);
      if (!va.accepted || !vb.accepted) {
        rejected[k] = in.path.string() + " [" + reasons_text(va) + "] / " + tg.path.string() + " [" +
                      reasons_text(vb) + "]: failed screening";
        continue;
      }
      write_image_cache(out_dir / e.input_path, a.pixels);
      write_image_cache(out_dir / e.target_path, b.pixels);
    } catch (const std::exception& ex) {
      rejected[k] = in.path.string() + " / " + tg.path.string() + ": " + ex.what();
    }
  }

  std::vector<ManifestEntry> kept;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (rejected[k].empty()) {
      kept.push_back(entries[k]);
    } else {
      res.notes.push_back(rejected[k]);
    }
  }
  if (kept.empty()) throw Error(ErrorKind::EmptySplit, "no image pair survived pairing and screening");
  res.rejected = res.fits_files - 2 * kept.size();

  std::vector<std::string> warnings;
  res.manifest = split_manifest(std::move(kept), opt.rule, &warnings);
  res.notes.insert(res.notes.end(), warnings.begin(), warnings.end());
  res.manifest.pairing_tolerance_s = opt.tolerance_s;
  res.manifest.normalization = norm;
  res.manifest.input_instrument = Instrument::HMI;
  res.manifest.target_instrument = Instrument::AIA0304;
  res.manifest.base_dir = out_dir;
  write_manifest(res.manifest, out_dir / "manifest.tsv");
  return res;
}

}  // namespace helio
