#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "helio/data.hpp"
#include "helio/error.hpp"

namespace helio {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s, const fs::path& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') {
    throw Error(ErrorKind::InvalidSpec, where.string() + ": not a number: '" + s + "'");
  }
  return v;
}

fs::path sidecar_path(const fs::path& manifest) { return fs::path(manifest.string() + ".norm"); }

}  // namespace

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw Error(ErrorKind::InvalidSpec, "split tag must be train or test, got '" + s + "'");
}

std::size_t DatasetManifest::count(Split s) const {
  std::size_t n = 0;
  for (const ManifestEntry& e : entries) n += e.split == s;
  return n;
}

std::vector<ManifestEntry> DatasetManifest::subset(Split s) const {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

fs::path DatasetManifest::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
}

void DatasetManifest::validate() const {
  std::set<std::string> paths;
  std::set<Timestamp::rep> train_times, test_times;
  for (const ManifestEntry& e : entries) {
    for (const std::string* p : {&e.input_path, &e.target_path}) {
      if (!paths.insert(*p).second) throw Error(ErrorKind::InvalidSpec, "path appears twice in manifest: " + *p);
    }
    (e.split == Split::Train ? train_times : test_times).insert(e.timestamp.time_since_epoch().count());
  }
  for (auto t : test_times) {
    if (train_times.count(t)) {
      throw Error(ErrorKind::InvalidSpec,
                  "timestamp " + format_timestamp(Timestamp{Timestamp::duration{t}}) + " is in both splits");
    }
  }
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate();
  std::ostringstream os;
  os << "# helio manifest\n";
  os << "# pairing_tolerance_s=" << exact(m.pairing_tolerance_s) << "\n";
  os << "# input_instrument=" << to_string(m.input_instrument) << "\n";
  os << "# target_instrument=" << to_string(m.target_instrument) << "\n";
  for (const ManifestEntry& e : m.entries) {
    for (const std::string* p : {&e.input_path, &e.target_path}) {
      if (p->find_first_of("\t\n") != std::string::npos) {
        throw Error(ErrorKind::InvalidSpec, "manifest paths may not contain tabs or newlines");
      }
    }
    os << e.input_path << '\t' << e.target_path << '\t' << format_timestamp(e.timestamp) << '\t'
       << to_string(e.split) << '\n';
  }
  std::ostringstream norm;
  norm << "# instrument\tclip_lo\tclip_hi\n";
  for (const auto& [inst, r] : m.normalization.ranges) {
    norm << to_string(inst) << '\t' << exact(r.lo) << '\t' << exact(r.hi) << '\n';
  }
  for (const auto& [p, text] : {std::pair{path, os.str()}, std::pair{sidecar_path(path), norm.str()}}) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + p.string());
    out << text;
    if (!out) throw Error(ErrorKind::IoFailure, "short write to " + p.string());
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string() + ": cannot open manifest");
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "pairing_tolerance_s") m.pairing_tolerance_s = to_double(value, path);
      if (key == "input_instrument") m.input_instrument = parse_instrument(value);
      if (key == "target_instrument") m.target_instrument = parse_instrument(value);
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 4) {
      throw Error(ErrorKind::InvalidSpec, path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    }
    m.entries.push_back({f[0], f[1], parse_timestamp(f[2]), parse_split(f[3])});
  }

  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    std::ifstream ns(side);
    m.normalization.ranges.clear();
    while (std::getline(ns, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto f = split_tabs(line);
      if (f.size() != 3) throw Error(ErrorKind::InvalidSpec, side.string() + ": expected 3 fields");
      m.normalization.ranges[parse_instrument(f[0])] = {to_double(f[1], side), to_double(f[2], side)};
    }
  }
  m.validate();
  return m;
}

// ------------------------------------------------------------------- split

SplitRule SplitRule::default_rule() {
  return SplitRule{{DateRange{make_timestamp(2014, 10, 1), make_timestamp(2015, 1, 1)}}};
}

bool SplitRule::is_test(Timestamp t) const {
  for (const DateRange& r : test_ranges) {
    if (r.contains(t)) return true;
  }
  return false;
}

DatasetManifest split_manifest(std::vector<ManifestEntry> entries, const SplitRule& rule,
                               std::vector<std::string>* warnings) {
  DatasetManifest m;
  for (ManifestEntry& e : entries) e.split = rule.is_test(e.timestamp) ? Split::Test : Split::Train;
  m.entries = std::move(entries);
  for (Split s : {Split::Train, Split::Test}) {
    if (m.count(s) == 0 && warnings) {
      warnings->push_back(Error(ErrorKind::EmptySplit, "no " + to_string(s) + " entries").what());
    }
  }
  m.validate();
  return m;
}

// -------------------------------------------------------------- image cache

void write_image_cache(const fs::path& path, const Tensor& chw) {
  if (chw.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "image cache expects (C, H, W)");
  const std::uint32_t hw[2] = {static_cast<std::uint32_t>(chw.dim(1)), static_cast<std::uint32_t>(chw.dim(2))};
  std::vector<unsigned char> buf(8 + 4 * chw.size());
  for (int k = 0; k < 2; ++k) {
    for (int b = 0; b < 4; ++b) buf[4 * k + b] = static_cast<unsigned char>(hw[k] >> (8 * b));
  }
  for (std::size_t i = 0; i < chw.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, chw.data() + i, 4);
    for (int b = 0; b < 4; ++b) buf[8 + 4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

Tensor read_image_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string() + ": cannot open image");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw Error(ErrorKind::IoFailure, path.string() + ": truncated image header");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(buf[off + b]) << (8 * b);
    return v;
  };
  const std::size_t h = u32(0), w = u32(4);
  const std::size_t payload = buf.size() - 8;
  if (h == 0 || w == 0 || payload == 0 || payload % (4 * h * w) != 0) {
    throw Error(ErrorKind::IoFailure, path.string() + ": payload does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor t({payload / (4 * h * w), h, w});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::uint32_t bits = u32(8 + 4 * i);
    std::memcpy(t.data() + i, &bits, 4);
  }
  return t;
}

PairSet load_pairs(const DatasetManifest& m, Split split) {
  PairSet ps;
  for (const ManifestEntry& e : m.entries) {
    if (e.split != split) continue;
    Tensor in = read_image_cache(m.resolve(e.input_path));
    Tensor tg = read_image_cache(m.resolve(e.target_path));
    if (in.shape() != tg.shape()) {
      throw Error(ErrorKind::ShapeMismatch, "pair " + e.input_path + " has mismatched input/target shapes");
    }
    ps.inputs.push_back(std::move(in));
    ps.targets.push_back(std::move(tg));
    ps.timestamps.push_back(e.timestamp);
    ps.ids.push_back(fs::path(e.input_path).stem().string());
  }
  return ps;
}

}  // namespace helio
