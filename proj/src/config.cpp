#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "helio/error.hpp"
#include "helio/trainer.hpp"

namespace helio {

namespace fs = std::filesystem;

std::string to_string(Architecture a) { return a == Architecture::Pix2Pix ? "pix2pix" : "pix2pixhd"; }

Architecture parse_architecture(const std::string& s) {
  if (s == "pix2pix") return Architecture::Pix2Pix;
  if (s == "pix2pixhd") return Architecture::Pix2PixHD;
  throw Error(ErrorKind::ConfigError, "architecture must be pix2pix or pix2pixhd, got '" + s + "'");
}

std::string to_string(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::PCC: return "pcc";
    case SelectionMetric::PPE10: return "ppe10";
    case SelectionMetric::SSIM: return "ssim";
    case SelectionMetric::RE: return "re";
  }
  return "pcc";
}

SelectionMetric parse_selection_metric(const std::string& s) {
  for (SelectionMetric m : {SelectionMetric::PCC, SelectionMetric::PPE10, SelectionMetric::SSIM, SelectionMetric::RE}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorKind::ConfigError, "selection_metric must be pcc, ppe10, ssim or re, got '" + s + "'");
}

namespace {

// Shortest text that parses back to the same value.
template <typename F>
std::string fmt_real(F v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t to_count(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw Error(ErrorKind::ConfigError, "expected a non-negative integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

double to_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw Error(ErrorKind::ConfigError, "expected a number, got '" + s + "'");
  return v;
}

std::string join_set(const std::set<std::size_t>& s) {
  std::string out;
  for (std::size_t v : s) out += (out.empty() ? "" : ",") + std::to_string(v);
  return out;
}

std::set<std::size_t> parse_set(const std::string& s) {
  std::set<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(to_count(item));
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename M>
Field count_field(const std::string& key, M member) {
  return {key, [member](const TrainConfig& c) { return std::to_string(member(c)); },
          [member](TrainConfig& c, const std::string& v) { member(c) = to_count(v); }};
}

template <typename M>
Field float_field(const std::string& key, M member) {
  return {key, [member](const TrainConfig& c) { return fmt_real(member(c)); },
          [member](TrainConfig& c, const std::string& v) { member(c) = static_cast<float>(to_real(v)); }};
}

template <typename M>
Field double_field(const std::string& key, M member) {
  return {key, [member](const TrainConfig& c) { return fmt_real(member(c)); },
          [member](TrainConfig& c, const std::string& v) { member(c) = to_real(v); }};
}

template <typename M>
std::vector<Field> disc_fields(const std::string& prefix, M spec) {
  return {
      count_field(prefix + ".strided_layers", [spec](auto& c) -> auto& { return spec(c).strided_layers; }),
      count_field(prefix + ".base_filters", [spec](auto& c) -> auto& { return spec(c).base_filters; }),
      count_field(prefix + ".kernel_size", [spec](auto& c) -> auto& { return spec(c).kernel_size; }),
      count_field(prefix + ".max_filters", [spec](auto& c) -> auto& { return spec(c).max_filters; }),
  };
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        count_field("epochs", [](auto& c) -> auto& { return c.epochs; }),
        count_field("checkpoint_interval", [](auto& c) -> auto& { return c.checkpoint_interval; }),
        count_field("batch_size", [](auto& c) -> auto& { return c.batch_size; }),
        float_field("learning_rate", [](auto& c) -> auto& { return c.learning_rate; }),
        float_field("beta1", [](auto& c) -> auto& { return c.beta1; }),
        float_field("beta2", [](auto& c) -> auto& { return c.beta2; }),
        {"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
         [](TrainConfig& c, const std::string& v) { c.seed = to_count(v); }},
        {"architecture", [](const TrainConfig& c) { return to_string(c.architecture); },
         [](TrainConfig& c, const std::string& v) { c.architecture = parse_architecture(v); }},
        double_field("lambda_l1", [](auto& c) -> auto& { return c.loss_weights.lambda_l1; }),
        double_field("lambda_fm", [](auto& c) -> auto& { return c.loss_weights.lambda_fm; }),
        count_field("image_size", [](auto& c) -> auto& { return c.image_size; }),
        {"adversarial_form", [](const TrainConfig& c) { return losses::to_string(c.adversarial_form); },
         [](TrainConfig& c, const std::string& v) { c.adversarial_form = losses::parse_adversarial_form(v); }},
        {"fm_norm", [](const TrainConfig& c) { return losses::to_string(c.fm_norm); },
         [](TrainConfig& c, const std::string& v) { c.fm_norm = losses::parse_feature_matching_norm(v); }},
        {"selection_metric", [](const TrainConfig& c) { return to_string(c.selection_metric); },
         [](TrainConfig& c, const std::string& v) { c.selection_metric = parse_selection_metric(v); }},
        count_field("unet.depth", [](auto& c) -> auto& { return c.unet.depth; }),
        count_field("unet.base_filters", [](auto& c) -> auto& { return c.unet.base_filters; }),
        count_field("unet.max_filters", [](auto& c) -> auto& { return c.unet.max_filters; }),
        {"unet.dropout_blocks", [](const TrainConfig& c) { return join_set(c.unet.dropout_blocks); },
         [](TrainConfig& c, const std::string& v) { c.unet.dropout_blocks = parse_set(v); }},
        float_field("unet.dropout_rate", [](auto& c) -> auto& { return c.unet.dropout_rate; }),
        count_field("hd.global_downsamples", [](auto& c) -> auto& { return c.hd.global_downsamples; }),
        count_field("hd.global_residual_blocks",
                    [](auto& c) -> auto& { return c.hd.global_residual_blocks; }),
        count_field("hd.enhancer_residual_blocks",
                    [](auto& c) -> auto& { return c.hd.enhancer_residual_blocks; }),
        count_field("hd.base_filters", [](auto& c) -> auto& { return c.hd.base_filters; }),
        count_field("hd.num_scales", [](auto& c) -> auto& { return c.multiscale.num_scales; }),
    };
    for (auto& d : disc_fields("patch", [](auto& c) -> auto& { return c.patch; })) f.push_back(d);
    for (auto& d : disc_fields("hd.disc", [](auto& c) -> auto& { return c.multiscale.per_scale; })) {
      f.push_back(d);
    }
    return f;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (epochs < 1) bad.push_back("epochs must be >= 1");
  if (checkpoint_interval < 1) bad.push_back("checkpoint_interval must be >= 1");
  if (batch_size < 1) bad.push_back("batch_size must be >= 1");
  if (!(learning_rate >= 0.0f)) bad.push_back("learning_rate must be >= 0");
  if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) bad.push_back("beta1/beta2 must be in [0, 1)");
  if (!is_power_of_two(image_size)) bad.push_back("image_size must be a power of two");
  auto check = [&bad](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      bad.push_back(e.what());
    }
  };
  check([&] { loss_weights.validate(); });
  if (architecture == Architecture::Pix2Pix) {
    check([&] {
      unet.validate();
      unet.bottleneck_side(image_size);
    });
    check([&] {
      patch.validate();
      patch_map_side(patch, image_size);
    });
  } else {
    check([&] {
      hd.validate();
      if (image_size % hd.required_multiple() != 0) {
        throw Error(ErrorKind::InvalidSpec, "image_size must be a multiple of " + std::to_string(hd.required_multiple()));
      }
    });
    check([&] {
      multiscale.validate();
      for (std::size_t k = 0; k < multiscale.num_scales; ++k) {
        patch_map_side(multiscale.per_scale, MultiScaleDiscriminator::side_at_scale(image_size, k));
      }
    });
  }
  if (!bad.empty()) {
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw Error(ErrorKind::ConfigError, msg);
  }
}

std::string to_config_text(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::vector<std::string> bad;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bad.push_back("line " + std::to_string(lineno) + ": expected key=value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
    if (it == fields().end()) {
      bad.push_back("unknown key '" + key + "'");
      continue;
    }
    if (!seen.insert(key).second) {
      bad.push_back("duplicate key '" + key + "'");
      continue;
    }
    try {
      it->set(cfg, value);
    } catch (const std::exception& e) {
      bad.push_back("key '" + key + "': " + e.what());
    }
  }
  if (!bad.empty()) {
    std::string msg = "config errors:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw Error(ErrorKind::ConfigError, msg);
  }
  return cfg;
}

TrainConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string() + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void write_config(const TrainConfig& cfg, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  out << to_config_text(cfg);
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

std::unique_ptr<Generator> make_generator(const TrainConfig& cfg) {
  if (cfg.architecture == Architecture::Pix2Pix) return std::make_unique<UNetGenerator>(cfg.unet, cfg.seed);
  return std::make_unique<HDGenerator>(cfg.hd, cfg.seed);
}

}  // namespace helio
