// helio: data preparation, synthetic data, training, generation and
// evaluation from the command line.
//
// Exit codes: 0 success, 2 usage or config error, 3 divergence, 4 I/O error.

#include <png.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "helio/data.hpp"
#include "helio/error.hpp"
#include "helio/metrics.hpp"
#include "helio/trainer.hpp"

namespace fs = std::filesystem;
using namespace helio;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

// Fixed rendering: unit value u in [-1, 1] -> round(255 * (u + 1) / 2),
// clamped, on the channel mean.
constexpr const char* kPngMapping = "gray8 = round(255 * (clamp(mean_c(u), -1, 1) + 1) / 2)";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::DivergenceDetected:
    case ErrorKind::NonFiniteResult:
      return kExitDivergence;
    case ErrorKind::MalformedFits:
    case ErrorKind::IoFailure:
    case ErrorKind::DigestMismatch:
      return kExitIo;
    default:
      return kExitUsage;
  }
}

fs::path run_root() {
  const char* env = std::getenv("HELIO_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

// Refuses to touch existing output unless --overwrite was given.
void guard_output(const fs::path& p, bool overwrite) {
  if (fs::exists(p) && !overwrite) {
    throw UsageError(p.string() + " already exists; pass --overwrite to replace it");
  }
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + p.string() + ": " + ec.message());
}

DateRange parse_range(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) throw UsageError("--test-range wants BEGIN/END, got '" + s + "'");
  return {parse_timestamp(s.substr(0, slash)), parse_timestamp(s.substr(slash + 1))};
}

void write_png(const fs::path& path, const Tensor& chw) {
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  std::vector<png_byte> rows(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < c; ++k) m += chw[k * h * w + i];
    const double u = std::clamp(m / static_cast<double>(c), -1.0, 1.0);
    rows[i] = static_cast<png_byte>(std::lround(255.0 * (u + 1.0) / 2.0));
  }
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(f);
    throw Error(ErrorKind::IoFailure, "libpng failed on " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_text text{};
  text.compression = PNG_TEXT_COMPRESSION_NONE;
  text.key = const_cast<char*>("helio-mapping");
  text.text = const_cast<char*>(kPngMapping);
  png_set_text(png, info, &text, 1);
  png_write_info(png, info);
  for (std::size_t y = 0; y < h; ++y) png_write_row(png, rows.data() + y * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(f) != 0) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

void print_row(const char* label, const metrics::MetricRow& r) {
  std::printf("%s RE %.3f PCC %.3f PPE10 %.3f SSIM %.3f\n", label, r.re, r.pcc, r.ppe10, r.ssim);
}

// ------------------------------------------------------------------ commands

struct PrepareArgs {
  std::string input_dir, out;
  double tolerance_s = 600.0;
  std::size_t size = 1024;
  std::vector<std::string> test_ranges;
  bool overwrite = false;
};

int cmd_prepare(const PrepareArgs& a) {
  guard_output(fs::path(a.out) / "manifest.tsv", a.overwrite);
  PrepareOptions opt;
  opt.image_size = a.size;
  opt.tolerance_s = a.tolerance_s;
  if (!a.test_ranges.empty()) {
    opt.rule.test_ranges.clear();
    for (const auto& r : a.test_ranges) opt.rule.test_ranges.push_back(parse_range(r));
  }
  const PrepareResult res = prepare_dataset(a.input_dir, a.out, opt);
  for (const auto& n : res.notes) std::fprintf(stderr, "note: %s\n", n.c_str());
  std::printf("fits files: %zu\n", res.fits_files);
  std::printf("train: %zu\ntest: %zu\nrejected: %zu\n", res.manifest.count(Split::Train),
              res.manifest.count(Split::Test), res.rejected);
  std::printf("manifest: %s\n", (fs::path(a.out) / "manifest.tsv").c_str());
  return 0;
}

struct SynthArgs {
  std::size_t n = 500, size = 64, n_test = 0;
  std::uint64_t seed = 1;
  std::string out;
  bool overwrite = false;
};

int cmd_synth(const SynthArgs& a) {
  guard_output(fs::path(a.out) / "manifest.tsv", a.overwrite);
  SyntheticOptions opt;
  opt.n = a.n;
  opt.size = a.size;
  opt.seed = a.seed;
  opt.n_test = a.n_test;
  const DatasetManifest m = make_synthetic_dataset(opt, a.out);
  std::printf("train: %zu\ntest: %zu\nmanifest: %s\n", m.count(Split::Train), m.count(Split::Test),
              (fs::path(a.out) / "manifest.tsv").c_str());
  return 0;
}

struct TrainArgs {
  std::string config, manifest, out_run;
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = read_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const DatasetManifest m = read_manifest(a.manifest);
  const fs::path run = a.out_run.empty()
                           ? run_root() / ("run_" + to_string(cfg.architecture) + "_seed" + std::to_string(cfg.seed))
                           : fs::path(a.out_run);
  guard_output(run / "checkpoints", a.overwrite);
  std::error_code ec;
  fs::remove_all(run / "checkpoints", ec);
  fs::remove_all(run / "logs", ec);
  make_dirs(run);
  write_config(cfg, run / "config.txt");
  {
    std::ofstream ref(run / "manifest.ref");
    ref << fs::absolute(a.manifest).string() << "\n";
  }

  const std::size_t steps_per_epoch = (m.count(Split::Train) + cfg.batch_size - 1) / cfg.batch_size;
  TrainHooks hooks;
  hooks.on_step = [&](const LossRow& r) {
    if (steps_per_epoch && r.step % steps_per_epoch == 0) {
      std::fprintf(stderr, "epoch %zu/%zu d %.4f g_adv %.4f g_l1_or_fm %.4f g_total %.4f\n", r.epoch, cfg.epochs,
                   r.losses.d_loss, r.losses.g_adv, r.losses.g_pixel_or_fm, r.losses.g_total);
    }
  };
  const TrainResult res = train(cfg, m, run, hooks);
  for (const auto& p : res.checkpoints) std::printf("checkpoint: %s\n", p.c_str());
  if (!res.log.empty()) {
    const auto& l = res.log.back().losses;
    std::printf("final losses: d %.6g g_adv %.6g g_l1_or_fm %.6g g_total %.6g\n", l.d_loss, l.g_adv,
                l.g_pixel_or_fm, l.g_total);
  }
  std::printf("log: %s\n", res.log_path.c_str());
  return 0;
}

struct GenerateArgs {
  std::string checkpoint, input, out, manifest;
  bool overwrite = false;
};

int cmd_generate(const GenerateArgs& a) {
  LoadedGenerator lg = load_generator(a.checkpoint);
  const fs::path in(a.input);
  Tensor x;
  if (in.extension() == ".bin") {
    x = read_image_cache(in);
  } else {
    const NormalizationRecord norm =
        a.manifest.empty() ? NormalizationRecord::defaults() : read_manifest(a.manifest).normalization;
    x = preprocess(read_fits(in), lg.config.image_size, norm).pixels;
  }
  const std::size_t s = lg.config.image_size;
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) != s || x.dim(2) != s) {
    throw Error(ErrorKind::ShapeMismatch, "input is " + shape_string(x.shape()) + ", this checkpoint expects " +
                                              shape_string({3, s, s}));
  }
  const fs::path out(a.out);
  const fs::path png = out / (in.stem().string() + ".png"), raw = out / (in.stem().string() + ".bin");
  guard_output(png, a.overwrite);
  guard_output(raw, a.overwrite);
  make_dirs(out);
  const Tensor y = lg.generator->forward(x.reshaped({1, 3, s, s}), nn::Mode::Eval).reshaped({3, s, s});
  write_image_cache(raw, y);
  write_png(png, y);
  std::printf("png: %s\nraw: %s\nmapping: %s\n", png.c_str(), raw.c_str(), kPngMapping);
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, manifest, out_report;
  bool absolute_re = false, overwrite = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const DatasetManifest m = read_manifest(a.manifest);
  if (m.count(Split::Test) == 0) throw Error(ErrorKind::EmptySplit, a.manifest + " has no test split");
  if (!a.out_report.empty()) guard_output(a.out_report, a.overwrite);
  LoadedGenerator lg = load_generator(a.checkpoint);
  const PairSet test = load_pairs(m, Split::Test);
  metrics::MetricParams p = metrics::default_params(m.normalization, m.target_instrument);
  p.absolute_re = a.absolute_re;
  const metrics::MetricsReport r =
      metrics::evaluate_dataset(make_translator(*lg.generator), test, m.normalization, m.target_instrument, p);
  if (!a.out_report.empty()) {
    const fs::path parent = fs::path(a.out_report).parent_path();
    if (!parent.empty()) make_dirs(parent);
    metrics::write_report(r, a.out_report);
    std::printf("report: %s\n", a.out_report.c_str());
  }
  std::printf("images: %zu\n", r.n_images);
  print_row("MEAN", r.aggregate);
  return 0;
}

struct SelectArgs {
  std::string run, manifest, metric = "pcc";
};

int cmd_select(const SelectArgs& a) {
  const DatasetManifest m = read_manifest(a.manifest);
  std::vector<fs::path> cks;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(fs::path(a.run) / "checkpoints", ec)) {
    if (e.path().extension() == ".htck") cks.push_back(e.path());
  }
  if (ec) throw Error(ErrorKind::MissingFile, a.run + ": no checkpoints directory");
  std::sort(cks.begin(), cks.end());
  const Selection s = select_best_checkpoint(cks, load_pairs(m, Split::Test), m.normalization, m.target_instrument,
                                             parse_selection_metric(a.metric));
  for (const auto& row : s.table) {
    std::printf("epoch %4u ", row.epoch);
    print_row(row.path.filename().c_str(), row.aggregate);
  }
  std::printf("best: %s\n", s.table[s.index].path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Magnetogram to EUV image translation with Pix2Pix and Pix2PixHD"};
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "Preprocess, screen, pair and split a FITS corpus");
  prep->add_option("--input-dir", pa.input_dir, "Directory searched for FITS files")->required();
  prep->add_option("--out", pa.out, "Output dataset directory")->required();
  prep->add_option("--tolerance-s", pa.tolerance_s, "Pairing tolerance in seconds");
  prep->add_option("--size", pa.size, "Output image side");
  prep->add_option("--test-range", pa.test_ranges, "Half-open test range BEGIN/END (repeatable)");
  prep->add_flag("--overwrite", pa.overwrite);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic paired dataset");
  synth->add_option("--n", sa.n, "Number of pairs");
  synth->add_option("--size", sa.size, "Image side (power of two >= 16)");
  synth->add_option("--seed", sa.seed);
  synth->add_option("--n-test", sa.n_test, "Test pairs (default n/10)");
  synth->add_option("--out", sa.out)->required();
  synth->add_flag("--overwrite", sa.overwrite);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model from a config file");
  tr->add_option("--config", ta.config)->required();
  tr->add_option("--manifest", ta.manifest)->required();
  tr->add_option("--out-run", ta.out_run, "Run directory (default under $HELIO_RUN_ROOT or ./runs)");
  tr->add_option("--seed", ta.seed, "Overrides the config seed");
  tr->add_flag("--overwrite", ta.overwrite);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Translate one FITS or cached image");
  gen->add_option("--checkpoint", ga.checkpoint)->required();
  gen->add_option("--input", ga.input, "FITS file or .bin image cache")->required();
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--manifest", ga.manifest, "Manifest whose normalization applies to FITS input");
  gen->add_flag("--overwrite", ga.overwrite);

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  ev->add_option("--checkpoint", ea.checkpoint)->required();
  ev->add_option("--manifest", ea.manifest)->required();
  ev->add_option("--out-report", ea.out_report, "CSV report path");
  ev->add_flag("--absolute-re", ea.absolute_re, "Report |RE| instead of signed RE");
  ev->add_flag("--overwrite", ea.overwrite);

  SelectArgs sel;
  auto* se = app.add_subcommand("select", "Score every checkpoint of a run and pick the best");
  se->add_option("--run", sel.run)->required();
  se->add_option("--manifest", sel.manifest)->required();
  se->add_option("--metric", sel.metric, "pcc, ppe10, ssim or re");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*prep) return cmd_prepare(pa);
    if (*synth) return cmd_synth(sa);
    if (*tr) return cmd_train(ta);
    if (*gen) return cmd_generate(ga);
    if (*ev) return cmd_evaluate(ea);
    if (*se) return cmd_select(sel);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
