#include "helio/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <numeric>
#include <random>

#include "helio/error.hpp"

namespace helio {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDiscriminatorSeedMix = 0x9E3779B97F4A7C15ull;
// Keep decoded training pairs in memory below this size.
constexpr std::size_t kPreloadBytes = std::size_t{1} << 30;

bool finite(const Tensor& t) {
  for (float v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename Outputs>
bool maps_finite(const Outputs& outs) {
  for (const auto& o : outs) {
    if (!finite(o.map)) return false;
  }
  return true;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool finite(const losses::LossBundle& b) {
  return std::isfinite(b.d_loss) && std::isfinite(b.g_adv) && std::isfinite(b.g_pixel_or_fm) && std::isfinite(b.g_total);
}

// Source of training pairs in manifest order.
class PairSource {
 public:
  PairSource(const DatasetManifest& m, std::size_t image_size) : manifest_(m), side_(image_size) {
    entries_ = m.subset(Split::Train);
    const std::size_t bytes = entries_.size() * 2 * 3 * side_ * side_ * sizeof(float);
    if (bytes <= kPreloadBytes) {
      for (const ManifestEntry& e : entries_) cache_.push_back(load(e));
    }
  }

  std::size_t size() const { return entries_.size(); }

  std::pair<Tensor, Tensor> get(std::size_t i) const { return cache_.empty() ? load(entries_[i]) : cache_[i]; }

 private:
  std::pair<Tensor, Tensor> load(const ManifestEntry& e) const {
    Tensor in = read_image_cache(manifest_.resolve(e.input_path));
    Tensor tg = read_image_cache(manifest_.resolve(e.target_path));
    const Shape want{3, side_, side_};
    if (in.shape() != want || tg.shape() != want) {
      throw Error(ErrorKind::ShapeMismatch, "pair " + e.input_path + " is not " + shape_string(want) +
                                                " as the config's image_size requires");
    }
    return {std::move(in), std::move(tg)};
  }

  const DatasetManifest& manifest_;
  std::size_t side_;
  std::vector<ManifestEntry> entries_;
  std::vector<std::pair<Tensor, Tensor>> cache_;
};

Tensor stack(const std::vector<const Tensor*>& items) {
  const Shape& s = items.front()->shape();
  Tensor out({items.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i]->data(), items[i]->data() + items[i]->size(), out.data() + i * items[i]->size());
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ Trainer

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  gen_ = make_generator(cfg_);
  const std::uint64_t dseed = cfg_.seed ^ kDiscriminatorSeedMix;
  nn::ParameterRefs d_refs;
  if (cfg_.architecture == Architecture::Pix2Pix) {
    patch_ = std::make_unique<PatchDiscriminator>(cfg_.patch, 6, dseed);
    d_refs = patch_->parameters();
  } else {
    multi_ = std::make_unique<MultiScaleDiscriminator>(cfg_.multiscale, 6, dseed);
    d_refs = multi_->parameters();
  }
  const nn::AdamConfig ac{cfg_.learning_rate, cfg_.beta1, cfg_.beta2};
  opt_g_ = std::make_unique<nn::Adam>(gen_->parameters().params, ac);
  opt_d_ = std::make_unique<nn::Adam>(d_refs.params, ac);
}

nn::Module& Trainer::discriminator() {
  if (patch_) return *patch_;
  return *multi_;
}

double Trainer::discriminator_step(const Tensor& x, const Tensor& y) {
  gen_->check_input(x.shape());
  fake_ = gen_->forward(x, nn::Mode::Train);
  opt_d_->zero_grad();
  double d_loss = 0.0;
  if (patch_) {
    const Tensor real_map = patch_->forward(x, y, nn::Mode::Train).map;
    if (!finite(real_map)) return kNaN;
    losses::Maps<float> g_real, g_fake;
    losses::adversarial_d_loss<float>({real_map}, {real_map}, &g_real, nullptr);
    patch_->backward(g_real[0]);
    const Tensor fake_map = patch_->forward(x, fake_, nn::Mode::Train).map;
    if (!finite(fake_map)) return kNaN;
    d_loss = losses::adversarial_d_loss<float>({real_map}, {fake_map}, nullptr, &g_fake);
    patch_->backward(g_fake[0]);
  } else {
    const std::size_t scales = multi_->num_scales();
    std::vector<Tensor> real_maps;
    for (auto& o : multi_->forward(x, y, nn::Mode::Train)) real_maps.push_back(std::move(o.map));
    for (const Tensor& m : real_maps) {
      if (!finite(m)) return kNaN;
    }
    std::vector<Tensor> g_real(scales), g_fake(scales);
    for (std::size_t k = 0; k < scales; ++k) {
      losses::Maps<float> g;
      losses::adversarial_d_loss<float>({real_maps[k]}, {real_maps[k]}, &g, nullptr);
      g_real[k] = std::move(g[0]);
    }
    multi_->backward_to_target(g_real, nullptr, x.dim(1));
    const ScaleOutputs fake_out = multi_->forward(x, fake_, nn::Mode::Train);
    if (!maps_finite(fake_out)) return kNaN;
    for (std::size_t k = 0; k < scales; ++k) {
      losses::Maps<float> g;
      d_loss += losses::adversarial_d_loss<float>({real_maps[k]}, {fake_out[k].map}, nullptr, &g);
      g_fake[k] = std::move(g[0]);
    }
    multi_->backward_to_target(g_fake, nullptr, x.dim(1));
  }
  if (std::isfinite(d_loss)) opt_d_->step();
  return d_loss;
}

losses::LossBundle Trainer::generator_step(const Tensor& x, const Tensor& y) {
  if (fake_.empty()) throw Error(ErrorKind::InvalidSpec, "generator_step needs a preceding discriminator_step");
  opt_g_->zero_grad();
  losses::LossBundle b;
  Tensor grad_fake;
  if (patch_) {
    const DiscriminatorOutput out = patch_->forward(x, fake_, nn::Mode::Train);
    if (!finite(out.map)) return {kNaN, kNaN, kNaN, kNaN};
    losses::Pix2PixGrads<float> grads;
    b = losses::pix2pix_generator_objective<float>({out.map}, fake_, y, cfg_.loss_weights, cfg_.adversarial_form,
                                                   &grads);
    grad_fake = split_channels(patch_->backward(grads.fake_maps[0]), x.dim(1)).second;
    add_inplace(grad_fake, grads.generated);
  } else {
    const ScaleOutputs real = multi_->forward(x, y, nn::Mode::Train);
    const ScaleOutputs fake = multi_->forward(x, fake_, nn::Mode::Train);
    if (!maps_finite(real) || !maps_finite(fake)) return {kNaN, kNaN, kNaN, kNaN};
    losses::Maps<float> real_maps, fake_maps;
    losses::FeatureStack<float> real_feats, fake_feats;
    for (std::size_t k = 0; k < real.size(); ++k) {
      real_maps.push_back(real[k].map);
      fake_maps.push_back(fake[k].map);
      real_feats.push_back(real[k].features);
      fake_feats.push_back(fake[k].features);
    }
    losses::Pix2PixHDGrads<float> grads;
    b = losses::pix2pixhd_objective<float>(real_maps, real_feats, fake_maps, fake_feats, cfg_.loss_weights,
                                           cfg_.adversarial_form, cfg_.fm_norm, &grads);
    grad_fake = multi_->backward_to_target(grads.fake_maps, &grads.fake_features, x.dim(1));
  }
  gen_->backward(grad_fake);
  if (finite(b)) opt_g_->step();
  fake_ = Tensor();
  return b;
}

losses::LossBundle Trainer::step(const Tensor& x, const Tensor& y) {
  const double d_loss = discriminator_step(x, y);
  losses::LossBundle b = generator_step(x, y);
  b.d_loss = d_loss;
  return b;
}

// ------------------------------------------------------------------- train

void write_loss_header(std::ostream& os) { os << "step,epoch,d_loss,g_adv,g_l1_or_fm,g_total\n"; }

void write_loss_row(std::ostream& os, const LossRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.step, r.epoch, r.losses.d_loss, r.losses.g_adv,
                r.losses.g_pixel_or_fm, r.losses.g_total);
  os << buf;
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.htck", epoch);
  return buf;
}

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const fs::path& run_dir,
                  const TrainHooks& hooks) {
  cfg.validate();
  const PairSource source(manifest, cfg.image_size);
  if (source.size() == 0) throw Error(ErrorKind::EmptyTrainSet, "manifest has no train entries");

  std::error_code ec;
  fs::create_directories(run_dir / "checkpoints", ec);
  fs::create_directories(run_dir / "logs", ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create run directory " + run_dir.string() + ": " + ec.message());

  TrainResult result;
  result.log_path = run_dir / "logs" / "train_log.csv";
  std::ofstream log(result.log_path, std::ios::trunc);
  if (!log) throw Error(ErrorKind::IoFailure, "cannot write " + result.log_path.string());
  write_loss_header(log);

  Trainer trainer(cfg);
  std::vector<std::size_t> order(source.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::pair<Tensor, Tensor>> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(source.get(order[i]));
      std::vector<const Tensor*> xs, ys;
      for (const auto& [in, tg] : batch) {
        xs.push_back(&in);
        ys.push_back(&tg);
      }
      const LossRow row{++step, epoch, trainer.step(stack(xs), stack(ys))};
      write_loss_row(log, row);
      log.flush();
      result.log.push_back(row);
      if (hooks.on_step) hooks.on_step(row);
      if (!finite(row.losses)) {
        const std::string last = result.checkpoints.empty() ? "none" : result.checkpoints.back().string();
        throw Error(ErrorKind::DivergenceDetected, "non-finite loss at step " + std::to_string(step) + " (epoch " +
                                                       std::to_string(epoch) + "); last good checkpoint: " + last);
      }
    }

    if (epoch % cfg.checkpoint_interval == 0) {
      const fs::path p = run_dir / "checkpoints" / checkpoint_name(epoch);
      save_checkpoint(capture_checkpoint(cfg.architecture, static_cast<std::uint32_t>(epoch), cfg, trainer.generator(),
                                         &trainer.generator_optimizer()),
                      p);
      result.checkpoints.push_back(p);
    }
  }
  return result;
}

// --------------------------------------------------------------- selection

metrics::Translator make_translator(Generator& g) {
  return [&g](const Tensor& x) { return g.forward(x, nn::Mode::Eval); };
}

std::size_t pick_best(const std::vector<CheckpointScore>& table, SelectionMetric metric) {
  if (table.empty()) throw Error(ErrorKind::InvalidSpec, "no checkpoints to choose from");
  auto score = [metric](const metrics::MetricRow& r) {
    switch (metric) {
      case SelectionMetric::PCC: return r.pcc;
      case SelectionMetric::PPE10: return r.ppe10;
      case SelectionMetric::SSIM: return r.ssim;
      case SelectionMetric::RE: return -std::abs(r.re);
    }
    return r.pcc;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    const double a = score(table[i].aggregate), b = score(table[best].aggregate);
    if (a > b || (a == b && table[i].epoch >= table[best].epoch)) best = i;
  }
  return best;
}

Selection select_best_checkpoint(const std::vector<fs::path>& checkpoints, const PairSet& eval,
                                 const NormalizationRecord& norm, Instrument target, SelectionMetric metric) {
  if (checkpoints.empty()) throw Error(ErrorKind::InvalidSpec, "no checkpoints to choose from");
  if (eval.size() == 0) throw Error(ErrorKind::EmptySplit, "no evaluation pairs");
  Selection s;
  const metrics::MetricParams mp = metrics::default_params(norm, target);
  for (const fs::path& p : checkpoints) {
    LoadedGenerator lg = load_generator(p);
    const metrics::MetricsReport r = metrics::evaluate_dataset(make_translator(*lg.generator), eval, norm, target, mp);
    s.table.push_back({p, lg.epoch, r.aggregate});
  }
  s.index = pick_best(s.table, metric);
  return s;
}

}  // namespace helio
