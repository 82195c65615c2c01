#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "helio/data.hpp"
#include "helio/losses.hpp"
#include "helio/metrics.hpp"
#include "helio/nn.hpp"
#include "helio/pix2pix.hpp"
#include "helio/pix2pixhd.hpp"

namespace helio {

enum class Architecture { Pix2Pix, Pix2PixHD };
std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

enum class SelectionMetric { PCC, PPE10, SSIM, RE };
std::string to_string(SelectionMetric m);
SelectionMetric parse_selection_metric(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t checkpoint_interval = 10;
  std::size_t batch_size = 1;
  float learning_rate = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  std::uint64_t seed = 1;
  Architecture architecture = Architecture::Pix2Pix;
  losses::LossWeights loss_weights;
  std::size_t image_size = 1024;
  losses::AdversarialForm adversarial_form = losses::AdversarialForm::NonSaturating;
  losses::FeatureMatchingNorm fm_norm = losses::FeatureMatchingNorm::PerLayerMean;
  SelectionMetric selection_metric = SelectionMetric::PCC;

  GeneratorSpec unet;
  DiscriminatorSpec patch;
  HDGeneratorSpec hd;
  MultiScaleDiscriminatorSpec multiscale;

  // Throws ConfigError; checks the architecture accepts image_size.
  void validate() const;
};

// key=value text with every field; dotted keys for the model specs.
std::string to_config_text(const TrainConfig& cfg);
// Missing keys keep their defaults. Unknown keys and bad values are all
// reported in one ConfigError.
TrainConfig parse_config(const std::string& text);
TrainConfig read_config(const std::filesystem::path& path);
void write_config(const TrainConfig& cfg, const std::filesystem::path& path);

std::unique_ptr<Generator> make_generator(const TrainConfig& cfg);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  Architecture architecture = Architecture::Pix2Pix;
  std::uint32_t epoch = 0;
  std::string config_text;
  // Generator parameters and buffers by name, then optimizer moments under
  // "adam.m.<name>" / "adam.v.<name>".
  std::map<std::string, Tensor> tensors;
  std::int64_t adam_step = 0;
};

inline constexpr char kCheckpointMagic[4] = {'H', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
// Throws MissingFile, IoFailure (truncated/bad magic) or DigestMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture_checkpoint(Architecture arch, std::uint32_t epoch, const TrainConfig& cfg, Generator& g,
                              nn::Adam* opt);
// Copies parameters and buffers into `g`. Throws ArchitectureMismatch on a
// wrong tag, a missing tensor or a shape difference.
void restore_generator(const Checkpoint& ck, Architecture expected, Generator& g);

struct LoadedGenerator {
  TrainConfig config;
  std::uint32_t epoch = 0;
  std::unique_ptr<Generator> generator;
};
// Rebuilds the generator from the checkpoint's config snapshot. If `expected`
// is given and differs from the stored tag, throws ArchitectureMismatch.
LoadedGenerator load_generator(const std::filesystem::path& path, std::optional<Architecture> expected = {});

// ------------------------------------------------------------------- training

struct LossRow {
  std::size_t step = 0, epoch = 0;
  losses::LossBundle losses;
};

void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, const LossRow& r);

// One model pair with its optimizers.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  // One discriminator update then one generator update on a (B, 3, H, W) batch.
  losses::LossBundle step(const Tensor& x, const Tensor& y);
  // The two halves of `step`; the generator half reuses the fake from the
  // discriminator half.
  double discriminator_step(const Tensor& x, const Tensor& y);
  losses::LossBundle generator_step(const Tensor& x, const Tensor& y);

  Generator& generator() { return *gen_; }
  nn::Module& discriminator();
  nn::Adam& generator_optimizer() { return *opt_g_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  std::unique_ptr<Generator> gen_;
  std::unique_ptr<PatchDiscriminator> patch_;
  std::unique_ptr<MultiScaleDiscriminator> multi_;
  std::unique_ptr<nn::Adam> opt_g_, opt_d_;
  Tensor fake_;
};

struct TrainResult {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<LossRow> log;
  std::filesystem::path log_path;
};

struct TrainHooks {
  // Called after every logged step.
  std::function<void(const LossRow&)> on_step;
};

// Checkpoints go to <run_dir>/checkpoints/epoch_NNNN.htck, the loss log to
// <run_dir>/logs/train_log.csv. Throws EmptyTrainSet, DivergenceDetected.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const std::filesystem::path& run_dir,
                  const TrainHooks& hooks = {});

std::string checkpoint_name(std::size_t epoch);

// Eval-mode translator over a loaded generator.
metrics::Translator make_translator(Generator& g);

struct CheckpointScore {
  std::filesystem::path path;
  std::uint32_t epoch = 0;
  metrics::MetricRow aggregate;
};

struct Selection {
  std::size_t index = 0;
  std::vector<CheckpointScore> table;
};

// Max of PCC/PPE10/SSIM or min |RE|; ties go to the later epoch.
Selection select_best_checkpoint(const std::vector<std::filesystem::path>& checkpoints, const PairSet& eval,
                                 const NormalizationRecord& norm, Instrument target, SelectionMetric metric);
// Index of the winner in an already-scored table.
std::size_t pick_best(const std::vector<CheckpointScore>& table, SelectionMetric metric);

}  // namespace helio
