#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "xres/dataset.hpp"
#include "xres/losses.hpp"
#include "xres/networks.hpp"
#include "xres/optimizer.hpp"

namespace xres {

// Which terms of the total objective a stage optimizes.
struct LossSet {
  bool coupling = false;
  bool attribute = false;
  bool adversarial = false;
  bool perceptual = false;
  bool attribute_perceptual = false;
  bool reconstruction = false;

  static LossSet all() { return {true, true, true, true, true, true}; }
  friend bool operator==(const LossSet&, const LossSet&) = default;
};

// Components whose parameters a stage may update.
struct Trainable {
  bool g_lr = false;
  bool g_hr = false;
  bool d_lr = false;
  bool d_hr = false;
  bool h_lr = false;
  bool h_hr = false;

  static Trainable all() { return {true, true, true, true, true, true}; }
  friend bool operator==(const Trainable&, const Trainable&) = default;
};

struct Stage {
  std::string name;
  int epochs = 1;
  LossSet losses;
  Trainable trainable;
  // Sub-networks whose per-network terms are evaluated in this stage.
  bool lr_side = true;
  bool hr_side = true;

  void validate() const;
  friend bool operator==(const Stage&, const Stage&) = default;
};

// init-lr, init-hr (per-network GAN/L2/perceptual), coupling (+cpl),
// attributes (+a, pa, heads only), joint (everything).
std::vector<Stage> default_schedule(int init_epochs = 5, int coupling_epochs = 40,
                                    int attribute_epochs = 10, int joint_epochs = 30);

struct AttributePretrainOptions {
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 2e-3;
};

struct TrainConfig {
  LossWeights weights;
  int batch_size = 6;
  AdamOptions adam;
  std::vector<Stage> schedule = default_schedule();
  std::uint64_t seed = 1;
  int max_epochs_per_stage = 1000;
  AttributePretrainOptions attribute_pretrain;

  void validate() const;
};

// Architecture of every network in a run.
struct ModelSpec {
  GeneratorSpec lr;
  GeneratorSpec hr;
  DiscriminatorOptions discriminator;
  FeatureNetworkSpec feature;
  AttributeNetworkSpec attribute;

  // Defaults for a given LR/HR geometry.
  static ModelSpec for_sizes(Size2 lr_size, Size2 hr_size, int channels);
  void validate() const;
};

// The fixed networks consumed by the perceptual terms.
struct FrozenNetworks {
  FeatureNetwork feature;
  AttributeNetwork attribute;
};

struct OptimizerStates {
  Adam g_lr, g_hr, d_lr, d_hr, h_lr, h_hr;
  static OptimizerStates for_networks(const CoupledNetworks& nets);
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelSpec model;
  TrainConfig config;
  CoupledNetworks networks;
  FrozenNetworks frozen;
  OptimizerStates optimizer;
  int stage_index = 0;
  int epoch = 0;
  std::int64_t step = 0;
};

// Fresh networks, optimizer state and frozen networks for a run. The
// attribute network is randomly initialized (not yet pretrained).
Checkpoint initial_checkpoint(const ModelSpec& model, const TrainConfig& config);

// Losses of one step and the gradients of every group the stage updates:
// generators and heads get d(total)/d(params), discriminators
// d(discriminator loss)/d(params). Groups the stage leaves alone are empty.
// Throws NumericError on a non-finite loss or gradient.
struct StepGradients {
  LossReport report;
  std::vector<double> g_lr, g_hr, d_lr, d_hr, h_lr, h_hr;
};
StepGradients step_gradients(const Checkpoint& state, const PairBatch& batch, const Stage& stage,
                             std::uint64_t step_seed);

// One optimization step on a batch: forward once, compute discriminator and
// generator/head gradients at the current parameters, then update the
// trainable discriminators followed by the trainable generators and heads.
// Throws NumericError (before touching any parameter) when a loss is
// non-finite. The report holds pre-update values; inactive terms are 0.
LossReport train_step(Checkpoint& state, const PairBatch& batch, const Stage& stage,
                      std::uint64_t step_seed);

// Supervised pretraining of the attribute network on (image, attributes).
// Returns the final-epoch mean training loss.
double pretrain_attribute_network(AttributeNetwork& network, const std::vector<ImageGrid>& images,
                                  const std::vector<AttributeVector>& truth,
                                  const AttributePretrainOptions& options, std::uint64_t seed);

struct StageMetrics {
  std::string stage;
  double rank1 = 0.0;
  double auc = 0.0;
  double attribute_accuracy = 0.0;
};

struct TrainOptions {
  std::ostream* run_log = nullptr;  // NDJSON, one object per step
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  Checkpoint checkpoint;              // last good state
  std::vector<StageMetrics> metrics;  // one per completed stage with validation data
  double attribute_pretrain_accuracy = 0.0;
  std::int64_t steps = 0;
  bool diverged = false;
  std::string diverged_component;
  std::string diverged_message;
};

// Pretrains and freezes the attribute network on the training HR images,
// then runs the stage schedule. Validation metrics are computed at the end of
// each stage when a validation split is supplied.
TrainResult train_stagewise(const DatasetSplit& train, const DatasetSplit* validation,
                            const ModelSpec& model, const TrainConfig& config,
                            const TrainOptions& options = {});

// Versioned binary container with an embedded JSON snapshot of the model
// spec and training config.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string to_json(const LossReport& report);

}  // namespace xres
