#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xres/dataset.hpp"
#include "xres/evaluator.hpp"
#include "xres/trainer.hpp"

namespace xres {

enum class DatasetSource { kSynthetic, kDirectory };

struct DatasetConfig {
  std::optional<DatasetSource> source;  // required, no default
  int n_identities = 20;
  int images_per_identity = 10;
  Size2 hr_size{64, 64};
  Size2 lr_size{16, 16};
  int channels = 1;
  std::filesystem::path images;      // directory source: image folder
  std::filesystem::path attributes;  // directory source: attribute CSV
  int holdout_per_identity = 3;
};

struct NetworkConfig {
  int depth = 3;  // LR generator
  int base_width = 8;
  int hr_depth = 0;  // 0 = match the LR bottleneck size
  int hr_base_width = 4;
  int embedding_dim = 128;
  bool skip_connections = true;
  bool instance_norm = true;
  Stochasticity stochasticity = Stochasticity::kDropout;
  double dropout_rate = 0.3;
  DiscriminatorOptions discriminator;
};

struct StageEpochs {
  int init = 5;
  int coupling = 40;
  int attributes = 10;
  int joint = 30;
};

// Everything a command needs, read from a sectioned key = value file:
//   seed, output_dir            (top level)
//   [dataset] [network] [training] [evaluation]
struct RunConfig {
  DatasetConfig dataset;
  NetworkConfig network;
  TrainConfig training;  // schedule and seed are derived, see train_config()
  StageEpochs epochs;
  EvalSettings evaluation;
  std::filesystem::path output_dir;  // empty = default output root
  std::uint64_t seed = 1;

  SyntheticOptions synthetic_options() const;
  ModelSpec model_spec() const;
  TrainConfig train_config() const;
  void validate() const;
};

// Parses the file format; unknown keys and malformed values raise
// ConfigError naming the key.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

// Applies one `section.key` assignment on top of a parsed config.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

// Splits `section.key=value`.
std::pair<std::string, std::string> split_assignment(const std::string& assignment);

std::vector<std::string> config_keys();

// Serializes every key so the file parses back to an equal config.
std::string to_ini(const RunConfig& config);

// Output root used when output_dir is empty: $XRES_OUTPUT_ROOT or "runs".
std::filesystem::path default_output_root();
std::filesystem::path resolve_output_dir(const RunConfig& config);

// Loads the configured dataset and splits it into train/test.
std::pair<DatasetSplit, DatasetSplit> load_run_dataset(const RunConfig& config);

}  // namespace xres
