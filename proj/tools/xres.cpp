// Command-line entry point: synth-data, train, eval, ablate, predict.

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xres/config.hpp"
#include "xres/dataset.hpp"
#include "xres/evaluator.hpp"
#include "xres/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace xres;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::optional<double> lambda[5];
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
  auto* c = cmd->add_option("-c,--config", o.config_path, "Run config file");
  if (config_required) c->required();
  cmd->add_option("--set", o.assignments, "Override a config key: section.key=value");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("-o,--output", o.output, "Output directory");
  for (int i = 0; i < 5; ++i) {
    cmd->add_option("--lambda" + std::to_string(i + 1), o.lambda[i],
                    "Weight lambda" + std::to_string(i + 1));
  }
}

// Precedence: flag > --set > config file > default.
RunConfig resolve_config(const CommonOptions& o) {
  RunConfig config = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  for (const auto& a : o.assignments) {
    const auto [key, value] = split_assignment(a);
    set_config_value(config, key, value);
  }
  if (o.seed) config.seed = *o.seed;
  if (!o.output.empty()) config.output_dir = o.output;
  LossWeights& w = config.training.weights;
  double* lambdas[5] = {&w.attribute, &w.adversarial, &w.perceptual, &w.attribute_perceptual,
                        &w.reconstruction};
  for (int i = 0; i < 5; ++i) {
    if (o.lambda[i]) *lambdas[i] = *o.lambda[i];
  }
  return config;
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

// The trailing checksum identifies a checkpoint's content.
std::string checkpoint_id(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f || f.tellg() < 8) return "";
  f.seekg(-8, std::ios::end);
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return hex(v);
}

int cmd_synth_data(const CommonOptions& o) {
  RunConfig config = resolve_config(o);
  config.validate();
  if (*config.dataset.source != DatasetSource::kSynthetic) {
    throw ConfigError("synth-data needs dataset.source = synthetic");
  }
  const DatasetSplit data = generate_synthetic_dataset(config.synthetic_options());
  const fs::path dir = resolve_output_dir(config) / "dataset";
  make_dirs(dir);
  save_directory_dataset(data, dir);
  ordered_json manifest;
  manifest["records"] = data.records.size();
  manifest["n_identities"] = config.dataset.n_identities;
  manifest["images_per_identity"] = config.dataset.images_per_identity;
  manifest["hr_size"] = {config.dataset.hr_size.height, config.dataset.hr_size.width};
  manifest["lr_size"] = {config.dataset.lr_size.height, config.dataset.lr_size.width};
  manifest["channels"] = config.dataset.channels;
  manifest["seed"] = config.seed;
  manifest["digest"] = hex(dataset_digest(data));
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << data.records.size() << " records written to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o) {
  RunConfig config = resolve_config(o);
  config.validate();
  auto [train, test] = load_run_dataset(config);
  const fs::path dir = resolve_output_dir(config);
  make_dirs(dir);
  write_text(dir / "config.ini", to_ini(config));
  std::ofstream log(dir / "run_log.ndjson");
  if (!log) throw DataError("cannot write run log in " + dir.string());
  TrainOptions options;
  options.run_log = &log;
  options.progress = [](const std::string& message) { spdlog::info("{}", message); };
  spdlog::info("training on {} records ({} identities), testing on {}", train.records.size(),
               train.identity_count(), test.records.size());
  const TrainResult result =
      train_stagewise(train, &test, config.model_spec(), config.train_config(), options);
  save_checkpoint(result.checkpoint, dir / "checkpoint.bin");

  std::ofstream csv(dir / "stage_metrics.csv");
  csv.precision(17);
  csv << "stage,rank1,auc,attribute_accuracy\n";
  ordered_json summary;
  summary["steps"] = result.steps;
  summary["attribute_pretrain_accuracy"] = result.attribute_pretrain_accuracy;
  summary["diverged"] = result.diverged;
  if (result.diverged) {
    summary["diverged_component"] = result.diverged_component;
    summary["diverged_message"] = result.diverged_message;
  }
  summary["stages"] = ordered_json::array();
  for (const auto& m : result.metrics) {
    csv << m.stage << ',' << m.rank1 << ',' << m.auc << ',' << m.attribute_accuracy << '\n';
    summary["stages"].push_back({{"stage", m.stage},
                                 {"rank1", m.rank1},
                                 {"auc", m.auc},
                                 {"attribute_accuracy", m.attribute_accuracy}});
  }
  write_text(dir / "train_summary.json", summary.dump(2) + "\n");
  if (result.diverged) {
    spdlog::error("training diverged in {}: {} (last good checkpoint saved)",
                  result.diverged_component, result.diverged_message);
    return static_cast<int>(ExitCode::kDivergence);
  }
  spdlog::info("checkpoint written to {}", (dir / "checkpoint.bin").string());
  return 0;
}

void check_compatible(const Checkpoint& c, const RunConfig& config) {
  const ModelSpec expected = config.model_spec();
  if (c.model.lr.embedding_dim != expected.lr.embedding_dim) {
    throw IncompatibleError("checkpoint embedding dimension " +
                            std::to_string(c.model.lr.embedding_dim) +
                            " differs from config network.embedding_dim " +
                            std::to_string(expected.lr.embedding_dim));
  }
  if (c.model.lr.input != expected.lr.input || c.model.hr.input != expected.hr.input ||
      c.model.lr.channels != expected.lr.channels) {
    throw IncompatibleError("checkpoint image geometry differs from the configured dataset");
  }
}

int cmd_eval(const CommonOptions& o, std::string checkpoint_path, const std::string& mode) {
  RunConfig config = resolve_config(o);
  config.validate();
  const fs::path dir = resolve_output_dir(config);
  if (checkpoint_path.empty()) checkpoint_path = (dir / "checkpoint.bin").string();
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  check_compatible(checkpoint, config);
  auto [train, test] = load_run_dataset(config);
  if (test.records.empty()) throw DataError("test split is empty");

  const fs::path out = dir / "eval";
  make_dirs(out);
  const bool all = mode == "all";
  EvalReport report = evaluate(checkpoint, train, test, config.evaluation);
  if (!all && mode != "identify") report.cmc.reset();
  if (!all && mode != "verify") report.roc.reset();
  if (!all && mode != "attributes") report.attributes.reset();
  if (all || mode == "scenarios") {
    ScenarioOptions so;
    so.threshold = config.evaluation.threshold;
    so.finetune = checkpoint.config.attribute_pretrain;
    so.seed = config.seed;
    report.scenarios = run_attribute_scenarios(checkpoint, train, test, so);
    write_scenarios_csv(report.scenarios, out / "scenarios.csv");
  }
  if (report.cmc) write_cmc_csv(*report.cmc, out / "cmc.csv");
  if (report.roc) write_roc_csv(*report.roc, out / "roc.csv");
  report.metadata.seed = config.seed;
  report.metadata.checkpoint_id = checkpoint_id(checkpoint_path);
  report.metadata.dataset_id = hex(dataset_digest(test));
  report.metadata.timestamp = utc_timestamp();
  write_text(out / "report.json", to_json(report) + "\n");

  if (report.cmc) std::cout << "rank-1 " << report.cmc->rank(1) << "\n";
  if (report.roc) std::cout << "AUC " << report.roc->auc << "\n";
  if (report.attributes) std::cout << "attribute accuracy " << report.attributes->mean << "\n";
  for (const auto& row : report.scenarios) {
    std::cout << row.name << " " << row.accuracy.mean << "\n";
  }
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text, std::uint64_t fallback) {
  if (text.empty()) return {fallback};
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    RunConfig scratch;
    set_config_value(scratch, "seed", item);
    seeds.push_back(scratch.seed);
  }
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  return seeds;
}

int cmd_ablate(const CommonOptions& o, const std::string& seeds_text) {
  RunConfig config = resolve_config(o);
  config.validate();
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text, config.seed);
  auto [train, test] = load_run_dataset(config);
  const AblationResult result = run_ablation(train, test, config.model_spec(),
                                             config.train_config(), canonical_variants(), seeds);
  const fs::path out = resolve_output_dir(config) / "ablation";
  make_dirs(out);
  write_ablation(result, out);
  for (const auto& s : result.summaries) {
    std::cout << s.variant << " median AUC " << s.median_auc << " (" << s.aucs.size() << " ok, "
              << s.failures << " failed)\n";
  }
  if (result.any_failed()) {
    spdlog::warn("some ablation runs failed; see {}", (out / "summary.csv").string());
    return static_cast<int>(ExitCode::kDivergence);
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& image_path,
                const std::string& out_path, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("--threshold must be in (0,1)");
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const ImageGrid image = load_png(image_path);
  const GeneratorSpec& spec = checkpoint.model.lr;
  if (image.channels() != spec.channels) {
    throw InvalidInput("image has " + std::to_string(image.channels()) +
                       " channels, the model expects " + std::to_string(spec.channels));
  }
  ImageGrid input = image;
  const bool resized = image.size() != spec.input;
  if (resized) {
    spdlog::warn("image is {}x{}, resizing to the LR input size {}x{}", image.height(),
                 image.width(), spec.input.height, spec.input.width);
    input = ImageGrid(area_resize(image.pixels(), spec.input));
  }
  const std::vector<double> p =
      checkpoint.networks.h_lr.forward(embed(checkpoint.networks.g_lr, input));
  ordered_json j;
  j["image"] = image_path;
  j["resized"] = resized;
  j["threshold"] = threshold;
  ordered_json probs, bits;
  for (int t = 0; t < kNumAttributes; ++t) {
    const std::string name(kAttributeNames[t]);
    probs[name] = p[static_cast<std::size_t>(t)];
    bits[name] = p[static_cast<std::size_t>(t)] >= threshold ? 1 : 0;
  }
  j["probabilities"] = probs;
  j["attributes"] = bits;
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    const fs::path tmp = fs::path(out_path).concat(".tmp");
    write_text(tmp, text);
    fs::rename(tmp, out_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("xres"));

  CLI::App app{"Cross-resolution face recognition with coupled attribute-guided GANs"};
  app.require_subcommand(1);

  CommonOptions synth_opts, train_opts, eval_opts, ablate_opts;
  auto* synth = app.add_subcommand("synth-data", "Render the synthetic dataset to disk");
  add_common(synth, synth_opts, true);

  auto* train = app.add_subcommand("train", "Run the stage-wise training schedule");
  add_common(train, train_opts, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval, eval_opts, true);
  std::string eval_checkpoint;
  std::string eval_mode = "all";
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint (default <output>/checkpoint.bin)");
  eval->add_option("--mode", eval_mode, "identify | verify | attributes | scenarios | all")
      ->check(CLI::IsMember({"identify", "verify", "attributes", "scenarios", "all"}));

  auto* ablate = app.add_subcommand("ablate", "Train and compare the loss ablation variants");
  add_common(ablate, ablate_opts, true);
  std::string seeds;
  ablate->add_option("--seeds", seeds, "Comma-separated seeds (default: the run seed)");

  auto* predict = app.add_subcommand("predict", "Predict attributes of an LR face image");
  std::string predict_checkpoint, predict_image, predict_out;
  double predict_threshold = 0.5;
  predict->add_option("--checkpoint", predict_checkpoint, "Checkpoint file")->required();
  predict->add_option("--image", predict_image, "PNG image")->required();
  predict->add_option("--out", predict_out, "Write JSON here instead of stdout");
  predict->add_option("--threshold", predict_threshold, "Decision threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kConfigError);
  }

  try {
    if (*synth) return cmd_synth_data(synth_opts);
    if (*train) return cmd_train(train_opts);
    if (*eval) return cmd_eval(eval_opts, eval_checkpoint, eval_mode);
    if (*ablate) return cmd_ablate(ablate_opts, seeds);
    if (*predict) {
      return cmd_predict(predict_checkpoint, predict_image, predict_out, predict_threshold);
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ExitCode::kGeneric);
  }
  return 0;
}
