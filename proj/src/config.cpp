#include "xres/config.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace xres {
namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

long long parse_integer(const std::string& key, const std::string& value) {
  long long out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) bad_value(key, value, "an integer");
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  const long long v = parse_integer(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    bad_value(key, value, "a 32-bit integer");
  }
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) bad_value(key, value, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  if (value.empty()) bad_value(key, value, "a number");
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size()) bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "a boolean");
}

Size2 parse_size(const std::string& key, const std::string& value) {
  const auto x = value.find('x');
  if (x == std::string::npos) bad_value(key, value, "HEIGHTxWIDTH");
  return {parse_int(key, value.substr(0, x)), parse_int(key, value.substr(x + 1))};
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string format_size(Size2 s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    auto add_int = [&](const std::string& key, auto accessor) {
      f[key] = {[=](RunConfig& c, const std::string& v) { accessor(c) = parse_int(key, v); },
                [=](const RunConfig& c) {
                  return std::to_string(accessor(c));
                }};
    };
    auto add_double = [&](const std::string& key, auto accessor) {
      f[key] = {[=](RunConfig& c, const std::string& v) { accessor(c) = parse_double(key, v); },
                [=](const RunConfig& c) {
                  return format_double(accessor(c));
                }};
    };
    auto add_bool = [&](const std::string& key, auto accessor) {
      f[key] = {[=](RunConfig& c, const std::string& v) { accessor(c) = parse_bool(key, v); },
                [=](const RunConfig& c) {
                  return std::string(accessor(c) ? "true" : "false");
                }};
    };
    auto add_size = [&](const std::string& key, auto accessor) {
      f[key] = {[=](RunConfig& c, const std::string& v) { accessor(c) = parse_size(key, v); },
                [=](const RunConfig& c) {
                  return format_size(accessor(c));
                }};
    };
    auto add_path = [&](const std::string& key, auto accessor) {
      f[key] = {[=](RunConfig& c, const std::string& v) { accessor(c) = v; },
                [=](const RunConfig& c) {
                  return accessor(c).string();
                }};
    };

    f["seed"] = {[](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    add_path("output_dir", [](auto& c) -> auto& { return c.output_dir; });

    f["dataset.source"] = {
        [](RunConfig& c, const std::string& v) {
          if (v == "synthetic") {
            c.dataset.source = DatasetSource::kSynthetic;
          } else if (v == "directory") {
            c.dataset.source = DatasetSource::kDirectory;
          } else {
            bad_value("dataset.source", v, "synthetic or directory");
          }
        },
        [](const RunConfig& c) -> std::string {
          if (!c.dataset.source) return "";
          return *c.dataset.source == DatasetSource::kSynthetic ? "synthetic" : "directory";
        }};
    add_int("dataset.n_identities", [](auto& c) -> auto& { return c.dataset.n_identities; });
    add_int("dataset.images_per_identity",
            [](auto& c) -> auto& { return c.dataset.images_per_identity; });
    add_size("dataset.hr_size", [](auto& c) -> auto& { return c.dataset.hr_size; });
    add_size("dataset.lr_size", [](auto& c) -> auto& { return c.dataset.lr_size; });
    add_int("dataset.channels", [](auto& c) -> auto& { return c.dataset.channels; });
    add_path("dataset.images", [](auto& c) -> auto& { return c.dataset.images; });
    add_path("dataset.attributes", [](auto& c) -> auto& { return c.dataset.attributes; });
    add_int("dataset.holdout_per_identity",
            [](auto& c) -> auto& { return c.dataset.holdout_per_identity; });

    add_int("network.depth", [](auto& c) -> auto& { return c.network.depth; });
    add_int("network.base_width", [](auto& c) -> auto& { return c.network.base_width; });
    add_int("network.hr_depth", [](auto& c) -> auto& { return c.network.hr_depth; });
    add_int("network.hr_base_width",
            [](auto& c) -> auto& { return c.network.hr_base_width; });
    add_int("network.embedding_dim",
            [](auto& c) -> auto& { return c.network.embedding_dim; });
    add_bool("network.skip_connections",
             [](auto& c) -> auto& { return c.network.skip_connections; });
    add_bool("network.instance_norm",
             [](auto& c) -> auto& { return c.network.instance_norm; });
    f["network.stochasticity"] = {
        [](RunConfig& c, const std::string& v) {
          if (v == "none") {
            c.network.stochasticity = Stochasticity::kNone;
          } else if (v == "dropout") {
            c.network.stochasticity = Stochasticity::kDropout;
          } else {
            bad_value("network.stochasticity", v, "none or dropout");
          }
        },
        [](const RunConfig& c) -> std::string {
          return c.network.stochasticity == Stochasticity::kNone ? "none" : "dropout";
        }};
    add_double("network.dropout_rate",
               [](auto& c) -> auto& { return c.network.dropout_rate; });
    add_int("network.discriminator_base_width",
            [](auto& c) -> auto& { return c.network.discriminator.base_width; });
    add_int("network.patch_divisor",
            [](auto& c) -> auto& { return c.network.discriminator.patch_divisor; });
    add_double("network.leaky_slope",
               [](auto& c) -> auto& { return c.network.discriminator.leaky_slope; });

    add_int("training.batch_size", [](auto& c) -> auto& { return c.training.batch_size; });
    add_double("training.learning_rate",
               [](auto& c) -> auto& { return c.training.adam.learning_rate; });
    add_double("training.beta1", [](auto& c) -> auto& { return c.training.adam.beta1; });
    add_double("training.beta2", [](auto& c) -> auto& { return c.training.adam.beta2; });
    add_double("training.epsilon", [](auto& c) -> auto& { return c.training.adam.epsilon; });
    add_double("training.lambda1",
               [](auto& c) -> auto& { return c.training.weights.attribute; });
    add_double("training.lambda2",
               [](auto& c) -> auto& { return c.training.weights.adversarial; });
    add_double("training.lambda3",
               [](auto& c) -> auto& { return c.training.weights.perceptual; });
    add_double("training.lambda4",
               [](auto& c) -> auto& { return c.training.weights.attribute_perceptual; });
    add_double("training.lambda5",
               [](auto& c) -> auto& { return c.training.weights.reconstruction; });
    add_double("training.margin", [](auto& c) -> auto& { return c.training.weights.margin; });
    add_int("training.init_epochs", [](auto& c) -> auto& { return c.epochs.init; });
    add_int("training.coupling_epochs", [](auto& c) -> auto& { return c.epochs.coupling; });
    add_int("training.attribute_epochs",
            [](auto& c) -> auto& { return c.epochs.attributes; });
    add_int("training.joint_epochs", [](auto& c) -> auto& { return c.epochs.joint; });
    add_int("training.max_epochs_per_stage",
            [](auto& c) -> auto& { return c.training.max_epochs_per_stage; });
    add_int("training.pretrain_epochs",
            [](auto& c) -> auto& { return c.training.attribute_pretrain.epochs; });
    add_int("training.pretrain_batch_size",
            [](auto& c) -> auto& { return c.training.attribute_pretrain.batch_size; });
    add_double("training.pretrain_learning_rate",
               [](auto& c) -> auto& { return c.training.attribute_pretrain.learning_rate; });

    add_int("evaluation.max_rank", [](auto& c) -> auto& { return c.evaluation.max_rank; });
    add_double("evaluation.threshold",
               [](auto& c) -> auto& { return c.evaluation.threshold; });
    return f;
  }();
  return fields;
}

}  // namespace

SyntheticOptions RunConfig::synthetic_options() const {
  SyntheticOptions o;
  o.n_identities = dataset.n_identities;
  o.images_per_identity = dataset.images_per_identity;
  o.hr_size = dataset.hr_size;
  o.lr_size = dataset.lr_size;
  o.channels = dataset.channels;
  o.seed = seed;
  return o;
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec m;
  m.lr.input = dataset.lr_size;
  m.lr.channels = dataset.channels;
  m.lr.depth = network.depth;
  m.lr.base_width = network.base_width;
  m.lr.embedding_dim = network.embedding_dim;
  m.lr.skip_connections = network.skip_connections;
  m.lr.instance_norm = network.instance_norm;
  m.lr.stochasticity = network.stochasticity;
  m.lr.dropout_rate = network.dropout_rate;
  m.hr = m.lr;
  m.hr.input = dataset.hr_size;
  m.hr.base_width = network.hr_base_width;
  if (network.hr_depth > 0) {
    m.hr.depth = network.hr_depth;
  } else {
    const int lr_bottleneck = dataset.lr_size.height >> network.depth;
    const auto fits = [&](int d) {
      return dataset.hr_size.height % (1 << d) == 0 && dataset.hr_size.width % (1 << d) == 0;
    };
    while ((dataset.hr_size.height >> m.hr.depth) > lr_bottleneck && fits(m.hr.depth + 1)) {
      ++m.hr.depth;
    }
  }
  m.discriminator = network.discriminator;
  m.feature.input = dataset.lr_size;
  m.feature.channels = dataset.channels;
  m.attribute.input = dataset.hr_size;
  m.attribute.channels = dataset.channels;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c = training;
  c.seed = seed;
  c.schedule = default_schedule(epochs.init, epochs.coupling, epochs.attributes, epochs.joint);
  return c;
}

void RunConfig::validate() const {
  if (!dataset.source) throw ConfigError("config key 'dataset.source' is required");
  if (*dataset.source == DatasetSource::kSynthetic && dataset.n_identities < 2) {
    throw ConfigError("config key 'dataset.n_identities': at least 2 identities are needed to "
                      "form impostor pairs");
  }
  if (dataset.images_per_identity < 1) {
    throw ConfigError("config key 'dataset.images_per_identity' must be >= 1");
  }
  if (*dataset.source == DatasetSource::kDirectory &&
      (dataset.images.empty() || dataset.attributes.empty())) {
    throw ConfigError("directory datasets need 'dataset.images' and 'dataset.attributes'");
  }
  if (dataset.holdout_per_identity < 1) {
    throw ConfigError("config key 'dataset.holdout_per_identity' must be >= 1");
  }
  if (evaluation.max_rank < 1) throw ConfigError("config key 'evaluation.max_rank' must be >= 1");
  if (!(evaluation.threshold > 0.0 && evaluation.threshold < 1.0)) {
    throw ConfigError("config key 'evaluation.threshold' must be in (0,1)");
  }
  model_spec().validate();
  train_config().validate();
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& fields = registry();
  const auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, value);
}

std::pair<std::string, std::string> split_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected section.key=value, got '" + assignment + "'");
  }
  return {assignment.substr(0, eq), assignment.substr(eq + 1)};
}

RunConfig parse_run_config(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigBase().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig config;
  for (const auto& item : items) {
    // Section open/close markers.
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    if (item.inputs.size() != 1) {
      throw ConfigError("config key '" + key + "' must have exactly one value");
    }
    set_config_value(config, key, item.inputs.front());
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << f.rdbuf();
  return parse_run_config(text.str());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, field] : registry()) keys.push_back(key);
  return keys;
}

std::string to_ini(const RunConfig& config) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, field] : registry()) {
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    const std::string value = field.get(config);
    if (key == "dataset.source" && value.empty()) continue;
    sections[section].emplace_back(name, value);
  }
  std::ostringstream os;
  auto quoted = [](const std::string& v) {
    std::string q = "\"";
    for (char ch : v) {
      if (ch == '"' || ch == '\\') q += '\\';
      q += ch;
    }
    return q + "\"";
  };
  for (const auto& [name, value] : sections[""]) os << name << " = " << quoted(value) << '\n';
  for (const auto& [section, entries] : sections) {
    if (section.empty()) continue;
    os << "\n[" << section << "]\n";
    for (const auto& [name, value] : entries) os << name << " = " << quoted(value) << '\n';
  }
  return os.str();
}

std::filesystem::path default_output_root() {
  if (const char* env = std::getenv("XRES_OUTPUT_ROOT"); env != nullptr && *env != '\0') {
    return env;
  }
  return "runs";
}

std::filesystem::path resolve_output_dir(const RunConfig& config) {
  return config.output_dir.empty() ? default_output_root() : config.output_dir;
}

std::pair<DatasetSplit, DatasetSplit> load_run_dataset(const RunConfig& config) {
  config.validate();
  DatasetSplit all;
  if (*config.dataset.source == DatasetSource::kSynthetic) {
    all = generate_synthetic_dataset(config.synthetic_options());
  } else {
    DirectoryLoadResult loaded = load_directory_dataset(
        config.dataset.images, config.dataset.attributes, config.dataset.lr_size,
        config.dataset.hr_size);
    all = std::move(loaded.split);
    if (all.records.front().hr.channels() != config.dataset.channels) {
      throw ConfigError("config key 'dataset.channels' is " +
                        std::to_string(config.dataset.channels) + " but the images have " +
                        std::to_string(all.records.front().hr.channels()));
    }
  }
  if (all.identity_count() < 2) {
    throw DataError("dataset has fewer than 2 identities; impostor pairs are impossible");
  }
  return holdout_split(all, config.dataset.holdout_per_identity);
}

}  // namespace xres
