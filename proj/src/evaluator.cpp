#include "xres/evaluator.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "xres/random.hpp"

namespace xres {

using nlohmann::ordered_json;

Embedding embed(const Generator& generator, const ImageGrid& image) {
  return generator.forward(image, false).embedding;
}

std::vector<int> Gallery::identities() const {
  std::vector<int> ids;
  for (const auto& e : entries) {
    if (std::find(ids.begin(), ids.end(), e.identity) == ids.end()) ids.push_back(e.identity);
  }
  return ids;
}

Gallery build_gallery(const Generator& hr_generator, const DatasetSplit& split) {
  Gallery g;
  g.entries.reserve(split.records.size());
  for (const auto& r : split.records) g.entries.push_back({r.identity, embed(hr_generator, r.hr)});
  return g;
}

std::vector<RankedEntry> identify(const Embedding& probe, const Gallery& gallery) {
  require(!gallery.entries.empty(), "gallery is empty");
  std::vector<RankedEntry> ranked;
  ranked.reserve(gallery.entries.size());
  for (std::size_t i = 0; i < gallery.entries.size(); ++i) {
    const Embedding& e = gallery.entries[i].embedding;
    require(e.size() == probe.size(), "probe and gallery embeddings differ in length");
    double d2 = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
      const double d = probe[k] - e[k];
      d2 += d * d;
    }
    ranked.push_back({i, gallery.entries[i].identity, d2});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.distance < b.distance; });
  return ranked;
}

std::vector<RankedEntry> identify(const ImageGrid& probe_lr, const Gallery& gallery,
                                  const Generator& lr_generator) {
  return identify(embed(lr_generator, probe_lr), gallery);
}

CmcCurve cmc_curve(std::span<const Embedding> probes, std::span<const int> probe_identities,
                   const Gallery& gallery, int max_rank) {
  require(!probes.empty(), "CMC needs at least one probe");
  require(probes.size() == probe_identities.size(), "probe identities misaligned");
  require(max_rank >= 1, "max rank must be >= 1");
  const std::vector<int> known = gallery.identities();
  std::vector<int> hits(static_cast<std::size_t>(max_rank), 0);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const int truth = probe_identities[p];
    if (std::find(known.begin(), known.end(), truth) == known.end()) {
      throw InvalidInput("probe identity " + std::to_string(truth) +
                         " is not enrolled in the gallery (closed-set evaluation)");
    }
    std::vector<int> seen;
    for (const auto& r : identify(probes[p], gallery)) {
      if (std::find(seen.begin(), seen.end(), r.identity) != seen.end()) continue;
      seen.push_back(r.identity);
      if (r.identity == truth) break;
    }
    const std::size_t rank = seen.size();
    for (std::size_t r = rank; r <= hits.size(); ++r) ++hits[r - 1];
  }
  CmcCurve c;
  for (int h : hits) c.rates.push_back(static_cast<double>(h) / static_cast<double>(probes.size()));
  return c;
}

CmcCurve cmc_curve(const DatasetSplit& probes, const Gallery& gallery,
                   const Generator& lr_generator, int max_rank) {
  std::vector<Embedding> z;
  std::vector<int> ids;
  for (const auto& r : probes.records) {
    z.push_back(embed(lr_generator, r.lr));
    ids.push_back(r.identity);
  }
  return cmc_curve(z, ids, gallery, max_rank);
}

RocCurve verification_roc(std::span<const double> genuine, std::span<const double> impostor) {
  require(!genuine.empty(), "verification needs at least one genuine distance");
  require(!impostor.empty(), "verification needs at least one impostor distance");
  std::vector<double> g(genuine.begin(), genuine.end());
  std::vector<double> im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  std::vector<double> thresholds;
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  RocCurve roc;
  roc.points.push_back({0.0, 0.0});
  const double ng = static_cast<double>(g.size());
  const double ni = static_cast<double>(im.size());
  for (double t : thresholds) {
    const auto accepted_g = std::upper_bound(g.begin(), g.end(), t) - g.begin();
    const auto accepted_i = std::upper_bound(im.begin(), im.end(), t) - im.begin();
    roc.points.push_back({static_cast<double>(accepted_i) / ni,
                          static_cast<double>(accepted_g) / ng});
  }
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const RocPoint& a = roc.points[i - 1];
    const RocPoint& b = roc.points[i];
    roc.auc += (b.far - a.far) * (a.tar + b.tar) * 0.5;
  }
  return roc;
}

PairDistances probe_gallery_distances(std::span<const Embedding> probes,
                                      std::span<const int> probe_identities,
                                      const Gallery& gallery) {
  require(probes.size() == probe_identities.size(), "probe identities misaligned");
  PairDistances out;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    for (const auto& r : identify(probes[p], gallery)) {
      (r.identity == probe_identities[p] ? out.genuine : out.impostor).push_back(r.distance);
    }
  }
  return out;
}

AttributeAccuracy attribute_accuracy(std::span<const std::vector<double>> predictions,
                                     std::span<const AttributeVector> truth, double threshold) {
  require(!predictions.empty(), "attribute accuracy needs at least one sample");
  require(predictions.size() == truth.size(), "attribute predictions and truth are misaligned");
  require(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0,1)");
  AttributeAccuracy acc;
  acc.per_attribute.assign(kNumAttributes, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    require(predictions[i].size() == static_cast<std::size_t>(kNumAttributes),
            "expected " + std::to_string(kNumAttributes) + " attribute probabilities");
    for (int t = 0; t < kNumAttributes; ++t) {
      if ((predictions[i][t] >= threshold) == truth[i][t]) acc.per_attribute[t] += 1.0;
    }
  }
  for (double& a : acc.per_attribute) a /= static_cast<double>(predictions.size());
  acc.mean = std::accumulate(acc.per_attribute.begin(), acc.per_attribute.end(), 0.0) /
             kNumAttributes;
  return acc;
}

std::vector<ScenarioRow> run_attribute_scenarios(const Checkpoint& checkpoint,
                                                 const DatasetSplit& train,
                                                 const DatasetSplit& test,
                                                 const ScenarioOptions& options) {
  if (test.records.empty()) throw ConfigError("attribute scenarios need a non-empty test split");
  if (train.records.empty()) throw ConfigError("scenario 3 needs LR training images");
  const AttributeNetwork& a = checkpoint.frozen.attribute;
  std::vector<AttributeVector> truth;
  for (const auto& r : test.records) truth.push_back(r.attributes);

  auto score = [&](auto&& predict) {
    std::vector<std::vector<double>> preds;
    for (const auto& r : test.records) preds.push_back(predict(r));
    return attribute_accuracy(preds, truth, options.threshold);
  };

  AttributeNetwork tuned = a;
  std::vector<ImageGrid> lr_images;
  std::vector<AttributeVector> lr_truth;
  for (const auto& r : train.records) {
    lr_images.push_back(r.lr);
    lr_truth.push_back(r.attributes);
  }
  pretrain_attribute_network(tuned, lr_images, lr_truth, options.finetune,
                             derive_seed(options.seed, {11}));

  const Generator& g_lr = checkpoint.networks.g_lr;
  const AttributeHead& h_lr = checkpoint.networks.h_lr;
  return {
      {"attribute_net_hr", score([&](const FaceRecord& r) { return a.forward(r.hr); })},
      {"attribute_net_lr", score([&](const FaceRecord& r) { return a.forward(r.lr); })},
      {"attribute_net_finetuned_lr", score([&](const FaceRecord& r) { return tuned.forward(r.lr); })},
      {"lr_head", score([&](const FaceRecord& r) { return h_lr.forward(embed(g_lr, r.lr)); })},
  };
}

EvalReport evaluate(const Checkpoint& checkpoint, const DatasetSplit& gallery_split,
                    const DatasetSplit& test, const EvalSettings& settings) {
  require(!test.records.empty(), "evaluation needs a non-empty test split");
  const CoupledNetworks& n = checkpoint.networks;
  const Gallery gallery = build_gallery(n.g_hr, gallery_split);
  std::vector<Embedding> probes;
  std::vector<int> ids;
  std::vector<std::vector<double>> preds;
  std::vector<AttributeVector> truth;
  for (const auto& r : test.records) {
    probes.push_back(embed(n.g_lr, r.lr));
    ids.push_back(r.identity);
    preds.push_back(n.h_lr.forward(probes.back()));
    truth.push_back(r.attributes);
  }
  EvalReport report;
  report.cmc = cmc_curve(probes, ids, gallery, settings.max_rank);
  const PairDistances d = probe_gallery_distances(probes, ids, gallery);
  report.roc = verification_roc(d.genuine, d.impostor);
  report.attributes = attribute_accuracy(preds, truth, settings.threshold);
  report.metadata.seed = checkpoint.config.seed;
  return report;
}

namespace {

ordered_json accuracy_json(const AttributeAccuracy& a) {
  ordered_json per;
  for (int t = 0; t < kNumAttributes; ++t) {
    per[std::string(kAttributeNames[t])] = a.per_attribute.at(static_cast<std::size_t>(t));
  }
  return {{"per_attribute", per}, {"mean", a.mean}};
}

AttributeAccuracy accuracy_from(const nlohmann::json& j) {
  AttributeAccuracy a;
  for (auto name : kAttributeNames) {
    a.per_attribute.push_back(j.at("per_attribute").at(std::string(name)).get<double>());
  }
  a.mean = j.at("mean");
  return a;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f.precision(17);
  return f;
}

}  // namespace

std::string to_json(const EvalReport& r) {
  ordered_json j;
  j["metadata"] = {{"seed", r.metadata.seed},
                   {"checkpoint_id", r.metadata.checkpoint_id},
                   {"dataset_id", r.metadata.dataset_id},
                   {"timestamp", r.metadata.timestamp}};
  if (r.cmc) {
    ordered_json ranks = ordered_json::array();
    for (std::size_t i = 0; i < r.cmc->rates.size(); ++i) ranks.push_back(i + 1);
    j["cmc"] = {{"ranks", ranks}, {"rates", r.cmc->rates}};
  }
  if (r.roc) {
    std::vector<double> far;
    std::vector<double> tar;
    for (const auto& p : r.roc->points) {
      far.push_back(p.far);
      tar.push_back(p.tar);
    }
    j["roc"] = {{"auc", r.roc->auc}, {"far", far}, {"tar", tar}};
  }
  if (r.attributes) j["attributes"] = accuracy_json(*r.attributes);
  if (!r.scenarios.empty()) {
    ordered_json rows = ordered_json::array();
    for (const auto& s : r.scenarios) {
      ordered_json row = accuracy_json(s.accuracy);
      row["name"] = s.name;
      rows.push_back(row);
    }
    j["scenarios"] = rows;
  }
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& m = j.at("metadata");
    r.metadata = {m.at("seed"), m.at("checkpoint_id"), m.at("dataset_id"), m.at("timestamp")};
    if (j.contains("cmc")) r.cmc = CmcCurve{j["cmc"].at("rates").get<std::vector<double>>()};
    if (j.contains("roc")) {
      RocCurve roc;
      roc.auc = j["roc"].at("auc");
      const auto far = j["roc"].at("far").get<std::vector<double>>();
      const auto tar = j["roc"].at("tar").get<std::vector<double>>();
      require(far.size() == tar.size(), "ROC coordinate arrays differ in length");
      for (std::size_t i = 0; i < far.size(); ++i) roc.points.push_back({far[i], tar[i]});
      r.roc = roc;
    }
    if (j.contains("attributes")) r.attributes = accuracy_from(j["attributes"]);
    if (j.contains("scenarios")) {
      for (const auto& s : j["scenarios"]) r.scenarios.push_back({s.at("name"), accuracy_from(s)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

void write_cmc_csv(const CmcCurve& curve, const std::filesystem::path& path) {
  std::ofstream f = open_csv(path);
  f << "rank,rate\n";
  for (std::size_t i = 0; i < curve.rates.size(); ++i) f << i + 1 << ',' << curve.rates[i] << '\n';
}

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path) {
  std::ofstream f = open_csv(path);
  f << "far,tar\n";
  for (const auto& p : curve.points) f << p.far << ',' << p.tar << '\n';
}

void write_scenarios_csv(const std::vector<ScenarioRow>& rows, const std::filesystem::path& path) {
  std::ofstream f = open_csv(path);
  f << "scenario";
  for (auto name : kAttributeNames) f << ',' << name;
  f << ",mean\n";
  for (const auto& row : rows) {
    f << row.name;
    for (double a : row.accuracy.per_attribute) f << ',' << a;
    f << ',' << row.accuracy.mean << '\n';
  }
}

LossWeights AblationVariant::apply(const LossWeights& base) const {
  LossWeights w = base;
  if (!losses.attribute) w.attribute = 0.0;
  if (!losses.adversarial) w.adversarial = 0.0;
  if (!losses.perceptual) w.perceptual = 0.0;
  if (!losses.attribute_perceptual) w.attribute_perceptual = 0.0;
  if (!losses.reconstruction) w.reconstruction = 0.0;
  return w;
}

std::vector<AblationVariant> canonical_variants() {
  LossSet coupling_l2;
  coupling_l2.coupling = true;
  coupling_l2.reconstruction = true;
  LossSet no_attribute = LossSet::all();
  no_attribute.attribute = false;
  return {{"cpl_l2", coupling_l2}, {"cpl_l2_gan_p_pa", no_attribute}, {"all", LossSet::all()}};
}

double median(std::vector<double> values) {
  require(!values.empty(), "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

bool AblationResult::any_failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const AblationRun& r) { return r.failed; });
}

AblationRun run_ablation_variant(const DatasetSplit& train, const DatasetSplit& test,
                                 const ModelSpec& model, const TrainConfig& base,
                                 const AblationVariant& variant, std::uint64_t seed) {
  TrainConfig config = base;
  config.seed = seed;
  config.weights = variant.apply(base.weights);
  AblationRun run;
  run.variant = variant.name;
  run.seed = seed;
  const TrainResult result = train_stagewise(train, nullptr, model, config);
  if (result.diverged) {
    run.failed = true;
    run.failure = result.diverged_message;
    return run;
  }
  const CoupledNetworks& n = result.checkpoint.networks;
  const Gallery gallery = build_gallery(n.g_hr, train);
  std::vector<Embedding> probes;
  std::vector<int> ids;
  for (const auto& r : test.records) {
    probes.push_back(embed(n.g_lr, r.lr));
    ids.push_back(r.identity);
  }
  const PairDistances d = probe_gallery_distances(probes, ids, gallery);
  run.roc = verification_roc(d.genuine, d.impostor);
  return run;
}

AblationResult summarize_ablation(std::vector<AblationRun> runs,
                                  const std::vector<AblationVariant>& variants) {
  AblationResult result;
  result.runs = std::move(runs);
  for (const auto& v : variants) {
    VariantSummary s;
    s.variant = v.name;
    std::vector<const AblationRun*> ok;
    for (const auto& r : result.runs) {
      if (r.variant != v.name) continue;
      if (r.failed) {
        ++s.failures;
      } else {
        ok.push_back(&r);
        s.aucs.push_back(r.roc.auc);
      }
    }
    if (!ok.empty()) {
      s.median_auc = median(s.aucs);
      const AblationRun* best = ok.front();
      for (const AblationRun* r : ok) {
        if (std::abs(r->roc.auc - s.median_auc) < std::abs(best->roc.auc - s.median_auc)) best = r;
      }
      s.median_curve = best->roc;
    } else {
      s.median_auc = std::nan("");
    }
    result.summaries.push_back(std::move(s));
  }
  return result;
}

AblationResult run_ablation(const DatasetSplit& train, const DatasetSplit& test,
                            const ModelSpec& model, const TrainConfig& base,
                            const std::vector<AblationVariant>& variants,
                            const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), "ablation needs at least one seed");
  require(!variants.empty(), "ablation needs at least one variant");
  std::vector<AblationRun> runs;
  for (std::uint64_t seed : seeds) {
    for (const auto& v : variants) {
      spdlog::info("ablation: variant {} seed {}", v.name, seed);
      runs.push_back(run_ablation_variant(train, test, model, base, v, seed));
      if (runs.back().failed) {
        spdlog::warn("ablation variant {} seed {} failed: {}", v.name, seed, runs.back().failure);
      }
    }
  }
  return summarize_ablation(std::move(runs), variants);
}

void write_ablation(const AblationResult& result, const std::filesystem::path& directory) {
  for (const auto& s : result.summaries) {
    write_roc_csv(s.median_curve, directory / s.variant / "roc.csv");
  }
  std::ofstream f = open_csv(directory / "summary.csv");
  f << "variant,seed,auc\n";
  for (const auto& r : result.runs) {
    f << r.variant << ',' << r.seed << ',';
    if (r.failed) {
      f << "failed\n";
    } else {
      f << r.roc.auc << '\n';
    }
  }
  for (const auto& s : result.summaries) {
    f << s.variant << ",median,";
    if (s.aucs.empty()) {
      f << "failed\n";
    } else {
      f << s.median_auc << '\n';
    }
  }
}

}  // namespace xres
