#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xres/dataset.hpp"
#include "xres/networks.hpp"
#include "xres/trainer.hpp"

namespace xres {

// Deterministic (inference mode) embedding of one image.
Embedding embed(const Generator& generator, const ImageGrid& image);

struct GalleryEntry {
  int identity = 0;
  Embedding embedding;
};

struct Gallery {
  std::vector<GalleryEntry> entries;

  std::vector<int> identities() const;  // distinct, first-appearance order
};

// HR images of the split embedded with the HR generator.
Gallery build_gallery(const Generator& hr_generator, const DatasetSplit& split);

struct RankedEntry {
  std::size_t index = 0;  // position in the gallery
  int identity = 0;
  double distance = 0.0;  // squared Euclidean
};

// Gallery entries by ascending squared distance; ties keep gallery order.
std::vector<RankedEntry> identify(const Embedding& probe, const Gallery& gallery);
std::vector<RankedEntry> identify(const ImageGrid& probe_lr, const Gallery& gallery,
                                  const Generator& lr_generator);

struct CmcCurve {
  std::vector<double> rates;  // rates[r - 1] is the rank-r identification rate
  double rank(int r) const { return rates.at(static_cast<std::size_t>(r - 1)); }
};

// Rank counts distinct identities: a probe is correct at rank r when its
// identity is among the first r distinct identities of its ranking.
CmcCurve cmc_curve(std::span<const Embedding> probes, std::span<const int> probe_identities,
                   const Gallery& gallery, int max_rank);
CmcCurve cmc_curve(const DatasetSplit& probes, const Gallery& gallery,
                   const Generator& lr_generator, int max_rank);

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

// Accept when distance <= threshold, sweeping every distinct distance.
RocCurve verification_roc(std::span<const double> genuine, std::span<const double> impostor);

struct PairDistances {
  std::vector<double> genuine;
  std::vector<double> impostor;
};
// All probe x gallery squared distances, split by identity agreement.
PairDistances probe_gallery_distances(std::span<const Embedding> probes,
                                      std::span<const int> probe_identities,
                                      const Gallery& gallery);

struct AttributeAccuracy {
  std::vector<double> per_attribute;
  double mean = 0.0;
};

AttributeAccuracy attribute_accuracy(std::span<const std::vector<double>> predictions,
                                     std::span<const AttributeVector> truth,
                                     double threshold = 0.5);

struct ScenarioRow {
  std::string name;
  AttributeAccuracy accuracy;
};

struct ScenarioOptions {
  double threshold = 0.5;
  AttributePretrainOptions finetune;
  std::uint64_t seed = 1;
};

// Four rows: A on HR, A on LR, A fine-tuned on LR training images then
// applied to LR, and the LR attribute head on z1. All on the test split.
std::vector<ScenarioRow> run_attribute_scenarios(const Checkpoint& checkpoint,
                                                 const DatasetSplit& train,
                                                 const DatasetSplit& test,
                                                 const ScenarioOptions& options = {});

struct EvalMetadata {
  std::uint64_t seed = 0;
  std::string checkpoint_id;
  std::string dataset_id;
  std::string timestamp;
};

struct EvalReport {
  std::optional<CmcCurve> cmc;
  std::optional<RocCurve> roc;
  std::optional<AttributeAccuracy> attributes;
  std::vector<ScenarioRow> scenarios;
  EvalMetadata metadata;
};

struct EvalSettings {
  int max_rank = 10;
  double threshold = 0.5;
};

// Identification, verification and LR-head attribute accuracy of a
// checkpoint; probes are the LR images of `test`, the gallery the HR images
// of `gallery_split`.
EvalReport evaluate(const Checkpoint& checkpoint, const DatasetSplit& gallery_split,
                    const DatasetSplit& test, const EvalSettings& settings);

std::string to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);
void write_cmc_csv(const CmcCurve& curve, const std::filesystem::path& path);
void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);
void write_scenarios_csv(const std::vector<ScenarioRow>& rows, const std::filesystem::path& path);

struct AblationVariant {
  std::string name;
  LossSet losses;

  // Applies the variant by zeroing the weights of excluded terms.
  LossWeights apply(const LossWeights& base) const;
};

// coupling+l2, coupling+l2+gan+perceptual+attribute_perceptual, all.
std::vector<AblationVariant> canonical_variants();

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  RocCurve roc;
};

struct VariantSummary {
  std::string variant;
  std::vector<double> aucs;  // successful seeds only
  double median_auc = 0.0;
  int failures = 0;
  RocCurve median_curve;  // ROC of the median-AUC seed
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<VariantSummary> summaries;
  bool any_failed() const;
};

// Trains one variant from the initialization given by `seed` and evaluates
// verification on `test` against a gallery of `train`.
AblationRun run_ablation_variant(const DatasetSplit& train, const DatasetSplit& test,
                                 const ModelSpec& model, const TrainConfig& base,
                                 const AblationVariant& variant, std::uint64_t seed);

AblationResult summarize_ablation(std::vector<AblationRun> runs,
                                  const std::vector<AblationVariant>& variants);

AblationResult run_ablation(const DatasetSplit& train, const DatasetSplit& test,
                            const ModelSpec& model, const TrainConfig& base,
                            const std::vector<AblationVariant>& variants,
                            const std::vector<std::uint64_t>& seeds);

// <dir>/<variant>/roc.csv per variant plus <dir>/summary.csv (variant,seed,auc).
void write_ablation(const AblationResult& result, const std::filesystem::path& directory);

double median(std::vector<double> values);

}  // namespace xres
