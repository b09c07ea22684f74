#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "checks.hpp"
#include "xres/errors.hpp"

namespace xres {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

TEST(Evaluator, MetricOracles) {
  for (const auto& c : checks::metric_oracle_checks(17)) {
    EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  }
}

TEST(Evaluator, MannWhitneyCountsTiesAsHalf) {
  const std::vector<double> g{1.0, 1.0};
  const std::vector<double> i{1.0, 2.0};
  EXPECT_DOUBLE_EQ(checks::mann_whitney_auc(g, i), 0.75);
  EXPECT_DOUBLE_EQ(verification_roc(g, i).auc, 0.75);
}

TEST(Evaluator, IdentifyKeepsGalleryOrderOnTies) {
  Gallery g;
  g.entries = {{4, Embedding{{1.0}}}, {2, Embedding{{-1.0}}}, {7, Embedding{{3.0}}}};
  const auto r = identify(Embedding{{0.0}}, g);
  EXPECT_EQ(r[0].identity, 4);
  EXPECT_EQ(r[1].identity, 2);
  EXPECT_EQ(r[2].identity, 7);
  EXPECT_THROW(identify(Embedding{{0.0, 1.0}}, g), InvalidInput);
  EXPECT_THROW(identify(Embedding{{0.0}}, Gallery{}), InvalidInput);
}

TEST(Evaluator, CmcCountsDistinctIdentities) {
  // Two entries of identity 0 closer than identity 1: still rank 2.
  Gallery g;
  g.entries = {{0, Embedding{{0.1}}}, {0, Embedding{{0.2}}}, {1, Embedding{{0.5}}}};
  const std::vector<Embedding> probes{Embedding{{0.0}}};
  const std::vector<int> ids{1};
  EXPECT_EQ(cmc_curve(probes, ids, g, 2).rates, (std::vector<double>{0.0, 1.0}));
}

TEST(Evaluator, AttributeAccuracyPerColumn) {
  std::vector<std::vector<double>> p(2, std::vector<double>(kNumAttributes, 0.2));
  p[0][kMale] = 0.9;
  std::vector<AttributeVector> t(2);
  t[0].set(kMale, true);
  t[1].set(kMale, true);
  const AttributeAccuracy a = attribute_accuracy(p, t);
  EXPECT_DOUBLE_EQ(a.per_attribute[kMale], 0.5);
  EXPECT_DOUBLE_EQ(a.per_attribute[kBald], 1.0);
  EXPECT_DOUBLE_EQ(a.mean, 11.5 / 12.0);
  EXPECT_THROW(attribute_accuracy(p, t, 1.0), InvalidInput);
}

TEST(Evaluator, MedianOfOddAndEven) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

TEST(Evaluator, AblationSummaryUsesSuccessfulSeeds) {
  const auto variants = canonical_variants();
  ASSERT_EQ(variants.size(), 3u);
  std::vector<AblationRun> runs;
  const double aucs[] = {0.7, 0.9, 0.8};
  for (int s = 0; s < 3; ++s) {
    AblationRun r;
    r.variant = "all";
    r.seed = static_cast<std::uint64_t>(s);
    r.roc.auc = aucs[s];
    runs.push_back(r);
  }
  AblationRun failed;
  failed.variant = "cpl_l2";
  failed.failed = true;
  runs.push_back(failed);
  const AblationResult res = summarize_ablation(runs, variants);
  EXPECT_TRUE(res.any_failed());
  EXPECT_DOUBLE_EQ(res.summaries[2].median_auc, 0.8);
  EXPECT_EQ(res.summaries[0].failures, 1);
  EXPECT_TRUE(std::isnan(res.summaries[0].median_auc));

  const fs::path dir = fs::temp_directory_path() / "xres_ablation_summary";
  fs::remove_all(dir);
  write_ablation(res, dir);
  for (const auto& v : variants) EXPECT_TRUE(fs::exists(dir / v.name / "roc.csv")) << v.name;
  const std::string summary = slurp(dir / "summary.csv");
  EXPECT_NE(summary.find("cpl_l2,0,failed"), std::string::npos);
  EXPECT_NE(summary.find("all,median,0.8"), std::string::npos);
}

TEST(Evaluator, VariantsZeroExcludedWeights) {
  const auto v = canonical_variants();
  const LossWeights w = v[0].apply(LossWeights{});
  EXPECT_EQ(w.attribute, 0.0);
  EXPECT_EQ(w.adversarial, 0.0);
  EXPECT_EQ(w.reconstruction, 1.0);
  EXPECT_EQ(v[1].apply(LossWeights{}).attribute, 0.0);
  EXPECT_EQ(v[1].apply(LossWeights{}).adversarial, 1.0);
  EXPECT_EQ(v[2].apply(LossWeights{}), LossWeights{});
}

class TrainedTiny : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SyntheticOptions o;
    o.n_identities = 3;
    o.images_per_identity = 4;
    o.hr_size = {16, 16};
    o.lr_size = {8, 8};
    auto [train, test] = holdout_split(generate_synthetic_dataset(o), 1);
    train_ = new DatasetSplit(std::move(train));
    test_ = new DatasetSplit(std::move(test));
    TrainConfig c;
    c.batch_size = 4;
    c.schedule = default_schedule(1, 2, 1, 1);
    c.attribute_pretrain.epochs = 2;
    result_ = new TrainResult(train_stagewise(*train_, nullptr, checks::tiny_model(), c));
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete result_;
  }
  static DatasetSplit* train_;
  static DatasetSplit* test_;
  static TrainResult* result_;
};
DatasetSplit* TrainedTiny::train_ = nullptr;
DatasetSplit* TrainedTiny::test_ = nullptr;
TrainResult* TrainedTiny::result_ = nullptr;

TEST_F(TrainedTiny, ReportShapes) {
  const EvalReport r = evaluate(result_->checkpoint, *train_, *test_, EvalSettings{5, 0.5});
  ASSERT_TRUE(r.cmc && r.roc && r.attributes);
  EXPECT_EQ(r.cmc->rates.size(), 5u);
  EXPECT_EQ(r.cmc->rank(3), 1.0);  // closed set of three identities
  EXPECT_EQ(r.attributes->per_attribute.size(), 12u);
  EXPECT_EQ(r.roc->points.front().far, 0.0);
  EXPECT_EQ(r.roc->points.back().tar, 1.0);
}

TEST_F(TrainedTiny, ScenariosAreFourRowsOfTwelve) {
  ScenarioOptions o;
  o.finetune.epochs = 1;
  const auto rows = run_attribute_scenarios(result_->checkpoint, *train_, *test_, o);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].name, "attribute_net_hr");
  EXPECT_EQ(rows[3].name, "lr_head");
  for (const auto& row : rows) EXPECT_EQ(row.accuracy.per_attribute.size(), 12u);
  const fs::path p = fs::temp_directory_path() / "xres_scenarios.csv";
  write_scenarios_csv(rows, p);
  const std::string csv = slurp(p);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.rfind("scenario,DoubleChin,", 0), 0u);
}

TEST_F(TrainedTiny, ReportJsonRoundTrip) {
  EvalReport r = evaluate(result_->checkpoint, *train_, *test_, EvalSettings{});
  r.metadata = {4, "abc", "def", "2026-01-01T00:00:00Z"};
  const EvalReport back = eval_report_from_json(to_json(r));
  EXPECT_EQ(back.metadata.checkpoint_id, "abc");
  EXPECT_EQ(back.cmc->rates, r.cmc->rates);
  EXPECT_EQ(back.roc->auc, r.roc->auc);
  EXPECT_EQ(back.attributes->per_attribute, r.attributes->per_attribute);
  EXPECT_THROW(eval_report_from_json("{}"), DataError);
}

TEST_F(TrainedTiny, EvaluationIsPure) {
  const EvalReport a = evaluate(result_->checkpoint, *train_, *test_, EvalSettings{});
  const EvalReport b = evaluate(result_->checkpoint, *train_, *test_, EvalSettings{});
  EXPECT_EQ(a.roc->auc, b.roc->auc);
  EXPECT_EQ(a.cmc->rates, b.cmc->rates);
}

}  // namespace
}  // namespace xres
