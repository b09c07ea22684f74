#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "checks.hpp"
#include "xres/errors.hpp"

namespace xres {
namespace {

namespace fs = std::filesystem;

std::vector<double> copy(std::span<const double> s) { return {s.begin(), s.end()}; }

DatasetSplit tiny_data(int identities = 3, int per_identity = 4) {
  SyntheticOptions o;
  o.n_identities = identities;
  o.images_per_identity = per_identity;
  o.hr_size = {16, 16};
  o.lr_size = {8, 8};
  o.seed = 3;
  return generate_synthetic_dataset(o);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.seed = 9;
  c.schedule = default_schedule(1, 1, 1, 1);
  c.attribute_pretrain.epochs = 2;
  return c;
}

struct Snapshot {
  std::vector<double> g_lr, g_hr, d_lr, d_hr, h_lr, h_hr, feature, attribute;
  explicit Snapshot(const Checkpoint& c)
      : g_lr(copy(c.networks.g_lr.parameters())),
        g_hr(copy(c.networks.g_hr.parameters())),
        d_lr(copy(c.networks.d_lr.parameters())),
        d_hr(copy(c.networks.d_hr.parameters())),
        h_lr(copy(c.networks.h_lr.parameters())),
        h_hr(copy(c.networks.h_hr.parameters())),
        feature(copy(c.frozen.feature.parameters())),
        attribute(copy(c.frozen.attribute.parameters())) {}
};

TEST(Trainer, AdamMatchesHandComputedReference) {
  const AdamOptions o{0.01, 0.9, 0.999, 1e-8};
  std::vector<double> p{0.5, -1.5, 2.0};
  std::vector<double> ref = p;
  std::vector<double> m(3, 0.0), v(3, 0.0);
  Adam adam(3);
  for (int t = 1; t <= 10; ++t) {
    const std::vector<double> g{std::sin(t * 1.0), 0.1 * t, -2.0 / t};
    adam.step(p, g, o);
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], ref[i], 1e-12);
  EXPECT_EQ(adam.steps(), 10);
}

TEST(Trainer, FirstAdamStepMovesByLearningRate) {
  Adam adam(1);
  std::vector<double> p{1.0};
  adam.step(p, std::vector<double>{3.0}, AdamOptions{});
  EXPECT_NEAR(p[0], 1.0 - 4e-4, 1e-10);
}

TEST(Trainer, DefaultScheduleShape) {
  const auto s = default_schedule();
  ASSERT_EQ(s.size(), 5u);
  EXPECT_EQ(s[0].name, "init-lr");
  EXPECT_EQ(s[2].name, "coupling");
  EXPECT_TRUE(s[2].losses.coupling);
  EXPECT_FALSE(s[0].losses.coupling);
  EXPECT_FALSE(s[3].trainable.g_lr);
  EXPECT_TRUE(s[3].trainable.h_lr);
  EXPECT_EQ(s[4].losses, LossSet::all());
  EXPECT_EQ(s[4].trainable, Trainable::all());
}

// Only the groups a stage names may change; the frozen networks never do.
TEST(Trainer, EachStageUpdatesOnlyItsTrainableGroups) {
  const DatasetSplit data = tiny_data();
  const PairBatch batch = sample_balanced_pairs(data, 4, 1);
  for (const Stage& stage : default_schedule()) {
    Checkpoint c = initial_checkpoint(checks::tiny_model(), tiny_config());
    const Snapshot before(c);
    train_step(c, batch, stage, 7);
    const Snapshot after(c);
    EXPECT_EQ(before.g_lr != after.g_lr, stage.trainable.g_lr) << stage.name;
    EXPECT_EQ(before.g_hr != after.g_hr, stage.trainable.g_hr) << stage.name;
    EXPECT_EQ(before.d_lr != after.d_lr, stage.trainable.d_lr) << stage.name;
    EXPECT_EQ(before.d_hr != after.d_hr, stage.trainable.d_hr) << stage.name;
    EXPECT_EQ(before.h_lr != after.h_lr, stage.trainable.h_lr) << stage.name;
    EXPECT_EQ(before.h_hr != after.h_hr, stage.trainable.h_hr) << stage.name;
    EXPECT_EQ(before.feature, after.feature) << stage.name;
    EXPECT_EQ(before.attribute, after.attribute) << stage.name;
    EXPECT_EQ(c.step, 1);
  }
}

TEST(Trainer, InactiveTermsReportZero) {
  const DatasetSplit data = tiny_data();
  const PairBatch batch = sample_balanced_pairs(data, 4, 1);
  Checkpoint c = initial_checkpoint(checks::tiny_model(), tiny_config());
  const Stage coupling = default_schedule()[2];
  Stage only_coupling = coupling;
  only_coupling.losses = LossSet{};
  only_coupling.losses.coupling = true;
  const LossReport r = train_step(c, batch, only_coupling, 1);
  EXPECT_GT(r.cpl, 0.0);
  EXPECT_EQ(r.gan_lr, 0.0);
  EXPECT_EQ(r.p_lr, 0.0);
  EXPECT_EQ(r.l2_hr, 0.0);
  EXPECT_EQ(r.a_lr, 0.0);
  EXPECT_DOUBLE_EQ(r.total, r.cpl);
}

TEST(Trainer, CouplingLossDecreasesOnAFixedBatch) {
  const DatasetSplit data = tiny_data();
  const PairBatch batch = sample_balanced_pairs(data, 6, 2);
  TrainConfig config = tiny_config();
  config.adam.learning_rate = 1e-3;
  Checkpoint c = initial_checkpoint(checks::tiny_model(), config);
  Stage stage = default_schedule()[2];
  stage.losses = LossSet{};
  stage.losses.coupling = true;
  const double first = step_gradients(c, batch, stage, 0).report.cpl;
  for (int i = 0; i < 100; ++i) train_step(c, batch, stage, 0);
  const double last = step_gradients(c, batch, stage, 0).report.cpl;
  EXPECT_LT(last, 0.5 * first) << first << " -> " << last;
}

TEST(Trainer, StepGradientsOmitUntouchedGroups) {
  const DatasetSplit data = tiny_data();
  const PairBatch batch = sample_balanced_pairs(data, 4, 1);
  const Checkpoint c = initial_checkpoint(checks::tiny_model(), tiny_config());
  const StepGradients g = step_gradients(c, batch, default_schedule()[3], 1);
  EXPECT_TRUE(g.g_lr.empty());
  EXPECT_TRUE(g.d_hr.empty());
  EXPECT_EQ(g.h_lr.size(), c.networks.h_lr.parameters().size());
}

TEST(Trainer, NonFiniteLossRaisesBeforeAnyUpdate) {
  const DatasetSplit data = tiny_data();
  const PairBatch batch = sample_balanced_pairs(data, 4, 1);
  Checkpoint c = initial_checkpoint(checks::tiny_model(), tiny_config());
  c.networks.g_lr.parameters()[0] = std::numeric_limits<double>::quiet_NaN();
  const Snapshot before(c);
  EXPECT_THROW(train_step(c, batch, default_schedule().back(), 1), NumericError);
  const Snapshot after(c);
  EXPECT_EQ(before.g_hr, after.g_hr);
  EXPECT_EQ(before.d_lr, after.d_lr);
  EXPECT_EQ(c.step, 0);
}

TEST(Trainer, TrainingIsDeterministicPerSeed) {
  const auto [train, test] = holdout_split(tiny_data(), 1);
  std::ostringstream log_a, log_b;
  TrainOptions a;
  a.run_log = &log_a;
  TrainOptions b;
  b.run_log = &log_b;
  const TrainResult ra = train_stagewise(train, &test, checks::tiny_model(), tiny_config(), a);
  const TrainResult rb = train_stagewise(train, &test, checks::tiny_model(), tiny_config(), b);
  EXPECT_FALSE(ra.diverged);
  EXPECT_EQ(ra.steps, rb.steps);
  const std::string text_a = log_a.str();
  EXPECT_EQ(text_a, log_b.str());
  EXPECT_TRUE(std::ranges::equal(ra.checkpoint.networks.g_lr.parameters(),
                                 rb.checkpoint.networks.g_lr.parameters()));
  ASSERT_EQ(ra.metrics.size(), 5u);
  EXPECT_EQ(ra.metrics.back().rank1, rb.metrics.back().rank1);
  // Three training records per identity, batch 4: 3 steps per epoch, 5 stages.
  EXPECT_EQ(ra.steps, 15);
  EXPECT_EQ(std::count(text_a.begin(), text_a.end(), '\n'), 15);
}

TEST(Trainer, SingleIdentityRejected) {
  const DatasetSplit data = tiny_data();
  DatasetSplit one;
  for (const auto& r : data.records) {
    if (r.identity == 0) one.records.push_back(r);
  }
  EXPECT_THROW(train_stagewise(one, nullptr, checks::tiny_model(), tiny_config()), InvalidInput);
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = fs::temp_directory_path() / "xres_trainer_checkpoint.bin";
    const DatasetSplit data = tiny_data();
    state_ = std::make_unique<Checkpoint>(initial_checkpoint(checks::tiny_model(), tiny_config()));
    train_step(*state_, sample_balanced_pairs(data, 4, 1), default_schedule().back(), 3);
    save_checkpoint(*state_, path_);
  }
  std::string bytes() const {
    std::ifstream f(path_, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }
  void write(const std::string& b) const {
    std::ofstream(path_, std::ios::binary | std::ios::trunc) << b;
  }
  fs::path path_;
  std::unique_ptr<Checkpoint> state_;
};

TEST_F(CheckpointFile, RoundTripIsExact) {
  const Checkpoint loaded = load_checkpoint(path_);
  EXPECT_EQ(loaded.step, state_->step);
  EXPECT_EQ(loaded.model.lr, state_->model.lr);
  EXPECT_EQ(loaded.config.weights, state_->config.weights);
  EXPECT_EQ(loaded.config.schedule, state_->config.schedule);
  const Snapshot a(*state_), b(loaded);
  EXPECT_EQ(a.g_lr, b.g_lr);
  EXPECT_EQ(a.d_hr, b.d_hr);
  EXPECT_EQ(a.h_hr, b.h_hr);
  EXPECT_EQ(a.attribute, b.attribute);
  EXPECT_EQ(loaded.optimizer.g_lr.first_moment(), state_->optimizer.g_lr.first_moment());
  EXPECT_EQ(loaded.optimizer.d_lr.steps(), 1);
}

TEST_F(CheckpointFile, ResumingMatchesUninterruptedTraining) {
  const DatasetSplit data = tiny_data();
  const PairBatch batch = sample_balanced_pairs(data, 4, 2);
  Checkpoint loaded = load_checkpoint(path_);
  train_step(*state_, batch, default_schedule().back(), 4);
  train_step(loaded, batch, default_schedule().back(), 4);
  EXPECT_TRUE(std::ranges::equal(loaded.networks.g_hr.parameters(),
                                 state_->networks.g_hr.parameters()));
}

TEST_F(CheckpointFile, TruncationDetected) {
  const std::string b = bytes();
  write(b.substr(0, b.size() / 2));
  EXPECT_THROW(load_checkpoint(path_), DataError);
}

TEST_F(CheckpointFile, CorruptionDetected) {
  std::string b = bytes();
  b[b.size() / 2] ^= 0x5a;
  write(b);
  EXPECT_THROW(load_checkpoint(path_), DataError);
}

TEST_F(CheckpointFile, UnknownVersionIsIncompatible) {
  std::string b = bytes();
  b[8] = 99;
  write(b);
  EXPECT_THROW(load_checkpoint(path_), IncompatibleError);
}

TEST_F(CheckpointFile, ForeignFileRejected) {
  write("definitely not a checkpoint");
  EXPECT_THROW(load_checkpoint(path_), DataError);
}

}  // namespace
}  // namespace xres
