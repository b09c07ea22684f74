#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

const fs::path& scratch_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "xres_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

// Runs the CLI from the source tree so the bundled relative paths resolve.
Result run(const std::string& args) {
  const fs::path err = scratch_root() / "stderr.txt";
  const std::string cmd = std::string("cd '") + XRES_SOURCE_DIR + "' && '" + XRES_CLI_PATH +
                          "' " + args + " 2>'" + err.string() + "'";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = scratch_root() / name;
  std::ofstream(p) << text;
  return p;
}

std::string dir(const std::string& name) { return (scratch_root() / name).string(); }

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_ = new Result(run("train -c configs/tiny.ini -o " + dir("tiny") + " --lambda2 0.5"));
  }
  static void TearDownTestSuite() { delete train_; }
  static Result* train_;
};
Result* TrainedRun::train_ = nullptr;

TEST_F(TrainedRun, TrainWritesArtifacts) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  for (const char* f : {"config.ini", "run_log.ndjson", "checkpoint.bin", "stage_metrics.csv",
                        "train_summary.json"}) {
    EXPECT_TRUE(fs::exists(scratch_root() / "tiny" / f)) << f;
  }
  const auto summary = nlohmann::json::parse(slurp(scratch_root() / "tiny/train_summary.json"));
  const std::string log = slurp(scratch_root() / "tiny/run_log.ndjson");
  EXPECT_EQ(static_cast<long>(std::count(log.begin(), log.end(), '\n')),
            summary.at("steps").get<long>());
  std::istringstream lines(log);
  std::string first;
  std::getline(lines, first);
  const auto line = nlohmann::json::parse(first);
  EXPECT_EQ(line.at("stage"), "init-lr");
  EXPECT_TRUE(line.contains("total"));
}

TEST_F(TrainedRun, FlagOverridesLandInTheSavedConfig) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  EXPECT_NE(slurp(scratch_root() / "tiny/config.ini").find("lambda2 = \"0.5\""),
            std::string::npos);
}

TEST_F(TrainedRun, EvalWritesReport) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  const Result r = run("eval -c configs/tiny.ini -o " + dir("tiny"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rank-1"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(scratch_root() / "tiny/eval/report.json"));
  EXPECT_EQ(report.at("metadata").at("checkpoint_id").get<std::string>().size(), 16u);
  EXPECT_EQ(report.at("scenarios").size(), 4u);
  for (const char* f : {"cmc.csv", "roc.csv", "scenarios.csv"}) {
    EXPECT_TRUE(fs::exists(scratch_root() / "tiny/eval" / f)) << f;
  }
}

TEST_F(TrainedRun, EvalModeRestrictsOutput) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  const Result r = run("eval -c configs/tiny.ini -o " + dir("tiny") + " --mode verify");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("rank-1"), std::string::npos);
  EXPECT_NE(r.out.find("AUC"), std::string::npos);
}

TEST_F(TrainedRun, EmbeddingMismatchIsIncompatible) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  const Result r = run("eval -c configs/tiny.ini -o " + dir("tiny") +
                       " --set network.embedding_dim=64");
  EXPECT_EQ(r.code, 5) << r.err;
  EXPECT_NE(r.err.find("embedding"), std::string::npos);
}

TEST_F(TrainedRun, PredictPrintsTwelveAttributes) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  const Result r = run("predict --checkpoint " + dir("tiny/checkpoint.bin") +
                       " --image data/tiny/images/000000.png");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("probabilities").size(), 12u);
  EXPECT_TRUE(j.at("resized").get<bool>());  // a 64x64 image into the 16x16 LR generator
}

TEST_F(TrainedRun, PredictWritesFileWhenAsked) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  const fs::path out = scratch_root() / "pred.json";
  const Result r = run("predict --checkpoint " + dir("tiny/checkpoint.bin") +
                       " --image data/tiny/images/000001.png --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(nlohmann::json::parse(slurp(out)).at("attributes").size(), 12u);
}

TEST_F(TrainedRun, CorruptImageFailsWithoutOutput) {
  ASSERT_EQ(train_->code, 0) << train_->err;
  const fs::path bad = scratch_root() / "corrupt.png";
  std::ofstream(bad) << "\x89PNG garbage";
  const Result r = run("predict --checkpoint " + dir("tiny/checkpoint.bin") + " --image " +
                       bad.string());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, MalformedKeyExitsTwoNamingIt) {
  const Result r = run("train -c configs/tiny.ini -o " + dir("bad") + " --set training.lamda1=2");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("training.lamda1"), std::string::npos) << r.err;
}

TEST(Cli, MissingSourceExitsTwo) {
  const fs::path c = write_config("nosource.ini", "[dataset]\nn_identities = 4\n");
  const Result r = run("train -c " + c.string() + " -o " + dir("nosource"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dataset.source"), std::string::npos) << r.err;
}

TEST(Cli, SingleIdentityExitsTwo) {
  const fs::path c =
      write_config("one.ini", "[dataset]\nsource = synthetic\nn_identities = 1\n");
  EXPECT_EQ(run("train -c " + c.string() + " -o " + dir("one")).code, 2);
}

TEST(Cli, MissingConfigFileExitsTwo) {
  EXPECT_EQ(run("train -c /nonexistent.ini").code, 2);
}

TEST(Cli, NoSubcommandExitsTwo) { EXPECT_EQ(run("").code, 2); }

TEST(Cli, BadFlagValueExitsTwo) {
  EXPECT_EQ(run("train -c configs/tiny.ini --lambda1 abc").code, 2);
}

TEST(Cli, MissingCheckpointIsADataError) {
  const Result r = run("eval -c configs/tiny.ini -o " + dir("nothing"));
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, SynthDataIsDeterministic) {
  const fs::path c = write_config(
      "synth.ini",
      "[dataset]\nsource = synthetic\nn_identities = 3\nimages_per_identity = 2\n"
      "hr_size = 32x32\nlr_size = 8x8\n");
  const Result a = run("synth-data -c " + c.string() + " --seed 3 -o " + dir("synth_a"));
  const Result b = run("synth-data -c " + c.string() + " --seed 3 -o " + dir("synth_b"));
  const Result d = run("synth-data -c " + c.string() + " --seed 4 -o " + dir("synth_c"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0);
  ASSERT_EQ(d.code, 0);
  auto digest = [](const std::string& name) {
    return nlohmann::json::parse(slurp(scratch_root() / name / "dataset/manifest.json"))
        .at("digest")
        .get<std::string>();
  };
  EXPECT_EQ(digest("synth_a"), digest("synth_b"));
  EXPECT_NE(digest("synth_a"), digest("synth_c"));
  EXPECT_TRUE(fs::exists(scratch_root() / "synth_a/dataset/images/000005.png"));
  EXPECT_NE(a.out.find("6 records"), std::string::npos);
}

TEST(Cli, SynthDataRejectsDirectorySource) {
  EXPECT_EQ(run("synth-data -c configs/tiny.ini -o " + dir("nope")).code, 2);
}

TEST(Cli, OutputRootComesFromEnvironment) {
  const fs::path c = write_config(
      "envroot.ini",
      "[dataset]\nsource = synthetic\nn_identities = 2\nimages_per_identity = 2\n"
      "hr_size = 32x32\nlr_size = 8x8\n");
  const fs::path err = scratch_root() / "stderr.txt";
  const std::string full = std::string("cd '") + XRES_SOURCE_DIR + "' && XRES_OUTPUT_ROOT='" +
                           dir("envroot") + "' '" + XRES_CLI_PATH + "' synth-data -c " +
                           c.string() + " >/dev/null 2>'" + err.string() + "'";
  ASSERT_EQ(std::system(full.c_str()), 0) << slurp(err);
  EXPECT_TRUE(fs::exists(scratch_root() / "envroot/dataset/manifest.json"));
}

}  // namespace
