#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "xres/dataset.hpp"
#include "xres/errors.hpp"

namespace xres {
namespace {

namespace fs = std::filesystem;

SyntheticOptions small_options() {
  SyntheticOptions o;
  o.n_identities = 4;
  o.images_per_identity = 3;
  o.hr_size = {32, 32};
  o.lr_size = {8, 8};
  o.seed = 5;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xres_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Dataset, SyntheticLayoutAndRanges) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  ASSERT_EQ(s.records.size(), 12u);
  EXPECT_EQ(s.identity_count(), 4u);
  for (const auto& r : s.records) {
    EXPECT_EQ(r.hr.size(), (Size2{32, 32}));
    EXPECT_EQ(r.lr.size(), (Size2{8, 8}));
    for (double v : r.hr.pixels().values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Dataset, LowResolutionIsTheAreaDownsample) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  EXPECT_EQ(s.records[0].lr, downsample(s.records[0].hr, {8, 8}));
}

TEST(Dataset, AttributesConstantPerIdentityAndBalanced) {
  SyntheticOptions o = small_options();
  o.n_identities = 6;
  const DatasetSplit s = generate_synthetic_dataset(o);
  std::vector<int> ones(kNumAttributes, 0);
  for (const auto& r : s.records) {
    const auto& first = s.records[static_cast<std::size_t>(r.identity) * 3].attributes;
    EXPECT_EQ(r.attributes, first);
  }
  for (int id = 0; id < 6; ++id) {
    for (int t = 0; t < kNumAttributes; ++t) ones[t] += s.records[id * 3].attributes[t];
  }
  for (int t = 0; t < kNumAttributes; ++t) EXPECT_EQ(ones[t], 3) << kAttributeNames[t];
}

TEST(Dataset, SeedDeterminesContent) {
  const SyntheticOptions o = small_options();
  EXPECT_EQ(generate_synthetic_dataset(o), generate_synthetic_dataset(o));
  EXPECT_EQ(dataset_digest(generate_synthetic_dataset(o)),
            dataset_digest(generate_synthetic_dataset(o)));
  SyntheticOptions other = o;
  other.seed = 6;
  EXPECT_NE(dataset_digest(generate_synthetic_dataset(o)),
            dataset_digest(generate_synthetic_dataset(other)));
}

TEST(Dataset, RejectsInvalidOptions) {
  SyntheticOptions o = small_options();
  o.lr_size = {64, 64};
  EXPECT_THROW(generate_synthetic_dataset(o), InvalidInput);
  o = small_options();
  o.n_identities = 0;
  EXPECT_THROW(generate_synthetic_dataset(o), InvalidInput);
}

TEST(Dataset, HoldoutTakesTheLastImagesOfEachIdentity) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  const auto [train, test] = holdout_split(s, 1);
  EXPECT_EQ(train.records.size(), 8u);
  EXPECT_EQ(test.records.size(), 4u);
  EXPECT_EQ(test.role, SplitRole::kTest);
  EXPECT_EQ(test.records[0], s.records[2]);
  EXPECT_EQ(train.identities(), test.identities());
}

TEST(Dataset, BalancedPairsHaveCorrectLabels) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  const PairBatch b = sample_balanced_pairs(s, 7, 3);
  ASSERT_EQ(b.size(), 7u);
  int genuine = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const bool same = b.lr_identities[i] == b.hr_identities[i];
    EXPECT_EQ(b.pair_labels[i] == PairLabel::kGenuine, same);
    genuine += same;
  }
  EXPECT_EQ(genuine, 4);
  const PairBatch again = sample_balanced_pairs(s, 7, 3);
  EXPECT_EQ(again.lr_identities, b.lr_identities);
  EXPECT_EQ(again.hr_images, b.hr_images);
}

TEST(Dataset, DirectoryRoundTripPreservesDigest) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  const fs::path dir = scratch("roundtrip");
  save_directory_dataset(s, dir);
  const DirectoryLoadResult r =
      load_directory_dataset(dir / "images", dir / "attributes.csv", {8, 8});
  EXPECT_EQ(r.skipped, 0);
  EXPECT_EQ(dataset_digest(r.split), dataset_digest(s));
}

TEST(Dataset, UnreadableRowsAreSkipped) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  const fs::path dir = scratch("skip");
  save_directory_dataset(s, dir);
  std::ofstream(dir / "images" / "000001.png") << "not a png";
  const DirectoryLoadResult r =
      load_directory_dataset(dir / "images", dir / "attributes.csv", {8, 8});
  EXPECT_EQ(r.skipped, 1);
  EXPECT_EQ(r.split.records.size(), 11u);
}

TEST(Dataset, NoUsableRowsIsADataError) {
  const DatasetSplit s = generate_synthetic_dataset(small_options());
  const fs::path dir = scratch("small");
  save_directory_dataset(s, dir);
  EXPECT_THROW(load_directory_dataset(dir / "images", dir / "attributes.csv", {32, 32}),
               DataError);
}

TEST(Dataset, DownsampleAveragesBlocks) {
  Tensor t({1, 16, 16});
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) t.at(0, y, x) = (x % 2 == 0) ? 1.0 : 0.0;
  }
  const ImageGrid small = downsample(ImageGrid(t), {8, 8});
  for (double v : small.pixels().values()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_THROW(downsample(ImageGrid(t), {32, 32}), InvalidInput);
}

TEST(Dataset, ImageGridRejectsOutOfRangePixels) {
  EXPECT_THROW(ImageGrid(Tensor({1, 8, 8}, 1.5)), InvalidInput);
  EXPECT_THROW(ImageGrid(Tensor({2, 8, 8}, 0.5)), InvalidInput);
  EXPECT_THROW(ImageGrid(Tensor({1, 4, 4}, 0.5)), InvalidInput);
}

}  // namespace
}  // namespace xres
