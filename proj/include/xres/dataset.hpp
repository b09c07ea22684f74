#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xres/attributes.hpp"
#include "xres/image.hpp"
#include "xres/losses.hpp"

namespace xres {

struct FaceRecord {
  int identity = 0;
  ImageGrid hr;
  ImageGrid lr;
  AttributeVector attributes;

  friend bool operator==(const FaceRecord&, const FaceRecord&) = default;
};

enum class SplitRole { kTrain, kValidation, kTest };

std::string to_string(SplitRole role);

struct DatasetSplit {
  std::vector<FaceRecord> records;
  SplitRole role = SplitRole::kTrain;
  std::uint64_t seed = 0;

  // Distinct identities in first-appearance order.
  std::vector<int> identities() const;
  std::size_t identity_count() const { return identities().size(); }
  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct SyntheticOptions {
  int n_identities = 20;
  int images_per_identity = 10;
  Size2 hr_size{64, 64};
  Size2 lr_size{16, 16};
  std::uint64_t seed = 1;
  int channels = 1;
};

// Procedural faces: per identity a fixed parametric face (head ellipse, eyes,
// brows, nose, mouth, hair) whose geometry is driven by its attribute bits,
// rendered per image with small translation, brightness and noise jitter.
// Each attribute is assigned to half of the identities (rounded), so every
// bit takes both values once there are two or more identities.
DatasetSplit generate_synthetic_dataset(const SyntheticOptions& options);

struct DirectoryLoadResult {
  DatasetSplit split;
  int skipped = 0;
};

// Reads an attribute CSV (header `[filename,]identity,<12 attribute names>`)
// and the referenced 8-bit PNGs. Without a filename column row k refers to
// `<k as 6 digits>.png`. Rows whose image cannot be read, or whose image is not
// larger than lr_size, are skipped and counted. When hr_size is set, HR images
// are area-resized to it.
DirectoryLoadResult load_directory_dataset(const std::filesystem::path& image_directory,
                                           const std::filesystem::path& attribute_table,
                                           Size2 lr_size,
                                           std::optional<Size2> hr_size = std::nullopt);

// Writes `images/NNNNNN.png` (HR) plus `attributes.csv` with a filename column.
void save_directory_dataset(const DatasetSplit& split, const std::filesystem::path& directory);

// Stable 64-bit digest of identities, attributes and 8-bit-quantized pixels.
std::uint64_t dataset_digest(const DatasetSplit& split);

// Per identity, the last `holdout_per_identity` records go to the test split.
// Identities with too few records stay entirely in training.
std::pair<DatasetSplit, DatasetSplit> holdout_split(const DatasetSplit& split,
                                                    int holdout_per_identity);

struct PairBatch {
  std::vector<ImageGrid> lr_images;
  std::vector<ImageGrid> hr_images;
  std::vector<PairLabel> pair_labels;
  std::vector<AttributeVector> lr_attributes;
  std::vector<AttributeVector> hr_attributes;
  std::vector<int> lr_identities;
  std::vector<int> hr_identities;

  std::size_t size() const { return pair_labels.size(); }
};

// ceil(B/2) genuine and floor(B/2) impostor LR-HR pairs. LR anchors are
// drawn without replacement; a genuine partner is any record of the anchor's
// identity (possibly the anchor itself), an impostor partner any record of
// another identity.
PairBatch sample_balanced_pairs(const DatasetSplit& split, int batch_size, std::uint64_t seed);

}  // namespace xres
