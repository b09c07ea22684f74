#include "xres/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "xres/layers.hpp"
#include "xres/random.hpp"

namespace xres {
namespace {

// Geometry of one synthetic identity in normalized [0,1] image coordinates.
struct FaceGeometry {
  AttributeVector attributes;
  double background = 0.4;
  double skin = 0.65;
  double cx = 0.5;
  double cy = 0.55;
  double rx = 0.27;
  double ry = 0.34;
  double hair_top = 0.0;  // hair covers v < hair_top inside the hair cap
  double hair_tone = 0.12;
  double brow_tone = 0.15;
  double brow_half_thickness = 0.007;
  double eye_sep = 0.11;
  double eye_y = 0.52;
  double eye_r = 0.03;
  double nose_len = 0.08;
  double mouth_y = 0.71;
  double mouth_half_width = 0.08;
};

bool in_ellipse(double u, double v, double cx, double cy, double rx, double ry) {
  const double a = (u - cx) / rx;
  const double b = (v - cy) / ry;
  return a * a + b * b <= 1.0;
}

FaceGeometry sample_geometry(const AttributeVector& attrs, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  FaceGeometry g;
  g.attributes = attrs;
  g.background = between(0.3, 0.45);
  g.skin = attrs[kPaleSkin] ? between(0.86, 0.92) : between(0.58, 0.68);
  g.cy = between(0.53, 0.57);
  g.rx = between(0.25, 0.29) + (attrs[kChubby] ? 0.06 : 0.0);
  g.ry = between(0.32, 0.36);
  g.hair_top = g.cy - g.ry * between(0.6, 0.8);
  g.hair_tone = attrs[kBlondHair] ? between(0.9, 0.97) : between(0.06, 0.16);
  g.brow_tone = attrs[kBlondHair] ? 0.82 : 0.12;
  g.brow_half_thickness = attrs[kMale] ? 0.016 : 0.007;
  g.eye_sep = between(0.09, 0.13);
  g.eye_y = g.cy - between(0.015, 0.045);
  g.eye_r = between(0.025, 0.038);
  g.nose_len = between(0.06, 0.1);
  g.mouth_y = g.cy + between(0.15, 0.18);
  g.mouth_half_width = between(0.07, 0.1);
  return g;
}

// Painter's-algorithm intensity at normalized position (u, v).
double shade(const FaceGeometry& g, double u, double v) {
  const auto& a = g.attributes;
  double value = g.background;
  const bool bald = a[kBald];
  if (!bald && in_ellipse(u, v, g.cx, g.cy, g.rx + 0.035, g.ry + 0.035) && v < g.hair_top) {
    value = g.hair_tone;
  }
  // Double chin: a shaded crescent under the jaw line.
  if (a[kDoubleChin]) {
    const double ccy = g.cy + g.ry - 0.02;
    const double du = (u - g.cx) / (g.rx * 0.55);
    const double dv = (v - ccy) / 0.07;
    const double rho = std::sqrt(du * du + dv * dv);
    if (v > ccy && std::abs(rho - 1.0) < 0.18) value = g.skin * 0.62;
  }
  if (!in_ellipse(u, v, g.cx, g.cy, g.rx, g.ry)) return value;

  value = g.skin;
  if (!bald && v < g.hair_top) return g.hair_tone;

  if (!a[kYoung]) {
    for (double wy : {g.cy - 0.17, g.cy - 0.14}) {
      if (std::abs(v - wy) < 0.005 && std::abs(u - g.cx) < 0.09) value = g.skin * 0.6;
    }
  }
  const double brow_y = g.eye_y - 0.06;
  for (double side : {-1.0, 1.0}) {
    const double ex = g.cx + side * g.eye_sep;
    if (std::abs(u - ex) < 0.045 && std::abs(v - brow_y) < g.brow_half_thickness) {
      value = g.brow_tone;
    }
    const double d = std::hypot(u - ex, v - g.eye_y);
    if (d < g.eye_r) value = 0.08;
    if (a[kEyeGlasses] && std::abs(d - (g.eye_r + 0.03)) < 0.008) value = 0.03;
  }
  if (a[kEyeGlasses] && std::abs(v - g.eye_y) < 0.006 &&
      std::abs(u - g.cx) < g.eye_sep - (g.eye_r + 0.03)) {
    value = 0.03;
  }
  if (std::abs(u - g.cx) < 0.008 && v > g.eye_y + 0.03 && v < g.eye_y + 0.03 + g.nose_len) {
    value = g.skin * 0.75;
  }
  if (a[kMoustache] && std::abs(u - g.cx) < g.mouth_half_width * 0.95 &&
      v > g.mouth_y - 0.055 && v < g.mouth_y - 0.03) {
    value = 0.15;
  }
  if (a[kGoatee] && in_ellipse(u, v, g.cx, g.mouth_y + 0.085, 0.045, 0.04)) value = 0.15;
  const double du = (u - g.cx) / g.mouth_half_width;
  if (std::abs(du) <= 1.0) {
    const double curve = a[kSmiling] ? 0.035 * (0.5 - du * du) : 0.0;
    const bool open = a[kMouthSlightlyOpen];
    const double half = open ? 0.02 : 0.007;
    if (std::abs(v - (g.mouth_y + curve)) < half) value = open ? 0.05 : 0.2;
  }
  return value;
}

struct ImageJitter {
  double tx = 0.0;
  double ty = 0.0;
  double brightness = 1.0;
};

ImageGrid render(const FaceGeometry& g, Size2 size, int channels, const ImageJitter& j, Rng& rng) {
  constexpr int kSuper = 3;
  std::normal_distribution<double> noise(0.0, 0.02);
  Tensor t(Shape{channels, size.height, size.width});
  const double tint[3] = {1.0, 0.94, 0.88};
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = (x + (sx + 0.5) / kSuper) / size.width - j.tx;
          const double v = (y + (sy + 0.5) / kSuper) / size.height - j.ty;
          acc += shade(g, u, v);
        }
      }
      const double base = acc / (kSuper * kSuper) * j.brightness + noise(rng);
      for (int c = 0; c < channels; ++c) {
        const double scaled = channels == 3 ? base * tint[c] : base;
        t.at(c, y, x) = std::clamp(scaled, 0.0, 1.0);
      }
    }
  }
  return ImageGrid(std::move(t));
}

std::vector<AttributeVector> assign_attributes(int n_identities, Rng& rng) {
  std::vector<AttributeVector> attrs(static_cast<std::size_t>(n_identities));
  std::vector<int> order(static_cast<std::size_t>(n_identities));
  for (int t = 0; t < kNumAttributes; ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int ones = n_identities / 2;
    if (n_identities % 2 == 1 && std::bernoulli_distribution(0.5)(rng)) ++ones;
    for (int k = 0; k < n_identities; ++k) attrs[order[k]].set(t, k < ones);
  }
  return attrs;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? "" : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string padded_index(std::size_t k) {
  std::string s = std::to_string(k);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

}  // namespace

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain: return "train";
    case SplitRole::kValidation: return "validation";
    case SplitRole::kTest: return "test";
  }
  return "unknown";
}

std::vector<int> DatasetSplit::identities() const {
  std::vector<int> ids;
  for (const auto& r : records) {
    if (std::find(ids.begin(), ids.end(), r.identity) == ids.end()) ids.push_back(r.identity);
  }
  return ids;
}

DatasetSplit generate_synthetic_dataset(const SyntheticOptions& o) {
  require(o.n_identities >= 2, "synthetic dataset needs at least 2 identities");
  require(o.images_per_identity >= 2, "synthetic dataset needs at least 2 images per identity");
  require(o.lr_size.height < o.hr_size.height && o.lr_size.width < o.hr_size.width,
          "LR size must be strictly smaller than HR size");
  require(o.lr_size.height >= 8 && o.lr_size.width >= 8, "LR sides must be >= 8");
  require(o.channels == 1 || o.channels == 3, "channels must be 1 or 3");

  Rng identity_rng(derive_seed(o.seed, {0}));
  const std::vector<AttributeVector> attrs = assign_attributes(o.n_identities, identity_rng);
  std::vector<FaceGeometry> faces;
  faces.reserve(attrs.size());
  for (const auto& a : attrs) faces.push_back(sample_geometry(a, identity_rng));

  DatasetSplit split;
  split.role = SplitRole::kTrain;
  split.seed = o.seed;
  split.records.reserve(static_cast<std::size_t>(o.n_identities) * o.images_per_identity);
  for (int id = 0; id < o.n_identities; ++id) {
    for (int k = 0; k < o.images_per_identity; ++k) {
      Rng rng(derive_seed(o.seed, {1, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(k)}));
      std::uniform_real_distribution<double> shift(-0.05, 0.05);
      std::uniform_real_distribution<double> gain(0.9, 1.1);
      ImageJitter j;
      j.tx = shift(rng);
      j.ty = shift(rng);
      j.brightness = gain(rng);
      ImageGrid hr = render(faces[id], o.hr_size, o.channels, j, rng);
      ImageGrid lr = downsample(hr, o.lr_size);
      split.records.push_back({id, std::move(hr), std::move(lr), faces[id].attributes});
    }
  }
  return split;
}

DirectoryLoadResult load_directory_dataset(const std::filesystem::path& image_directory,
                                           const std::filesystem::path& attribute_table,
                                           Size2 lr_size, std::optional<Size2> hr_size) {
  std::ifstream in(attribute_table);
  if (!in) throw InvalidInput("cannot open attribute table: " + attribute_table.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("attribute table is empty");
  const std::vector<std::string> header = split_csv_line(line);
  const bool has_filename = !header.empty() && header.front() == "filename";
  const std::size_t offset = has_filename ? 1 : 0;
  bool header_ok = header.size() == offset + 1 + kNumAttributes && header[offset] == "identity";
  for (int t = 0; header_ok && t < kNumAttributes; ++t) {
    header_ok = header[offset + 1 + t] == kAttributeNames[t];
  }
  if (!header_ok) {
    throw InvalidInput("malformed attribute header (" + std::to_string(header.size()) +
                       " columns): " + line);
  }

  DirectoryLoadResult result;
  result.split.role = SplitRole::kTrain;
  std::size_t row = 0;
  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw InvalidInput("line " + std::to_string(line_number) + ": expected " +
                         std::to_string(header.size()) + " fields, got " +
                         std::to_string(f.size()));
    }
    FaceRecord rec;
    try {
      std::size_t used = 0;
      rec.identity = std::stoi(f[offset], &used);
      if (used != f[offset].size() || rec.identity < 0) throw std::invalid_argument("identity");
    } catch (const std::exception&) {
      throw InvalidInput("line " + std::to_string(line_number) + ": bad identity '" + f[offset] + "'");
    }
    for (int t = 0; t < kNumAttributes; ++t) {
      const std::string& bit = f[offset + 1 + t];
      if (bit != "0" && bit != "1") {
        throw InvalidInput("line " + std::to_string(line_number) + ": attribute " +
                           std::string(kAttributeNames[t]) + " must be 0 or 1");
      }
      rec.attributes.set(t, bit == "1");
    }
    const std::filesystem::path file =
        image_directory / (has_filename ? f[0] : padded_index(row) + ".png");
    ++row;
    try {
      ImageGrid hr = load_png(file);
      if (hr_size && hr.size() != *hr_size) {
        Tensor resized = area_resize(hr.pixels(), *hr_size);
        for (double& v : resized.values()) v = std::clamp(v, 0.0, 1.0);
        hr = ImageGrid(std::move(resized));
      }
      if (hr.height() <= lr_size.height || hr.width() <= lr_size.width) {
        throw DataError("image not larger than LR size: " + file.string());
      }
      rec.lr = downsample(hr, lr_size);
      rec.hr = std::move(hr);
    } catch (const Error& e) {
      spdlog::debug("skipping row {}: {}", line_number, e.what());
      ++result.skipped;
      continue;
    }
    result.split.records.push_back(std::move(rec));
  }
  if (result.skipped > 0) {
    spdlog::warn("skipped {} unreadable row(s) in {}", result.skipped, attribute_table.string());
  }
  if (result.split.records.empty()) {
    throw DataError("no valid rows in " + attribute_table.string());
  }
  return result;
}

void save_directory_dataset(const DatasetSplit& split, const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory / "images", ec);
  if (ec) throw DataError("cannot create " + (directory / "images").string() + ": " + ec.message());
  std::ofstream csv(directory / "attributes.csv");
  if (!csv) throw DataError("cannot write " + (directory / "attributes.csv").string());
  csv << "filename,identity";
  for (auto name : kAttributeNames) csv << ',' << name;
  csv << '\n';
  for (std::size_t k = 0; k < split.records.size(); ++k) {
    const FaceRecord& r = split.records[k];
    const std::string name = padded_index(k) + ".png";
    save_png(r.hr, directory / "images" / name);
    csv << name << ',' << r.identity;
    for (int t = 0; t < kNumAttributes; ++t) csv << ',' << (r.attributes[t] ? 1 : 0);
    csv << '\n';
  }
  if (!csv) throw DataError("failed writing attribute table in " + directory.string());
}

std::uint64_t dataset_digest(const DatasetSplit& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte & 0xff;
    h *= 0x100000001b3ULL;
  };
  auto mix_int = [&](std::int64_t v) {
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint64_t>(v) >> (8 * i));
  };
  mix_int(static_cast<std::int64_t>(split.records.size()));
  for (const auto& r : split.records) {
    mix_int(r.identity);
    for (auto b : r.attributes.bits) mix(b);
    const auto& p = r.hr.pixels();
    mix_int(p.channels());
    mix_int(p.height());
    mix_int(p.width());
    for (double v : p.values()) mix(static_cast<std::uint64_t>(std::lround(v * 255.0)));
  }
  return h;
}

std::pair<DatasetSplit, DatasetSplit> holdout_split(const DatasetSplit& split,
                                                    int holdout_per_identity) {
  require(holdout_per_identity >= 0, "holdout count must be non-negative");
  DatasetSplit train{{}, SplitRole::kTrain, split.seed};
  DatasetSplit test{{}, SplitRole::kTest, split.seed};
  for (int id : split.identities()) {
    std::vector<const FaceRecord*> mine;
    for (const auto& r : split.records) {
      if (r.identity == id) mine.push_back(&r);
    }
    const int n = static_cast<int>(mine.size());
    const int keep = n > holdout_per_identity ? n - holdout_per_identity : n;
    for (int k = 0; k < n; ++k) (k < keep ? train : test).records.push_back(*mine[k]);
  }
  return {std::move(train), std::move(test)};
}

PairBatch sample_balanced_pairs(const DatasetSplit& split, int batch_size, std::uint64_t seed) {
  require(batch_size >= 2, "batch size must be >= 2");
  const std::vector<int> ids = split.identities();
  if (ids.size() < 2) throw InvalidInput("cannot form impostor pairs from a single identity");
  require(static_cast<std::size_t>(batch_size) <= split.records.size(),
          "batch size exceeds the number of records");

  Rng rng(seed);
  std::vector<std::size_t> order(split.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const int genuine = (batch_size + 1) / 2;
  PairBatch batch;
  for (int k = 0; k < batch_size; ++k) {
    const FaceRecord& anchor = split.records[order[k]];
    const bool is_genuine = k < genuine;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < split.records.size(); ++i) {
      if ((split.records[i].identity == anchor.identity) == is_genuine) candidates.push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const FaceRecord& partner = split.records[candidates[pick(rng)]];
    batch.lr_images.push_back(anchor.lr);
    batch.hr_images.push_back(partner.hr);
    batch.pair_labels.push_back(is_genuine ? PairLabel::kGenuine : PairLabel::kImpostor);
    batch.lr_attributes.push_back(anchor.attributes);
    batch.hr_attributes.push_back(partner.attributes);
    batch.lr_identities.push_back(anchor.identity);
    batch.hr_identities.push_back(partner.identity);
  }
  return batch;
}

}  // namespace xres
