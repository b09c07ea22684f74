#pragma once

#include <filesystem>
#include <vector>

#include "xres/tensor.hpp"

namespace xres {

struct Size2 {
  int height = 0;
  int width = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

// An image with 1 or 3 channels, sides >= 8, every value in [0, 1].
class ImageGrid {
 public:
  ImageGrid() = default;
  // Validates the invariants; throws InvalidInput on violation.
  explicit ImageGrid(Tensor pixels);
  ImageGrid(Size2 size, int channels, double fill);

  const Tensor& pixels() const { return pixels_; }
  int height() const { return pixels_.height(); }
  int width() const { return pixels_.width(); }
  int channels() const { return pixels_.channels(); }
  Size2 size() const { return {height(), width()}; }
  Shape shape() const { return pixels_.shape(); }
  double mean() const;

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

 private:
  Tensor pixels_;
};

// Separable area-weighted resampling operator between two fixed sizes.
// Each output pixel averages the input area it covers (exact overlap
// weights), so it works for non-integer ratios and for upsampling, where it
// reduces to pixel replication. apply_adjoint is the transpose map used to
// push gradients back through the resize.
class AreaResampler {
 public:
  AreaResampler(Size2 from, Size2 to);

  Size2 from() const { return from_; }
  Size2 to() const { return to_; }

  Tensor apply(const Tensor& input) const;
  Tensor apply_adjoint(const Tensor& grad_output) const;

 private:
  struct Tap {
    int index;
    double weight;
  };
  static std::vector<std::vector<Tap>> build_taps(int in, int out);

  Size2 from_;
  Size2 to_;
  std::vector<std::vector<Tap>> rows_;
  std::vector<std::vector<Tap>> cols_;
};

// Area-averaging downsample. Rejects targets larger than the source.
ImageGrid downsample(const ImageGrid& hr, Size2 target);

// Area resize in either direction; used where a fixed-size network must
// accept images of another resolution.
Tensor area_resize(const Tensor& input, Size2 target);

// 8-bit PNG I/O. Loading scales to [0, 1]; channels are 1 (gray) or 3 (RGB).
ImageGrid load_png(const std::filesystem::path& path);
void save_png(const ImageGrid& image, const std::filesystem::path& path);

}  // namespace xres
