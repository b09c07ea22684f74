#include "xres/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <string>

namespace xres {

ImageGrid::ImageGrid(Tensor pixels) : pixels_(std::move(pixels)) {
  require(pixels_.channels() == 1 || pixels_.channels() == 3,
          "image channels must be 1 or 3, got " + std::to_string(pixels_.channels()));
  require(pixels_.height() >= 8 && pixels_.width() >= 8,
          "image sides must be >= 8, got " + std::to_string(pixels_.height()) + "x" +
              std::to_string(pixels_.width()));
  for (double v : pixels_.values()) {
    require(v >= 0.0 && v <= 1.0, "image value outside [0,1]");
  }
}

ImageGrid::ImageGrid(Size2 size, int channels, double fill)
    : ImageGrid(Tensor(Shape{channels, size.height, size.width}, fill)) {}

double ImageGrid::mean() const {
  double sum = 0.0;
  for (double v : pixels_.values()) sum += v;
  return sum / static_cast<double>(pixels_.size());
}

// Output cell o covers input span [o*in, (o+1)*in) measured in units of
// 1/out; input pixel i covers [i*out, (i+1)*out). Integer overlaps keep the
// weights exact rationals.
std::vector<std::vector<AreaResampler::Tap>> AreaResampler::build_taps(int in, int out) {
  std::vector<std::vector<Tap>> taps(out);
  for (int o = 0; o < out; ++o) {
    const long lo = static_cast<long>(o) * in;
    const long hi = lo + in;
    const int first = static_cast<int>(lo / out);
    const int last = static_cast<int>((hi - 1) / out);
    for (int i = first; i <= last; ++i) {
      const long overlap = std::min(hi, static_cast<long>(i + 1) * out) -
                           std::max(lo, static_cast<long>(i) * out);
      if (overlap > 0) {
        taps[o].push_back({i, static_cast<double>(overlap) / static_cast<double>(in)});
      }
    }
  }
  return taps;
}

AreaResampler::AreaResampler(Size2 from, Size2 to)
    : from_(from),
      to_(to),
      rows_(build_taps(from.height, to.height)),
      cols_(build_taps(from.width, to.width)) {
  require(from.height > 0 && from.width > 0 && to.height > 0 && to.width > 0,
          "resample sizes must be positive");
}

Tensor AreaResampler::apply(const Tensor& input) const {
  require(input.height() == from_.height && input.width() == from_.width,
          "resampler input size mismatch");
  const int channels = input.channels();
  Tensor out(Shape{channels, to_.height, to_.width});
  std::vector<double> row(static_cast<std::size_t>(from_.width));
  for (int c = 0; c < channels; ++c) {
    for (int oy = 0; oy < to_.height; ++oy) {
      std::fill(row.begin(), row.end(), 0.0);
      for (const Tap& ty : rows_[oy]) {
        for (int x = 0; x < from_.width; ++x) row[x] += ty.weight * input.at(c, ty.index, x);
      }
      for (int ox = 0; ox < to_.width; ++ox) {
        double acc = 0.0;
        for (const Tap& tx : cols_[ox]) acc += tx.weight * row[tx.index];
        out.at(c, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor AreaResampler::apply_adjoint(const Tensor& grad_output) const {
  require(grad_output.height() == to_.height && grad_output.width() == to_.width,
          "resampler adjoint size mismatch");
  const int channels = grad_output.channels();
  Tensor grad(Shape{channels, from_.height, from_.width});
  std::vector<double> row(static_cast<std::size_t>(from_.width));
  for (int c = 0; c < channels; ++c) {
    for (int oy = 0; oy < to_.height; ++oy) {
      std::fill(row.begin(), row.end(), 0.0);
      for (int ox = 0; ox < to_.width; ++ox) {
        const double g = grad_output.at(c, oy, ox);
        for (const Tap& tx : cols_[ox]) row[tx.index] += tx.weight * g;
      }
      for (const Tap& ty : rows_[oy]) {
        for (int x = 0; x < from_.width; ++x) grad.at(c, ty.index, x) += ty.weight * row[x];
      }
    }
  }
  return grad;
}

Tensor area_resize(const Tensor& input, Size2 target) {
  if (input.height() == target.height && input.width() == target.width) return input;
  return AreaResampler({input.height(), input.width()}, target).apply(input);
}

ImageGrid downsample(const ImageGrid& hr, Size2 target) {
  require(target.height <= hr.height() && target.width <= hr.width(),
          "downsample target " + std::to_string(target.height) + "x" +
              std::to_string(target.width) + " exceeds source " +
              std::to_string(hr.height()) + "x" + std::to_string(hr.width()));
  Tensor out = area_resize(hr.pixels(), target);
  // Convex weights can overshoot [0,1] by an ulp; clamp before validation.
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageGrid(std::move(out));
}

ImageGrid load_png(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot read image: " + path.string());
  if (raw.depth() != CV_8U) throw DataError("image is not 8-bit: " + path.string());
  const int stored = raw.channels();
  if (stored != 1 && stored != 3 && stored != 4) {
    throw DataError("unsupported channel count in " + path.string());
  }
  // OpenCV stores BGR(A); alpha is dropped.
  const int channels = stored == 1 ? 1 : 3;
  Tensor t(Shape{channels, raw.rows, raw.cols});
  for (int y = 0; y < raw.rows; ++y) {
    const auto* row = raw.ptr<unsigned char>(y);
    for (int x = 0; x < raw.cols; ++x) {
      for (int c = 0; c < channels; ++c) {
        const int src = channels == 3 ? 2 - c : c;
        t.at(c, y, x) = row[x * stored + src] / 255.0;
      }
    }
  }
  return ImageGrid(std::move(t));
}

void save_png(const ImageGrid& image, const std::filesystem::path& path) {
  const int channels = image.channels();
  cv::Mat mat(image.height(), image.width(), channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < channels; ++c) {
        // RGB -> BGR for OpenCV.
        const int src = channels == 3 ? 2 - c : c;
        row[x * channels + c] = static_cast<unsigned char>(
            std::lround(image.pixels().at(src, y, x) * 255.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), mat)) throw DataError("cannot write image: " + path.string());
}

}  // namespace xres
