#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "xres/tensor.hpp"

namespace xres {

using Rng = std::mt19937_64;

// Flat parameter buffer plus an allocator handing out contiguous slots.
// Every network keeps all of its trainable scalars in one vector so the
// optimizer, checkpointing, and finite-difference checks treat it uniformly.
class ParamLayout {
 public:
  std::size_t allocate(std::size_t count) {
    const std::size_t offset = total_;
    total_ += count;
    return offset;
  }
  std::size_t total() const { return total_; }

 private:
  std::size_t total_ = 0;
};

// 2-D convolution with bias. Weights are stored [out][in][ky][kx].
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  static Conv2d create(ParamLayout& layout, int in_channels, int out_channels, int kernel,
                       int stride, int padding);

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  int fan_in() const { return in_channels * kernel * kernel; }
  Shape output_shape(const Shape& in) const;

  Tensor forward(std::span<const double> params, const Tensor& input) const;
  // Accumulates parameter gradients into grad_params when it is non-empty and
  // returns the input gradient when need_input_grad is set (else empty).
  Tensor backward(std::span<const double> params, const Tensor& input, const Tensor& grad_output,
                  std::span<double> grad_params, bool need_input_grad) const;

  void init(std::span<double> params, Rng& rng, double gain = 6.0) const;
};

// Fully connected layer y = W x + b with W stored row-major [out][in].
struct Linear {
  int in_features = 0;
  int out_features = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  static Linear create(ParamLayout& layout, int in_features, int out_features);

  std::vector<double> forward(std::span<const double> params, std::span<const double> x) const;
  std::vector<double> backward(std::span<const double> params, std::span<const double> x,
                               std::span<const double> grad_y, std::span<double> grad_params,
                               bool need_input_grad) const;
  void init(std::span<double> params, Rng& rng, double gain = 6.0) const;
};

// Per-channel normalization over the spatial plane of one sample, followed by
// a learned scale and shift.
struct InstanceNorm {
  int channels = 0;
  double epsilon = 1e-5;
  std::size_t scale_offset = 0;
  std::size_t shift_offset = 0;

  struct Trace {
    Tensor normalized;
    std::vector<double> inv_std;
  };

  static InstanceNorm create(ParamLayout& layout, int channels);

  Tensor forward(std::span<const double> params, const Tensor& input, Trace& trace) const;
  Tensor backward(std::span<const double> params, const Trace& trace, const Tensor& grad_output,
                  std::span<double> grad_params) const;
  void init(std::span<double> params) const;
};

double sigmoid(double x);

Tensor relu(const Tensor& x);
// Gradient through relu given its output.
Tensor relu_backward(const Tensor& output, const Tensor& grad_output);

Tensor leaky_relu(const Tensor& x, double slope);
Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_output, double slope);

Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output);

// 2x2 average pooling, stride 2; sides must be even.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_output);

// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& grad_output);

Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits a gradient for concat_channels(a, b) back into its two parts.
std::pair<Tensor, Tensor> split_channels(const Tensor& grad, int first_channels);

std::vector<double> global_average_pool(const Tensor& x);
Tensor global_average_pool_backward(const Shape& input_shape, std::span<const double> grad);

// Inverted dropout mask (entries are 0 or 1/(1-rate)).
Tensor dropout_mask(const Shape& shape, double rate, Rng& rng);
Tensor multiply(const Tensor& a, const Tensor& b);

}  // namespace xres
