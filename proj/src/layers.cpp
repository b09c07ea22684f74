#include "xres/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace xres {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

// Unfolds input patches into a (Cin*K*K) x (OH*OW) row-major matrix.
void im2col(const Conv2d& conv, const Tensor& in, const Shape& out_shape, RowMatrix& cols) {
  const int k = conv.kernel;
  const int oh = out_shape.height;
  const int ow = out_shape.width;
  const int ih = in.height();
  const int iw = in.width();
  cols.resize(static_cast<Eigen::Index>(conv.in_channels) * k * k,
              static_cast<Eigen::Index>(oh) * ow);
  for (int ci = 0; ci < conv.in_channels; ++ci) {
    const double* plane = in.plane(ci).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * conv.stride + ky - conv.padding;
          double* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= ih) {
            std::fill(drow, drow + ow, 0.0);
            continue;
          }
          const double* srow = plane + static_cast<std::size_t>(iy) * iw;
          if (conv.stride == 1) {
            const int shift = kx - conv.padding;
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow, iw - shift);
            for (int ox = 0; ox < lo; ++ox) drow[ox] = 0.0;
            for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox + shift];
            for (int ox = std::max(hi, lo); ox < ow; ++ox) drow[ox] = 0.0;
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * conv.stride + kx - conv.padding;
              drow[ox] = (ix >= 0 && ix < iw) ? srow[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Scatter-adds column gradients back onto the input grid (adjoint of im2col).
void col2im(const Conv2d& conv, const RowMatrix& cols, const Shape& out_shape, Tensor& grad_in) {
  const int k = conv.kernel;
  const int oh = out_shape.height;
  const int ow = out_shape.width;
  const int ih = grad_in.height();
  const int iw = grad_in.width();
  for (int ci = 0; ci < conv.in_channels; ++ci) {
    double* plane = grad_in.plane(ci).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * conv.stride + ky - conv.padding;
          if (iy < 0 || iy >= ih) continue;
          const double* srow = src + static_cast<std::size_t>(oy) * ow;
          double* drow = plane + static_cast<std::size_t>(iy) * iw;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * conv.stride + kx - conv.padding;
            if (ix >= 0 && ix < iw) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

void uniform_fill(std::span<double> dst, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : dst) v = dist(rng);
}

// Bias-free convolution with an explicit row-major weight matrix.
Tensor convolve(const Conv2d& conv, const double* weights, const Tensor& input) {
  const Shape out_shape = conv.output_shape(input.shape());
  Tensor out(out_shape);
  ConstMatrixMap w(weights, conv.out_channels, conv.fan_in());
  MatrixMap y(out.data(), conv.out_channels, static_cast<Eigen::Index>(out_shape.plane()));
  RowMatrix cols;
  im2col(conv, input, out_shape, cols);
  y.noalias() = w * cols;
  return out;
}

}  // namespace

Conv2d Conv2d::create(ParamLayout& layout, int in_channels, int out_channels, int kernel,
                      int stride, int padding) {
  Conv2d c;
  c.in_channels = in_channels;
  c.out_channels = out_channels;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.weight_offset = layout.allocate(c.weight_count());
  c.bias_offset = layout.allocate(static_cast<std::size_t>(out_channels));
  return c;
}

Shape Conv2d::output_shape(const Shape& in) const {
  require(in.channels == in_channels, "conv expects " + std::to_string(in_channels) +
                                          " input channels, got " + std::to_string(in.channels));
  const int oh = (in.height + 2 * padding - kernel) / stride + 1;
  const int ow = (in.width + 2 * padding - kernel) / stride + 1;
  require(oh > 0 && ow > 0, "conv input too small");
  return {out_channels, oh, ow};
}

Tensor Conv2d::forward(std::span<const double> params, const Tensor& input) const {
  const Shape out_shape = output_shape(input.shape());
  const Eigen::Index n = static_cast<Eigen::Index>(out_shape.plane());
  const Eigen::Index kdim = fan_in();
  Tensor out(out_shape);
  ConstMatrixMap w(params.data() + weight_offset, out_channels, kdim);
  MatrixMap y(out.data(), out_channels, n);
  if (kernel == 1 && stride == 1 && padding == 0) {
    ConstMatrixMap x(input.data(), kdim, n);
    y.noalias() = w * x;
  } else {
    RowMatrix cols;
    im2col(*this, input, out_shape, cols);
    y.noalias() = w * cols;
  }
  for (int co = 0; co < out_channels; ++co) y.row(co).array() += params[bias_offset + co];
  return out;
}

Tensor Conv2d::backward(std::span<const double> params, const Tensor& input,
                        const Tensor& grad_output, std::span<double> grad_params,
                        bool need_input_grad) const {
  const Shape out_shape = output_shape(input.shape());
  require(grad_output.shape() == out_shape, "conv grad shape mismatch");
  const Eigen::Index n = static_cast<Eigen::Index>(out_shape.plane());
  const Eigen::Index kdim = fan_in();
  ConstMatrixMap gy(grad_output.data(), out_channels, n);
  const bool pointwise = kernel == 1 && stride == 1 && padding == 0;
  if (!grad_params.empty()) {
    RowMatrix cols;
    if (!pointwise) im2col(*this, input, out_shape, cols);
    MatrixMap gw(grad_params.data() + weight_offset, out_channels, kdim);
    if (pointwise) {
      gw.noalias() += gy * ConstMatrixMap(input.data(), kdim, n).transpose();
    } else {
      gw.noalias() += gy * cols.transpose();
    }
    for (int co = 0; co < out_channels; ++co) grad_params[bias_offset + co] += gy.row(co).sum();
  }
  if (!need_input_grad) return {};
  ConstMatrixMap w(params.data() + weight_offset, out_channels, kdim);
  Tensor grad_in(input.shape());
  if (pointwise) {
    MatrixMap gx(grad_in.data(), kdim, n);
    gx.noalias() = w.transpose() * gy;
  } else if (stride == 1 && padding < kernel) {
    // Stride-1 input gradient is a full correlation of the output gradient
    // with the spatially flipped, channel-transposed kernel.
    Conv2d flipped;
    flipped.in_channels = out_channels;
    flipped.out_channels = in_channels;
    flipped.kernel = kernel;
    flipped.stride = 1;
    flipped.padding = kernel - 1 - padding;
    const int kk = kernel * kernel;
    AlignedVector wf(weight_count());
    const double* wsrc = params.data() + weight_offset;
    for (int co = 0; co < out_channels; ++co) {
      for (int ci = 0; ci < in_channels; ++ci) {
        const double* src = wsrc + (static_cast<std::size_t>(co) * in_channels + ci) * kk;
        double* dst = wf.data() + (static_cast<std::size_t>(ci) * out_channels + co) * kk;
        for (int i = 0; i < kk; ++i) dst[i] = src[kk - 1 - i];
      }
    }
    grad_in = convolve(flipped, wf.data(), grad_output);
  } else {
    RowMatrix gcols = w.transpose() * gy;
    col2im(*this, gcols, out_shape, grad_in);
  }
  return grad_in;
}

void Conv2d::init(std::span<double> params, Rng& rng, double gain) const {
  uniform_fill(params.subspan(weight_offset, weight_count()), std::sqrt(gain / fan_in()), rng);
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(bias_offset), out_channels, 0.0);
}

Linear Linear::create(ParamLayout& layout, int in_features, int out_features) {
  Linear l;
  l.in_features = in_features;
  l.out_features = out_features;
  l.weight_offset = layout.allocate(static_cast<std::size_t>(in_features) * out_features);
  l.bias_offset = layout.allocate(static_cast<std::size_t>(out_features));
  return l;
}

std::vector<double> Linear::forward(std::span<const double> params,
                                    std::span<const double> x) const {
  require(static_cast<int>(x.size()) == in_features,
          "linear expects " + std::to_string(in_features) + " inputs, got " +
              std::to_string(x.size()));
  std::vector<double> y(static_cast<std::size_t>(out_features));
  for (int o = 0; o < out_features; ++o) {
    const double* row = params.data() + weight_offset + static_cast<std::size_t>(o) * in_features;
    double acc = params[bias_offset + o];
    for (int i = 0; i < in_features; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

std::vector<double> Linear::backward(std::span<const double> params, std::span<const double> x,
                                     std::span<const double> grad_y,
                                     std::span<double> grad_params,
                                     bool need_input_grad) const {
  std::vector<double> gx;
  if (need_input_grad) gx.assign(static_cast<std::size_t>(in_features), 0.0);
  for (int o = 0; o < out_features; ++o) {
    const double g = grad_y[o];
    const std::size_t row = weight_offset + static_cast<std::size_t>(o) * in_features;
    if (!grad_params.empty()) {
      for (int i = 0; i < in_features; ++i) grad_params[row + i] += g * x[i];
      grad_params[bias_offset + o] += g;
    }
    if (need_input_grad) {
      for (int i = 0; i < in_features; ++i) gx[i] += g * params[row + i];
    }
  }
  return gx;
}

void Linear::init(std::span<double> params, Rng& rng, double gain) const {
  uniform_fill(params.subspan(weight_offset, static_cast<std::size_t>(in_features) * out_features),
               std::sqrt(gain / in_features), rng);
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(bias_offset), out_features, 0.0);
}

InstanceNorm InstanceNorm::create(ParamLayout& layout, int channels) {
  InstanceNorm n;
  n.channels = channels;
  n.scale_offset = layout.allocate(static_cast<std::size_t>(channels));
  n.shift_offset = layout.allocate(static_cast<std::size_t>(channels));
  return n;
}

void InstanceNorm::init(std::span<double> params) const {
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(scale_offset), channels, 1.0);
  std::fill_n(params.begin() + static_cast<std::ptrdiff_t>(shift_offset), channels, 0.0);
}

Tensor InstanceNorm::forward(std::span<const double> params, const Tensor& input,
                             Trace& trace) const {
  require(input.channels() == channels, "instance norm channel mismatch");
  const double n = static_cast<double>(input.shape().plane());
  trace.normalized = Tensor(input.shape());
  trace.inv_std.assign(static_cast<std::size_t>(channels), 0.0);
  Tensor out(input.shape());
  for (int c = 0; c < channels; ++c) {
    auto x = input.plane(c);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    trace.inv_std[c] = inv;
    auto xh = trace.normalized.plane(c);
    auto y = out.plane(c);
    const double g = params[scale_offset + c];
    const double b = params[shift_offset + c];
    for (std::size_t i = 0; i < x.size(); ++i) {
      xh[i] = (x[i] - mean) * inv;
      y[i] = g * xh[i] + b;
    }
  }
  return out;
}

Tensor InstanceNorm::backward(std::span<const double> params, const Trace& trace,
                              const Tensor& grad_output, std::span<double> grad_params) const {
  const double n = static_cast<double>(grad_output.shape().plane());
  Tensor grad_input(grad_output.shape());
  for (int c = 0; c < channels; ++c) {
    auto dy = grad_output.plane(c);
    auto xh = trace.normalized.plane(c);
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      sum_dy += dy[i];
      sum_dy_xh += dy[i] * xh[i];
    }
    if (!grad_params.empty()) {
      grad_params[scale_offset + c] += sum_dy_xh;
      grad_params[shift_offset + c] += sum_dy;
    }
    const double k = params[scale_offset + c] * trace.inv_std[c] / n;
    auto dx = grad_input.plane(c);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      dx[i] = k * (n * dy[i] - sum_dy - xh[i] * sum_dy_xh);
    }
  }
  return grad_input;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_output) {
  Tensor g = grad_output;
  auto out = output.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (out[i] <= 0.0) gv[i] = 0.0;
  }
  return g;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : slope * v;
  return y;
}

Tensor leaky_relu_backward(const Tensor& input, const Tensor& grad_output, double slope) {
  Tensor g = grad_output;
  auto in = input.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (in[i] <= 0.0) gv[i] *= slope;
  }
  return g;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_output) {
  Tensor g = grad_output;
  auto out = output.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= out[i] * (1.0 - out[i]);
  return g;
}

Tensor avg_pool2(const Tensor& x) {
  require(x.height() % 2 == 0 && x.width() % 2 == 0, "avg_pool2 needs even sides");
  Tensor y(Shape{x.channels(), x.height() / 2, x.width() / 2});
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < y.height(); ++oy) {
      for (int ox = 0; ox < y.width(); ++ox) {
        y.at(c, oy, ox) = 0.25 * (x.at(c, 2 * oy, 2 * ox) + x.at(c, 2 * oy, 2 * ox + 1) +
                                  x.at(c, 2 * oy + 1, 2 * ox) + x.at(c, 2 * oy + 1, 2 * ox + 1));
      }
    }
  }
  return y;
}

Tensor avg_pool2_backward(const Tensor& grad_output) {
  Tensor g(Shape{grad_output.channels(), grad_output.height() * 2, grad_output.width() * 2});
  for (int c = 0; c < g.channels(); ++c) {
    for (int y = 0; y < g.height(); ++y) {
      for (int x = 0; x < g.width(); ++x) g.at(c, y, x) = 0.25 * grad_output.at(c, y / 2, x / 2);
    }
  }
  return g;
}

Tensor upsample2(const Tensor& x) {
  Tensor y(Shape{x.channels(), x.height() * 2, x.width() * 2});
  for (int c = 0; c < y.channels(); ++c) {
    for (int yy = 0; yy < y.height(); ++yy) {
      for (int xx = 0; xx < y.width(); ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    }
  }
  return y;
}

Tensor upsample2_backward(const Tensor& grad_output) {
  Tensor g(Shape{grad_output.channels(), grad_output.height() / 2, grad_output.width() / 2});
  for (int c = 0; c < grad_output.channels(); ++c) {
    for (int y = 0; y < grad_output.height(); ++y) {
      for (int x = 0; x < grad_output.width(); ++x) g.at(c, y / 2, x / 2) += grad_output.at(c, y, x);
    }
  }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.height() == b.height() && a.width() == b.width(), "concat spatial mismatch");
  std::vector<double> data(a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(Shape{a.channels() + b.channels(), a.height(), a.width()}, std::move(data));
}

std::pair<Tensor, Tensor> split_channels(const Tensor& grad, int first_channels) {
  const std::size_t cut = static_cast<std::size_t>(first_channels) * grad.shape().plane();
  auto v = grad.values();
  Tensor a(Shape{first_channels, grad.height(), grad.width()},
           std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(cut)));
  Tensor b(Shape{grad.channels() - first_channels, grad.height(), grad.width()},
           std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(cut), v.end()));
  return {std::move(a), std::move(b)};
}

std::vector<double> global_average_pool(const Tensor& x) {
  std::vector<double> out(static_cast<std::size_t>(x.channels()));
  const double inv = 1.0 / static_cast<double>(x.shape().plane());
  for (int c = 0; c < x.channels(); ++c) {
    double s = 0.0;
    for (double v : x.plane(c)) s += v;
    out[c] = s * inv;
  }
  return out;
}

Tensor global_average_pool_backward(const Shape& input_shape, std::span<const double> grad) {
  Tensor g(input_shape);
  const double inv = 1.0 / static_cast<double>(input_shape.plane());
  for (int c = 0; c < input_shape.channels; ++c) {
    for (double& v : g.plane(c)) v = grad[c] * inv;
  }
  return g;
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  Tensor mask(shape, 1.0);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = keep(rng) ? scale : 0.0;
  return mask;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "multiply shape mismatch");
  Tensor y = a;
  auto bv = b.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] *= bv[i];
  return y;
}

}  // namespace xres
