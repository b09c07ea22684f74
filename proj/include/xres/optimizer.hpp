#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace xres {

struct AdamOptions {
  double learning_rate = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Adam with bias correction. State is kept per parameter vector.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t parameter_count);

  void step(std::span<double> params, std::span<const double> grad, const AdamOptions& o);

  std::int64_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  // Restores serialized state; sizes must match.
  void restore(std::int64_t t, std::vector<double> m, std::vector<double> v);

 private:
  std::int64_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace xres
