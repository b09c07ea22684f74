#include "xres/optimizer.hpp"

#include <cmath>

#include "xres/errors.hpp"

namespace xres {

void AdamOptions::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0,1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0,1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

Adam::Adam(std::size_t parameter_count) : m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, const AdamOptions& o) {
  require(params.size() == m_.size() && grad.size() == m_.size(),
          "optimizer state does not match parameter count");
  ++t_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = o.beta1 * m_[i] + (1.0 - o.beta1) * grad[i];
    v_[i] = o.beta2 * v_[i] + (1.0 - o.beta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
  }
}

void Adam::restore(std::int64_t t, std::vector<double> m, std::vector<double> v) {
  if (m.size() != m_.size() || v.size() != v_.size() || t < 0) {
    throw IncompatibleError("optimizer state size mismatch");
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace xres
