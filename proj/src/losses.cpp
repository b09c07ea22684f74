#include "xres/losses.hpp"

#include <algorithm>
#include <cmath>

namespace xres {
namespace {

double squared_distance(const Embedding& a, const Embedding& b) {
  require(a.size() == b.size(), "embedding lengths differ: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return d2;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), std::string(what) + ": dimension mismatch");
}

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

void check_open_unit(double p, const char* what) {
  if (!(p > 0.0 && p < 1.0)) {
    throw InvalidInput(std::string(what) + " must lie strictly inside (0,1), got " +
                       std::to_string(p));
  }
}

}  // namespace

void LossWeights::validate() const {
  const double lambdas[] = {attribute, adversarial, perceptual, attribute_perceptual,
                            reconstruction};
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(margin > 0.0)) throw ConfigError("contrastive margin must be positive");
}

double contrastive_loss(const Embedding& z1, const Embedding& z2, PairLabel c, double margin) {
  require(margin > 0.0, "contrastive margin must be positive");
  const double d2 = squared_distance(z1, z2);
  if (c == PairLabel::kGenuine) return 0.5 * d2;
  return 0.5 * std::max(0.0, margin - d2);
}

PairGradient contrastive_loss_grad(const Embedding& z1, const Embedding& z2, PairLabel c,
                                   double margin) {
  PairGradient g;
  g.loss = contrastive_loss(z1, z2, c, margin);
  g.grad_z1.assign(z1.size(), 0.0);
  g.grad_z2.assign(z2.size(), 0.0);
  double scale = 0.0;
  if (c == PairLabel::kGenuine) {
    scale = 1.0;
  } else if (margin - squared_distance(z1, z2) > 0.0) {
    scale = -1.0;
  }
  if (scale != 0.0) {
    for (std::size_t i = 0; i < z1.size(); ++i) {
      const double d = z1[i] - z2[i];
      g.grad_z1[i] = scale * d;
      g.grad_z2[i] = -scale * d;
    }
  }
  return g;
}

double coupling_loss(std::span<const Embedding> lr, std::span<const Embedding> hr,
                     std::span<const PairLabel> labels, double margin) {
  require(!lr.empty(), "coupling loss needs at least one pair");
  require(lr.size() == hr.size() && lr.size() == labels.size(),
          "coupling loss inputs have unequal lengths");
  double sum = 0.0;
  for (std::size_t k = 0; k < lr.size(); ++k) sum += contrastive_loss(lr[k], hr[k], labels[k], margin);
  return sum / static_cast<double>(lr.size());
}

std::vector<double> clamp_probabilities(std::span<const double> probabilities) {
  std::vector<double> out(probabilities.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp_probability(probabilities[i]);
  return out;
}

double attribute_cross_entropy(std::span<const double> probabilities,
                               std::span<const std::uint8_t> truth) {
  require(probabilities.size() == truth.size(),
          "expected " + std::to_string(truth.size()) + " attribute probabilities, got " +
              std::to_string(probabilities.size()));
  double loss = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    check_open_unit(probabilities[t], "attribute probability");
    const double p = clamp_probability(probabilities[t]);
    loss -= truth[t] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

double attribute_cross_entropy(std::span<const double> probabilities,
                               const AttributeVector& truth) {
  return attribute_cross_entropy(probabilities, std::span<const std::uint8_t>(truth.bits));
}

std::vector<double> attribute_cross_entropy_grad(std::span<const double> probabilities,
                                                 const AttributeVector& truth) {
  require(probabilities.size() == truth.bits.size(), "attribute probability count mismatch");
  std::vector<double> g(probabilities.size(), 0.0);
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    const double raw = probabilities[t];
    if (raw < kProbabilityEpsilon || raw > 1.0 - kProbabilityEpsilon) continue;
    g[t] = truth[static_cast<int>(t)] ? -1.0 / raw : 1.0 / (1.0 - raw);
  }
  return g;
}

double attribute_prediction_loss(std::span<const std::vector<double>> predicted,
                                 std::span<const AttributeVector> truth) {
  require(!predicted.empty(), "attribute loss needs at least one sample");
  require(predicted.size() == truth.size(), "attribute predictions and truth differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    sum += attribute_cross_entropy(predicted[i], truth[i]);
  }
  return sum / static_cast<double>(predicted.size());
}

AdversarialLosses cgan_losses(double real_score, double fake_score) {
  check_open_unit(real_score, "real score");
  check_open_unit(fake_score, "fake score");
  return {-(std::log(real_score) + std::log(1.0 - fake_score)), -std::log(fake_score)};
}

AdversarialGradients cgan_loss_grads(double real_score, double fake_score) {
  check_open_unit(real_score, "real score");
  check_open_unit(fake_score, "fake score");
  return {-1.0 / real_score, 1.0 / (1.0 - fake_score), -1.0 / fake_score};
}

double perceptual_loss(const Tensor& fake_features, const Tensor& real_features) {
  require_same_shape(fake_features, real_features, "perceptual loss");
  require(fake_features.size() > 0, "perceptual loss on empty feature maps");
  auto a = fake_features.values();
  auto b = real_features.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

Tensor perceptual_loss_grad(const Tensor& fake_features, const Tensor& real_features) {
  require_same_shape(fake_features, real_features, "perceptual loss");
  Tensor g(fake_features.shape());
  const double inv = 1.0 / static_cast<double>(fake_features.size());
  auto a = fake_features.values();
  auto b = real_features.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    gv[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return g;
}

double attribute_perceptual_loss(std::span<const double> fake_scores,
                                 std::span<const double> real_scores) {
  require(fake_scores.size() == real_scores.size(), "attribute score lengths differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < fake_scores.size(); ++i) {
    const double d = fake_scores[i] - real_scores[i];
    sum += d * d;
  }
  return sum;
}

std::vector<double> attribute_perceptual_loss_grad(std::span<const double> fake_scores,
                                                   std::span<const double> real_scores) {
  require(fake_scores.size() == real_scores.size(), "attribute score lengths differ");
  std::vector<double> g(fake_scores.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (fake_scores[i] - real_scores[i]);
  return g;
}

double l2_reconstruction_loss(const Tensor& fake, const Tensor& real) {
  require_same_shape(fake, real, "L2 reconstruction loss");
  require(fake.size() > 0, "L2 reconstruction loss on empty images");
  auto a = fake.values();
  auto b = real.values();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double l2_reconstruction_loss(const ImageGrid& fake, const ImageGrid& real) {
  return l2_reconstruction_loss(fake.pixels(), real.pixels());
}

Tensor l2_reconstruction_loss_grad(const Tensor& fake, const Tensor& real) {
  require_same_shape(fake, real, "L2 reconstruction loss");
  Tensor g(fake.shape());
  const double scale = 2.0 / static_cast<double>(fake.size());
  auto a = fake.values();
  auto b = real.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < a.size(); ++i) gv[i] = scale * (a[i] - b[i]);
  return g;
}

double total_loss(const ObjectiveTerms& terms, const LossWeights& weights) {
  const std::pair<const char*, double> named[] = {
      {"cpl", terms.coupling},
      {"attribute", terms.attribute},
      {"adversarial", terms.adversarial},
      {"perceptual", terms.perceptual},
      {"attribute_perceptual", terms.attribute_perceptual},
      {"reconstruction", terms.reconstruction},
  };
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) {
      throw NumericError(name, std::string("non-finite loss component: ") + name);
    }
  }
  return terms.coupling + weights.attribute * terms.attribute +
         weights.adversarial * terms.adversarial + weights.perceptual * terms.perceptual +
         weights.attribute_perceptual * terms.attribute_perceptual +
         weights.reconstruction * terms.reconstruction;
}

}  // namespace xres
