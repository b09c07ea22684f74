#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xres/attributes.hpp"
#include "xres/networks.hpp"

namespace xres {

// c(i,j): 0 for a genuine (same identity) pair, 1 for an impostor pair.
enum class PairLabel : std::uint8_t { kGenuine = 0, kImpostor = 1 };

// Probabilities are clamped to [kProbabilityEpsilon, 1 - kProbabilityEpsilon]
// before any logarithm.
inline constexpr double kProbabilityEpsilon = 1e-7;

struct LossWeights {
  double attribute = 1.0;             // lambda1, scales L_a
  double adversarial = 1.0;           // lambda2, scales L_GAN
  double perceptual = 0.5;            // lambda3, scales L_P (LR only)
  double attribute_perceptual = 0.5;  // lambda4, scales L_pa
  double reconstruction = 1.0;        // lambda5, scales L_2
  double margin = 1.0;                // contrastive margin m

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// The six aggregated terms of the total objective.
struct ObjectiveTerms {
  double coupling = 0.0;
  double attribute = 0.0;
  double adversarial = 0.0;
  double perceptual = 0.0;
  double attribute_perceptual = 0.0;
  double reconstruction = 0.0;
};

// Per-network components for one step plus the discriminator losses.
struct LossReport {
  double cpl = 0.0;
  double a_lr = 0.0;
  double a_hr = 0.0;
  double gan_lr = 0.0;
  double gan_hr = 0.0;
  double p_lr = 0.0;
  double pa_lr = 0.0;
  double pa_hr = 0.0;
  double l2_lr = 0.0;
  double l2_hr = 0.0;
  double total = 0.0;
  double d_lr = 0.0;
  double d_hr = 0.0;

  ObjectiveTerms terms() const {
    return {cpl, a_lr + a_hr, gan_lr + gan_hr, p_lr, pa_lr + pa_hr, l2_lr + l2_hr};
  }
};

// L_cont for one pair: 1/2 d^2 for genuine, 1/2 max(0, m - d^2) for impostor,
// with d^2 the squared Euclidean distance.
double contrastive_loss(const Embedding& z1, const Embedding& z2, PairLabel c, double margin);

struct PairGradient {
  double loss = 0.0;
  std::vector<double> grad_z1;
  std::vector<double> grad_z2;
};
PairGradient contrastive_loss_grad(const Embedding& z1, const Embedding& z2, PairLabel c,
                                   double margin);

// Mean of contrastive_loss over the supplied pairs.
double coupling_loss(std::span<const Embedding> lr, std::span<const Embedding> hr,
                     std::span<const PairLabel> labels, double margin);

// Clamps every probability to [kProbabilityEpsilon, 1 - kProbabilityEpsilon].
std::vector<double> clamp_probabilities(std::span<const double> probabilities);

// Summed binary cross-entropy over the attributes of one sample.
double attribute_cross_entropy(std::span<const double> probabilities,
                               std::span<const std::uint8_t> truth);
double attribute_cross_entropy(std::span<const double> probabilities, const AttributeVector& truth);
// d/dp of attribute_cross_entropy; zero where the clamp is active.
std::vector<double> attribute_cross_entropy_grad(std::span<const double> probabilities,
                                                 const AttributeVector& truth);

// Mean over samples of attribute_cross_entropy. Rejects probabilities
// outside the open interval (0, 1).
double attribute_prediction_loss(std::span<const std::vector<double>> predicted,
                                 std::span<const AttributeVector> truth);

struct AdversarialLosses {
  double discriminator = 0.0;  // -[log D(real) + log(1 - D(fake))]
  double generator = 0.0;      // -log D(fake)
};
AdversarialLosses cgan_losses(double real_score, double fake_score);

struct AdversarialGradients {
  double d_real = 0.0;       // d discriminator_loss / d real_score
  double d_fake = 0.0;       // d discriminator_loss / d fake_score
  double g_fake = 0.0;       // d generator_loss / d fake_score
};
AdversarialGradients cgan_loss_grads(double real_score, double fake_score);

// Mean absolute difference between two feature maps.
double perceptual_loss(const Tensor& fake_features, const Tensor& real_features);
Tensor perceptual_loss_grad(const Tensor& fake_features, const Tensor& real_features);

// Squared Euclidean distance between attribute score vectors.
double attribute_perceptual_loss(std::span<const double> fake_scores,
                                 std::span<const double> real_scores);
std::vector<double> attribute_perceptual_loss_grad(std::span<const double> fake_scores,
                                                   std::span<const double> real_scores);

// Per-pixel mean squared difference.
double l2_reconstruction_loss(const Tensor& fake, const Tensor& real);
double l2_reconstruction_loss(const ImageGrid& fake, const ImageGrid& real);
Tensor l2_reconstruction_loss_grad(const Tensor& fake, const Tensor& real);

// L_cpl + l1 L_a + l2 L_GAN + l3 L_P + l4 L_pa + l5 L_2. Throws NumericError
// naming the first non-finite term.
double total_loss(const ObjectiveTerms& terms, const LossWeights& weights);

}  // namespace xres
