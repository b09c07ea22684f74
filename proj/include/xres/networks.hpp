#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xres/attributes.hpp"
#include "xres/image.hpp"
#include "xres/layers.hpp"

namespace xres {

// Point in the shared LR/HR embedding space.
struct Embedding {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

enum class Stochasticity { kNone, kDropout };

struct GeneratorSpec {
  Size2 input{16, 16};
  int channels = 1;
  int depth = 3;
  int base_width = 8;
  int embedding_dim = 128;
  bool skip_connections = true;
  bool instance_norm = true;  // after each encoder conv
  Stochasticity stochasticity = Stochasticity::kDropout;
  double dropout_rate = 0.3;

  void validate() const;
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct GeneratorOutput {
  Embedding embedding;
  ImageGrid reconstruction;
};

// U-Net encoder/decoder. The embedding is a linear projection of the
// globally pooled bottleneck; the decoder mirrors the encoder with
// nearest-neighbour upsampling and (optionally) skip concatenation, ending in
// a 1x1 conv and a logistic squash so reconstructions stay in (0, 1).
class Generator {
 public:
  struct Trace {
    Tensor input;
    std::vector<Tensor> skips;        // post-ReLU encoder outputs, one per level
    std::vector<Tensor> level_inputs; // conv inputs of each encoder level
    std::vector<InstanceNorm::Trace> norms;
    Tensor bottleneck_input;
    Tensor bottleneck;                // post-ReLU
    std::vector<double> pooled;
    Tensor dropout_mask;              // empty when inactive
    std::vector<Tensor> decoder_inputs;
    std::vector<Tensor> decoder_outputs;
    Tensor output;                    // post-sigmoid
  };

  explicit Generator(GeneratorSpec spec);

  void initialize(Rng& rng);
  const GeneratorSpec& spec() const { return spec_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  // rng is only consulted when training with dropout stochasticity.
  GeneratorOutput forward(const ImageGrid& x, bool training, Rng* rng = nullptr,
                          Trace* trace = nullptr) const;
  // Accumulates parameter gradients for upstream gradients on the embedding
  // and (optionally) the reconstruction.
  void backward(const Trace& trace, std::span<const double> grad_embedding,
                const Tensor* grad_reconstruction, std::span<double> grad_params) const;

 private:
  GeneratorSpec spec_;
  std::vector<Conv2d> encoder_;
  std::vector<InstanceNorm> encoder_norms_;
  Conv2d bottleneck_;
  Linear projection_;
  std::vector<Conv2d> decoder_;  // decoder_[l] produces level l
  Conv2d output_;
  AlignedVector params_;
};

struct DiscriminatorSpec {
  Size2 input{16, 16};
  int channels = 1;
  int base_width = 8;
  int patch_divisor = 8;  // score map side = input side / patch_divisor
  double leaky_slope = 0.25;

  void validate() const;
  Size2 patch_grid() const {
    return {input.height / patch_divisor, input.width / patch_divisor};
  }
  friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;
};

// Conditional patch discriminator over the channel concatenation
// (candidate, condition): strided 4x4 convs with leaky ReLU, then a 3x3 conv
// to one logit per patch.
class Discriminator {
 public:
  struct Trace {
    std::vector<Tensor> inputs;       // input of each conv
    std::vector<Tensor> pre_activations;
    Tensor scores;
  };

  explicit Discriminator(DiscriminatorSpec spec);

  void initialize(Rng& rng);
  const DiscriminatorSpec& spec() const { return spec_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }

  // Patch probabilities, shape (1, s_h, s_w).
  Tensor forward(const ImageGrid& candidate, const ImageGrid& condition,
                 Trace* trace = nullptr) const;
  Tensor forward(const Tensor& candidate, const Tensor& condition, Trace* trace = nullptr) const;
  // Returns the gradient w.r.t. the candidate image when requested.
  Tensor backward(const Trace& trace, const Tensor& grad_scores, std::span<double> grad_params,
                  bool need_candidate_grad) const;

 private:
  DiscriminatorSpec spec_;
  std::vector<Conv2d> convs_;  // last entry is the scoring conv
  AlignedVector params_;
};

// Scalar decision D(y|x) from a patch map: the mean patch probability.
double patch_decision(const Tensor& scores);

// T independent logistic classifiers on an embedding.
class AttributeHead {
 public:
  AttributeHead(int embedding_dim, int num_attributes = kNumAttributes);

  void initialize(Rng& rng);
  int embedding_dim() const { return linear_.in_features; }
  int num_attributes() const { return linear_.out_features; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }

  std::vector<double> forward(const Embedding& z) const;
  // probabilities must be the output of forward(z).
  std::vector<double> backward(const Embedding& z, std::span<const double> probabilities,
                               std::span<const double> grad_probabilities,
                               std::span<double> grad_params) const;

 private:
  Linear linear_;
  AlignedVector params_;
};

struct FeatureMapDims {
  int channels = 0;
  int width = 0;
  int height = 0;
  std::size_t size() const { return static_cast<std::size_t>(channels) * width * height; }
  friend bool operator==(const FeatureMapDims&, const FeatureMapDims&) = default;
};

struct FeatureNetworkSpec {
  Size2 input{16, 16};
  int channels = 1;
  int base_width = 8;
  std::uint64_t seed = 0x5eed;
  friend bool operator==(const FeatureNetworkSpec&, const FeatureNetworkSpec&) = default;
};

// Fixed-weight conv stack standing in for a pretrained perceptual backbone:
// conv-relu, pool, conv-relu, pool, conv-relu. Weights are drawn once from the
// seed (or imported) and never change afterwards.
class FeatureNetwork {
 public:
  struct Trace {
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
  };

  explicit FeatureNetwork(FeatureNetworkSpec spec);
  FeatureNetwork(FeatureNetworkSpec spec, std::vector<double> imported_weights);

  const FeatureNetworkSpec& spec() const { return spec_; }
  FeatureMapDims dims() const { return dims_; }
  std::span<const double> parameters() const { return params_; }

  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
  Tensor forward(const ImageGrid& x) const { return forward(x.pixels()); }
  Tensor backward_input(const Trace& trace, const Tensor& grad_features) const;

 private:
  void build();

  FeatureNetworkSpec spec_;
  std::vector<Conv2d> convs_;
  FeatureMapDims dims_;
  AlignedVector params_;
};

struct AttributeNetworkSpec {
  Size2 input{64, 64};
  int channels = 1;
  int base_width = 8;
  int num_attributes = kNumAttributes;
  friend bool operator==(const AttributeNetworkSpec&, const AttributeNetworkSpec&) = default;
};

// Image -> T attribute probabilities. Three stride-2 conv-relu blocks, then a
// linear read-out of the flattened map. Inputs of another size are
// area-resized to the native size first.
class AttributeNetwork {
 public:
  struct Trace {
    std::optional<AreaResampler> resampler;
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
    std::vector<double> flat;
    std::vector<double> probabilities;
  };

  explicit AttributeNetwork(AttributeNetworkSpec spec);

  void initialize(Rng& rng);
  const AttributeNetworkSpec& spec() const { return spec_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }

  std::vector<double> forward(const Tensor& x, Trace* trace = nullptr) const;
  std::vector<double> forward(const ImageGrid& x) const { return forward(x.pixels()); }
  // Gradient w.r.t. the caller's input (before any internal resize).
  Tensor backward(const Trace& trace, std::span<const double> grad_probabilities,
                  std::span<double> grad_params, bool need_input_grad) const;

 private:
  AttributeNetworkSpec spec_;
  std::vector<Conv2d> convs_;
  Linear readout_;
  AlignedVector params_;
};

struct DiscriminatorOptions {
  int base_width = 8;
  int patch_divisor = 8;
  double leaky_slope = 0.25;
};

struct CoupledNetworks {
  Generator g_lr;
  Generator g_hr;
  Discriminator d_lr;
  Discriminator d_hr;
  AttributeHead h_lr;
  AttributeHead h_hr;
};

DiscriminatorSpec discriminator_spec_for(const GeneratorSpec& g, const DiscriminatorOptions& o);

// Deterministic per seed. Throws ConfigError when embedding dims differ.
CoupledNetworks init_networks(const GeneratorSpec& lr_spec, const GeneratorSpec& hr_spec,
                              std::uint64_t seed, const DiscriminatorOptions& options = {});

}  // namespace xres
