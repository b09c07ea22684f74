#include "xres/networks.hpp"

#include <bit>
#include <string>

namespace xres {

void GeneratorSpec::validate() const {
  const int factor = 1 << depth;
  if (channels != 1 && channels != 3) throw ConfigError("generator channels must be 1 or 3");
  if (depth < 1) throw ConfigError("generator depth must be >= 1");
  if (input.height < 8 || input.width < 8) throw ConfigError("generator input sides must be >= 8");
  if (input.height % factor != 0 || input.width % factor != 0) {
    throw ConfigError("generator input " + std::to_string(input.height) + "x" +
                      std::to_string(input.width) + " is not divisible by 2^" +
                      std::to_string(depth));
  }
  if (embedding_dim < 8) throw ConfigError("embedding dimension must be >= 8");
  if (base_width < 1) throw ConfigError("generator base width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0,1)");
  }
}

Generator::Generator(GeneratorSpec spec) : spec_(spec) {
  spec_.validate();
  ParamLayout layout;
  const int depth = spec_.depth;
  int in = spec_.channels;
  for (int l = 0; l < depth; ++l) {
    const int width = spec_.base_width << l;
    encoder_.push_back(Conv2d::create(layout, in, width, 3, 1, 1));
    if (spec_.instance_norm) encoder_norms_.push_back(InstanceNorm::create(layout, width));
    in = width;
  }
  const int bottleneck_width = spec_.base_width << depth;
  bottleneck_ = Conv2d::create(layout, in, bottleneck_width, 3, 1, 1);
  projection_ = Linear::create(layout, bottleneck_width, spec_.embedding_dim);
  decoder_.resize(static_cast<std::size_t>(depth));
  for (int l = depth - 1; l >= 0; --l) {
    const int width = spec_.base_width << l;
    const int from_below = l == depth - 1 ? bottleneck_width : (spec_.base_width << (l + 1));
    const int dec_in = from_below + (spec_.skip_connections ? width : 0);
    decoder_[l] = Conv2d::create(layout, dec_in, width, 3, 1, 1);
  }
  output_ = Conv2d::create(layout, spec_.base_width, spec_.channels, 1, 1, 0);
  params_.assign(layout.total(), 0.0);
}

void Generator::initialize(Rng& rng) {
  for (const auto& c : encoder_) c.init(params_, rng);
  for (const auto& n : encoder_norms_) n.init(params_);
  bottleneck_.init(params_, rng);
  projection_.init(params_, rng, 3.0);
  for (int l = spec_.depth - 1; l >= 0; --l) decoder_[l].init(params_, rng);
  output_.init(params_, rng, 3.0);
}

GeneratorOutput Generator::forward(const ImageGrid& x, bool training, Rng* rng,
                                   Trace* trace) const {
  require(x.size() == spec_.input && x.channels() == spec_.channels,
          "generator expects " + std::to_string(spec_.input.height) + "x" +
              std::to_string(spec_.input.width) + "x" + std::to_string(spec_.channels) +
              " input, got " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
              "x" + std::to_string(x.channels()));
  Trace local;
  Trace& t = trace ? *trace : local;
  const int depth = spec_.depth;
  t.input = x.pixels();
  t.skips.assign(static_cast<std::size_t>(depth), Tensor{});
  t.level_inputs.assign(static_cast<std::size_t>(depth), Tensor{});
  t.norms.assign(encoder_norms_.size(), InstanceNorm::Trace{});
  t.decoder_inputs.assign(static_cast<std::size_t>(depth), Tensor{});
  t.decoder_outputs.assign(static_cast<std::size_t>(depth), Tensor{});

  Tensor h = x.pixels();
  for (int l = 0; l < depth; ++l) {
    t.level_inputs[l] = h;
    Tensor a = encoder_[l].forward(params_, h);
    if (spec_.instance_norm) a = encoder_norms_[l].forward(params_, a, t.norms[l]);
    t.skips[l] = relu(a);
    h = avg_pool2(t.skips[l]);
  }
  t.bottleneck_input = h;
  t.bottleneck = relu(bottleneck_.forward(params_, h));
  t.pooled = global_average_pool(t.bottleneck);
  Embedding z{projection_.forward(params_, t.pooled)};

  h = t.bottleneck;
  t.dropout_mask = Tensor{};
  if (training && spec_.stochasticity == Stochasticity::kDropout && spec_.dropout_rate > 0.0) {
    require(rng != nullptr, "training forward with dropout needs an rng");
    t.dropout_mask = dropout_mask(h.shape(), spec_.dropout_rate, *rng);
    h = multiply(h, t.dropout_mask);
  }
  for (int l = depth - 1; l >= 0; --l) {
    Tensor up = upsample2(h);
    t.decoder_inputs[l] = spec_.skip_connections ? concat_channels(up, t.skips[l]) : std::move(up);
    t.decoder_outputs[l] = relu(decoder_[l].forward(params_, t.decoder_inputs[l]));
    h = t.decoder_outputs[l];
  }
  t.output = sigmoid(output_.forward(params_, h));
  return {std::move(z), ImageGrid(t.output)};
}

void Generator::backward(const Trace& t, std::span<const double> grad_embedding,
                         const Tensor* grad_reconstruction, std::span<double> grad_params) const {
  require(grad_params.size() == params_.size(), "generator gradient buffer size mismatch");
  const int depth = spec_.depth;
  std::vector<Tensor> grad_skip(static_cast<std::size_t>(depth));
  Tensor grad_bottleneck(t.bottleneck.shape());

  if (grad_reconstruction != nullptr) {
    Tensor g = sigmoid_backward(t.output, *grad_reconstruction);
    g = output_.backward(params_, t.decoder_outputs[0], g, grad_params, true);
    for (int l = 0; l < depth; ++l) {
      g = relu_backward(t.decoder_outputs[l], g);
      g = decoder_[l].backward(params_, t.decoder_inputs[l], g, grad_params, true);
      if (spec_.skip_connections) {
        const int up_channels = g.channels() - t.skips[l].channels();
        auto [g_up, g_skip] = split_channels(g, up_channels);
        grad_skip[l] = std::move(g_skip);
        g = upsample2_backward(g_up);
      } else {
        g = upsample2_backward(g);
      }
    }
    if (!t.dropout_mask.values().empty()) g = multiply(g, t.dropout_mask);
    grad_bottleneck += g;
  }

  if (!grad_embedding.empty()) {
    require(grad_embedding.size() == static_cast<std::size_t>(spec_.embedding_dim),
            "embedding gradient length mismatch");
    const std::vector<double> g_pooled =
        projection_.backward(params_, t.pooled, grad_embedding, grad_params, true);
    grad_bottleneck += global_average_pool_backward(t.bottleneck.shape(), g_pooled);
  }

  Tensor g = relu_backward(t.bottleneck, grad_bottleneck);
  g = bottleneck_.backward(params_, t.bottleneck_input, g, grad_params, true);
  for (int l = depth - 1; l >= 0; --l) {
    Tensor ga = avg_pool2_backward(g);
    if (!grad_skip[l].values().empty()) ga += grad_skip[l];
    ga = relu_backward(t.skips[l], ga);
    if (spec_.instance_norm) ga = encoder_norms_[l].backward(params_, t.norms[l], ga, grad_params);
    g = encoder_[l].backward(params_, t.level_inputs[l], ga, grad_params, l > 0);
  }
}

void DiscriminatorSpec::validate() const {
  if (channels != 1 && channels != 3) throw ConfigError("discriminator channels must be 1 or 3");
  if (patch_divisor < 1 || !std::has_single_bit(static_cast<unsigned>(patch_divisor))) {
    throw ConfigError("patch divisor must be a power of two");
  }
  if (input.height % patch_divisor != 0 || input.width % patch_divisor != 0) {
    throw ConfigError("discriminator input not divisible by patch divisor " +
                      std::to_string(patch_divisor));
  }
  if (base_width < 1) throw ConfigError("discriminator base width must be >= 1");
}

Discriminator::Discriminator(DiscriminatorSpec spec) : spec_(spec) {
  spec_.validate();
  ParamLayout layout;
  const int downs = std::countr_zero(static_cast<unsigned>(spec_.patch_divisor));
  int in = 2 * spec_.channels;
  for (int i = 0; i < downs; ++i) {
    const int width = spec_.base_width << i;
    convs_.push_back(Conv2d::create(layout, in, width, 4, 2, 1));
    in = width;
  }
  convs_.push_back(Conv2d::create(layout, in, 1, 3, 1, 1));
  params_.assign(layout.total(), 0.0);
}

void Discriminator::initialize(Rng& rng) {
  for (const auto& c : convs_) c.init(params_, rng);
}

Tensor Discriminator::forward(const ImageGrid& candidate, const ImageGrid& condition,
                              Trace* trace) const {
  return forward(candidate.pixels(), condition.pixels(), trace);
}

Tensor Discriminator::forward(const Tensor& candidate, const Tensor& condition,
                              Trace* trace) const {
  require(candidate.shape() == condition.shape(), "candidate and condition differ in shape");
  require(candidate.height() == spec_.input.height && candidate.width() == spec_.input.width &&
              candidate.channels() == spec_.channels,
          "discriminator input size mismatch");
  Trace local;
  Trace& t = trace ? *trace : local;
  t.inputs.clear();
  t.pre_activations.clear();
  Tensor h = concat_channels(candidate, condition);
  const std::size_t downs = convs_.size() - 1;
  for (std::size_t i = 0; i < downs; ++i) {
    t.inputs.push_back(h);
    t.pre_activations.push_back(convs_[i].forward(params_, h));
    h = leaky_relu(t.pre_activations.back(), spec_.leaky_slope);
  }
  t.inputs.push_back(h);
  t.scores = sigmoid(convs_.back().forward(params_, h));
  return t.scores;
}

Tensor Discriminator::backward(const Trace& t, const Tensor& grad_scores,
                               std::span<double> grad_params, bool need_candidate_grad) const {
  require(grad_params.empty() || grad_params.size() == params_.size(),
          "discriminator gradient buffer size mismatch");
  const std::size_t downs = convs_.size() - 1;
  Tensor g = sigmoid_backward(t.scores, grad_scores);
  g = convs_.back().backward(params_, t.inputs[downs], g, grad_params,
                             downs > 0 || need_candidate_grad);
  for (std::size_t i = downs; i-- > 0;) {
    g = leaky_relu_backward(t.pre_activations[i], g, spec_.leaky_slope);
    g = convs_[i].backward(params_, t.inputs[i], g, grad_params, i > 0 || need_candidate_grad);
  }
  if (!need_candidate_grad) return {};
  return split_channels(g, spec_.channels).first;
}

double patch_decision(const Tensor& scores) {
  require(scores.size() > 0, "empty patch map");
  double s = 0.0;
  for (double v : scores.values()) s += v;
  return s / static_cast<double>(scores.size());
}

AttributeHead::AttributeHead(int embedding_dim, int num_attributes) {
  ParamLayout layout;
  linear_ = Linear::create(layout, embedding_dim, num_attributes);
  params_.assign(layout.total(), 0.0);
}

void AttributeHead::initialize(Rng& rng) { linear_.init(params_, rng, 1.0); }

std::vector<double> AttributeHead::forward(const Embedding& z) const {
  require(static_cast<int>(z.size()) == linear_.in_features,
          "attribute head expects embedding of length " + std::to_string(linear_.in_features) +
              ", got " + std::to_string(z.size()));
  std::vector<double> p = linear_.forward(params_, z.values);
  for (double& v : p) v = sigmoid(v);
  return p;
}

std::vector<double> AttributeHead::backward(const Embedding& z,
                                            std::span<const double> probabilities,
                                            std::span<const double> grad_probabilities,
                                            std::span<double> grad_params) const {
  std::vector<double> g_logit(probabilities.size());
  for (std::size_t t = 0; t < g_logit.size(); ++t) {
    g_logit[t] = grad_probabilities[t] * probabilities[t] * (1.0 - probabilities[t]);
  }
  return linear_.backward(params_, z.values, g_logit, grad_params, true);
}

FeatureNetwork::FeatureNetwork(FeatureNetworkSpec spec) : spec_(spec) {
  build();
  Rng rng(spec_.seed);
  for (const auto& c : convs_) c.init(params_, rng);
}

FeatureNetwork::FeatureNetwork(FeatureNetworkSpec spec, std::vector<double> imported_weights)
    : spec_(spec) {
  build();
  require(imported_weights.size() == params_.size(),
          "imported feature weights have " + std::to_string(imported_weights.size()) +
              " values, expected " + std::to_string(params_.size()));
  params_.assign(imported_weights.begin(), imported_weights.end());
}

void FeatureNetwork::build() {
  if (spec_.input.height % 4 != 0 || spec_.input.width % 4 != 0) {
    throw ConfigError("feature network input must be divisible by 4");
  }
  ParamLayout layout;
  const int b = spec_.base_width;
  convs_.push_back(Conv2d::create(layout, spec_.channels, b, 3, 1, 1));
  convs_.push_back(Conv2d::create(layout, b, 2 * b, 3, 1, 1));
  convs_.push_back(Conv2d::create(layout, 2 * b, 4 * b, 3, 1, 1));
  dims_ = {4 * b, spec_.input.width / 4, spec_.input.height / 4};
  params_.assign(layout.total(), 0.0);
}

Tensor FeatureNetwork::forward(const Tensor& x, Trace* trace) const {
  require(x.height() == spec_.input.height && x.width() == spec_.input.width &&
              x.channels() == spec_.channels,
          "feature network input size mismatch");
  Trace local;
  Trace& t = trace ? *trace : local;
  t.inputs.clear();
  t.outputs.clear();
  Tensor h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) h = avg_pool2(h);
    t.inputs.push_back(h);
    h = relu(convs_[i].forward(params_, h));
    t.outputs.push_back(h);
  }
  return h;
}

Tensor FeatureNetwork::backward_input(const Trace& t, const Tensor& grad_features) const {
  Tensor g = grad_features;
  for (std::size_t i = convs_.size(); i-- > 0;) {
    g = relu_backward(t.outputs[i], g);
    g = convs_[i].backward(params_, t.inputs[i], g, {}, true);
    if (i > 0) g = avg_pool2_backward(g);
  }
  return g;
}

AttributeNetwork::AttributeNetwork(AttributeNetworkSpec spec) : spec_(spec) {
  if (spec_.input.height % 8 != 0 || spec_.input.width % 8 != 0) {
    throw ConfigError("attribute network input must be divisible by 8");
  }
  ParamLayout layout;
  const int b = spec_.base_width;
  convs_.push_back(Conv2d::create(layout, spec_.channels, b, 4, 2, 1));
  convs_.push_back(Conv2d::create(layout, b, 2 * b, 4, 2, 1));
  convs_.push_back(Conv2d::create(layout, 2 * b, 4 * b, 4, 2, 1));
  const int flat = 4 * b * (spec_.input.height / 8) * (spec_.input.width / 8);
  readout_ = Linear::create(layout, flat, spec_.num_attributes);
  params_.assign(layout.total(), 0.0);
}

void AttributeNetwork::initialize(Rng& rng) {
  for (const auto& c : convs_) c.init(params_, rng);
  readout_.init(params_, rng, 1.0);
}

std::vector<double> AttributeNetwork::forward(const Tensor& x, Trace* trace) const {
  require(x.channels() == spec_.channels, "attribute network channel mismatch");
  Trace local;
  Trace& t = trace ? *trace : local;
  t.inputs.clear();
  t.outputs.clear();
  t.resampler.reset();
  Tensor h;
  if (x.height() != spec_.input.height || x.width() != spec_.input.width) {
    t.resampler.emplace(Size2{x.height(), x.width()}, spec_.input);
    h = t.resampler->apply(x);
  } else {
    h = x;
  }
  for (const auto& conv : convs_) {
    t.inputs.push_back(h);
    h = relu(conv.forward(params_, h));
    t.outputs.push_back(h);
  }
  t.flat.assign(h.values().begin(), h.values().end());
  std::vector<double> p = readout_.forward(params_, t.flat);
  for (double& v : p) v = sigmoid(v);
  t.probabilities = p;
  return p;
}

Tensor AttributeNetwork::backward(const Trace& t, std::span<const double> grad_probabilities,
                                  std::span<double> grad_params, bool need_input_grad) const {
  require(grad_params.empty() || grad_params.size() == params_.size(),
          "attribute network gradient buffer size mismatch");
  std::vector<double> g_logit(t.probabilities.size());
  for (std::size_t i = 0; i < g_logit.size(); ++i) {
    g_logit[i] = grad_probabilities[i] * t.probabilities[i] * (1.0 - t.probabilities[i]);
  }
  std::vector<double> g_flat = readout_.backward(params_, t.flat, g_logit, grad_params, true);
  Tensor g(t.outputs.back().shape(), std::move(g_flat));
  for (std::size_t i = convs_.size(); i-- > 0;) {
    g = relu_backward(t.outputs[i], g);
    g = convs_[i].backward(params_, t.inputs[i], g, grad_params, i > 0 || need_input_grad);
  }
  if (!need_input_grad) return {};
  if (t.resampler) return t.resampler->apply_adjoint(g);
  return g;
}

DiscriminatorSpec discriminator_spec_for(const GeneratorSpec& g, const DiscriminatorOptions& o) {
  DiscriminatorSpec d;
  d.input = g.input;
  d.channels = g.channels;
  d.base_width = o.base_width;
  d.patch_divisor = o.patch_divisor;
  d.leaky_slope = o.leaky_slope;
  return d;
}

CoupledNetworks init_networks(const GeneratorSpec& lr_spec, const GeneratorSpec& hr_spec,
                              std::uint64_t seed, const DiscriminatorOptions& options) {
  if (lr_spec.embedding_dim != hr_spec.embedding_dim) {
    throw ConfigError("LR and HR embedding dimensions differ: " +
                      std::to_string(lr_spec.embedding_dim) + " vs " +
                      std::to_string(hr_spec.embedding_dim));
  }
  CoupledNetworks nets{Generator(lr_spec),
                       Generator(hr_spec),
                       Discriminator(discriminator_spec_for(lr_spec, options)),
                       Discriminator(discriminator_spec_for(hr_spec, options)),
                       AttributeHead(lr_spec.embedding_dim),
                       AttributeHead(hr_spec.embedding_dim)};
  Rng rng(seed);
  nets.g_lr.initialize(rng);
  nets.g_hr.initialize(rng);
  nets.d_lr.initialize(rng);
  nets.d_hr.initialize(rng);
  nets.h_lr.initialize(rng);
  nets.h_hr.initialize(rng);
  return nets;
}

}  // namespace xres
