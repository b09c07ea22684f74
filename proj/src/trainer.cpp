#include "xres/trainer.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "xres/evaluator.hpp"
#include "xres/random.hpp"

namespace xres {

using nlohmann::ordered_json;

void Stage::validate() const {
  if (name.empty()) throw ConfigError("stage name must not be empty");
  if (epochs < 0) throw ConfigError("stage '" + name + "': epochs must be non-negative");
  if (!lr_side && !hr_side) throw ConfigError("stage '" + name + "' evaluates no sub-network");
  if (losses.coupling && !(lr_side && hr_side)) {
    throw ConfigError("stage '" + name + "': coupling needs both sub-networks");
  }
}

std::vector<Stage> default_schedule(int init_epochs, int coupling_epochs, int attribute_epochs,
                                    int joint_epochs) {
  LossSet per_network;
  per_network.adversarial = true;
  per_network.reconstruction = true;
  per_network.perceptual = true;

  Stage init_lr{"init-lr", init_epochs, per_network, {}, true, false};
  init_lr.trainable.g_lr = init_lr.trainable.d_lr = true;
  Stage init_hr{"init-hr", init_epochs, per_network, {}, false, true};
  init_hr.trainable.g_hr = init_hr.trainable.d_hr = true;

  LossSet coupled = per_network;
  coupled.coupling = true;
  Trainable generators = Trainable::all();
  generators.h_lr = generators.h_hr = false;
  Stage coupling{"coupling", coupling_epochs, coupled, generators, true, true};

  LossSet with_attributes = coupled;
  with_attributes.attribute = true;
  with_attributes.attribute_perceptual = true;
  Trainable heads;
  heads.h_lr = heads.h_hr = true;
  Stage attributes{"attributes", attribute_epochs, with_attributes, heads, true, true};

  Stage joint{"joint", joint_epochs, LossSet::all(), Trainable::all(), true, true};
  return {init_lr, init_hr, coupling, attributes, joint};
}

void TrainConfig::validate() const {
  weights.validate();
  adam.validate();
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (schedule.empty()) throw ConfigError("stage schedule must not be empty");
  if (max_epochs_per_stage < 0) throw ConfigError("max epochs per stage must be non-negative");
  for (const auto& s : schedule) s.validate();
  if (attribute_pretrain.epochs < 0 || attribute_pretrain.batch_size < 1 ||
      !(attribute_pretrain.learning_rate > 0.0)) {
    throw ConfigError("invalid attribute pretraining options");
  }
}

ModelSpec ModelSpec::for_sizes(Size2 lr_size, Size2 hr_size, int channels) {
  ModelSpec m;
  m.lr.input = lr_size;
  m.lr.channels = channels;
  auto divisible = [](Size2 s, int d) { return s.height % (1 << d) == 0 && s.width % (1 << d) == 0; };
  while (m.lr.depth > 1 && !divisible(lr_size, m.lr.depth)) --m.lr.depth;
  m.hr = m.lr;
  m.hr.input = hr_size;
  m.hr.base_width = 4;
  // Deepen the HR encoder until both bottlenecks have the same spatial size.
  const int lr_bottleneck = lr_size.height >> m.lr.depth;
  while ((hr_size.height >> m.hr.depth) > lr_bottleneck && divisible(hr_size, m.hr.depth + 1)) {
    ++m.hr.depth;
  }
  m.feature.input = lr_size;
  m.feature.channels = channels;
  m.attribute.input = hr_size;
  m.attribute.channels = channels;
  return m;
}

void ModelSpec::validate() const {
  lr.validate();
  hr.validate();
  if (lr.embedding_dim != hr.embedding_dim) {
    throw ConfigError("LR and HR embedding dimensions differ: " +
                      std::to_string(lr.embedding_dim) + " vs " +
                      std::to_string(hr.embedding_dim));
  }
  if (lr.channels != hr.channels) throw ConfigError("LR and HR channel counts differ");
  if (feature.input != lr.input || feature.channels != lr.channels) {
    throw ConfigError("feature network must take LR-sized inputs");
  }
  if (attribute.channels != hr.channels) throw ConfigError("attribute network channel mismatch");
  discriminator_spec_for(lr, discriminator).validate();
  discriminator_spec_for(hr, discriminator).validate();
}

OptimizerStates OptimizerStates::for_networks(const CoupledNetworks& n) {
  return {Adam(n.g_lr.parameters().size()), Adam(n.g_hr.parameters().size()),
          Adam(n.d_lr.parameters().size()), Adam(n.d_hr.parameters().size()),
          Adam(n.h_lr.parameters().size()), Adam(n.h_hr.parameters().size())};
}

Checkpoint initial_checkpoint(const ModelSpec& model, const TrainConfig& config) {
  model.validate();
  CoupledNetworks nets = init_networks(model.lr, model.hr, config.seed, model.discriminator);
  AttributeNetwork attribute(model.attribute);
  Rng rng(derive_seed(config.seed, {7}));
  attribute.initialize(rng);
  OptimizerStates optimizer = OptimizerStates::for_networks(nets);
  return Checkpoint{model,
                    config,
                    std::move(nets),
                    FrozenNetworks{FeatureNetwork(model.feature), std::move(attribute)},
                    std::move(optimizer)};
}

namespace {

struct Gradients {
  std::vector<double> g_lr, g_hr, d_lr, d_hr, h_lr, h_hr;
};

// Parameter groups a stage actually updates.
struct ActiveUpdates {
  bool g_lr, g_hr, d_lr, d_hr, h_lr, h_hr;
};

struct TermSwitches {
  bool coupling, attribute, adversarial, perceptual, attribute_perceptual, reconstruction;
};

TermSwitches term_switches(const Stage& stage, const LossWeights& w) {
  const LossSet& l = stage.losses;
  return {l.coupling,
          l.attribute && w.attribute > 0.0,
          l.adversarial && w.adversarial > 0.0,
          l.perceptual && w.perceptual > 0.0,
          l.attribute_perceptual && w.attribute_perceptual > 0.0,
          l.reconstruction && w.reconstruction > 0.0};
}

ActiveUpdates active_updates(const Stage& stage, const TermSwitches& on) {
  const Trainable& t = stage.trainable;
  return {t.g_lr && stage.lr_side,
          t.g_hr && stage.hr_side,
          t.d_lr && stage.lr_side && on.adversarial,
          t.d_hr && stage.hr_side && on.adversarial,
          t.h_lr && stage.lr_side && on.attribute,
          t.h_hr && stage.hr_side && on.attribute};
}

void add_scaled(std::vector<double>& into, std::span<const double> g, double scale) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += scale * g[i];
}

std::span<double> maybe(std::vector<double>& buffer, bool enabled) {
  return enabled ? std::span<double>(buffer) : std::span<double>();
}

struct SideTerms {
  double attribute = 0.0;
  double adversarial = 0.0;
  double discriminator = 0.0;
  double perceptual = 0.0;
  double attribute_perceptual = 0.0;
  double reconstruction = 0.0;
};

struct SideRefs {
  const Generator& generator;
  const Discriminator& discriminator;
  const AttributeHead& head;
  std::vector<double>& grad_generator;
  std::vector<double>& grad_discriminator;
  std::vector<double>& grad_head;
  bool update_generator;
  bool update_discriminator;
  bool update_head;
  bool perceptual_side;  // the perceptual term exists only for the LR network
};

void axpy(Tensor& into, const Tensor& g, double scale) {
  auto a = into.values();
  auto b = g.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

// Mean patch score clamped away from 0 and 1; `clamped` reports whether the
// clamp was active (its gradient is then zero).
double decision(const Tensor& scores, bool& clamped) {
  const double raw = patch_decision(scores);
  const double c = std::clamp(raw, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  clamped = c != raw;
  return c;
}

// Per-network terms of one sample. Gradients land in the buffers of `s`
// already divided by the batch size; grad_z carries the coupling gradient in.
SideTerms side_terms(const SideRefs& s, const FrozenNetworks& frozen, const LossWeights& w,
                     const TermSwitches& on, const ImageGrid& x, const AttributeVector& truth,
                     const GeneratorOutput& out, const Generator::Trace& trace,
                     std::vector<double>& grad_z, double inv_batch) {
  SideTerms terms;
  const Tensor& real = x.pixels();
  const Tensor& fake = out.reconstruction.pixels();
  const bool g = s.update_generator;
  Tensor grad_recon(fake.shape());
  bool recon_grad = false;

  if (on.attribute) {
    const std::vector<double> probs = s.head.forward(out.embedding);
    terms.attribute = attribute_cross_entropy(clamp_probabilities(probs), truth);
    if (s.update_head || g) {
      std::vector<double> gp = attribute_cross_entropy_grad(probs, truth);
      for (double& v : gp) v *= w.attribute * inv_batch;
      const std::vector<double> gz =
          s.head.backward(out.embedding, probs, gp, maybe(s.grad_head, s.update_head));
      if (g) add_scaled(grad_z, gz, 1.0);
    }
  }
  if (on.reconstruction) {
    terms.reconstruction = l2_reconstruction_loss(fake, real);
    if (g) {
      axpy(grad_recon, l2_reconstruction_loss_grad(fake, real), w.reconstruction * inv_batch);
      recon_grad = true;
    }
  }
  if (on.perceptual && s.perceptual_side) {
    FeatureNetwork::Trace ft;
    const Tensor f_fake = frozen.feature.forward(fake, g ? &ft : nullptr);
    const Tensor f_real = frozen.feature.forward(real);
    terms.perceptual = perceptual_loss(f_fake, f_real);
    if (g) {
      Tensor gf = perceptual_loss_grad(f_fake, f_real);
      for (double& v : gf.values()) v *= w.perceptual * inv_batch;
      axpy(grad_recon, frozen.feature.backward_input(ft, gf), 1.0);
      recon_grad = true;
    }
  }
  if (on.attribute_perceptual) {
    AttributeNetwork::Trace at;
    const std::vector<double> s_fake = frozen.attribute.forward(fake, g ? &at : nullptr);
    const std::vector<double> s_real = frozen.attribute.forward(real);
    terms.attribute_perceptual = attribute_perceptual_loss(s_fake, s_real);
    if (g) {
      std::vector<double> gs = attribute_perceptual_loss_grad(s_fake, s_real);
      for (double& v : gs) v *= w.attribute_perceptual * inv_batch;
      axpy(grad_recon, frozen.attribute.backward(at, gs, {}, true), 1.0);
      recon_grad = true;
    }
  }
  if (on.adversarial) {
    Discriminator::Trace rt;
    Discriminator::Trace ft;
    const bool d = s.update_discriminator;
    const Tensor real_scores = s.discriminator.forward(real, real, d ? &rt : nullptr);
    const Tensor fake_scores = s.discriminator.forward(fake, real, (d || g) ? &ft : nullptr);
    bool real_clamped = false;
    bool fake_clamped = false;
    const double r = decision(real_scores, real_clamped);
    const double f = decision(fake_scores, fake_clamped);
    const AdversarialLosses losses = cgan_losses(r, f);
    terms.discriminator = losses.discriminator;
    terms.adversarial = losses.generator;
    const AdversarialGradients dg = cgan_loss_grads(r, f);
    const double per_patch = inv_batch / static_cast<double>(real_scores.size());
    if (d && !real_clamped) {
      s.discriminator.backward(rt, Tensor(real_scores.shape(), dg.d_real * per_patch),
                               s.grad_discriminator, false);
    }
    if (d && !fake_clamped) {
      s.discriminator.backward(ft, Tensor(fake_scores.shape(), dg.d_fake * per_patch),
                               s.grad_discriminator, false);
    }
    if (g && !fake_clamped) {
      const Tensor grad_scores(fake_scores.shape(), w.adversarial * dg.g_fake * per_patch);
      axpy(grad_recon, s.discriminator.backward(ft, grad_scores, {}, true), 1.0);
      recon_grad = true;
    }
  }
  if (g) {
    const bool z_grad = on.coupling || on.attribute;
    s.generator.backward(trace, z_grad ? std::span<const double>(grad_z) : std::span<const double>(),
                         recon_grad ? &grad_recon : nullptr, s.grad_generator);
  }
  return terms;
}

void require_finite(const std::vector<double>& g, const char* component) {
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw NumericError(component, std::string("non-finite gradient in ") + component);
    }
  }
}

}  // namespace

StepGradients step_gradients(const Checkpoint& state, const PairBatch& batch, const Stage& stage,
                             std::uint64_t step_seed) {
  const LossWeights& w = state.config.weights;
  stage.validate();
  require(batch.size() >= 1, "empty training batch");
  const TermSwitches on = term_switches(stage, w);
  const ActiveUpdates up = active_updates(stage, on);
  const CoupledNetworks& n = state.networks;

  Gradients grads{std::vector<double>(n.g_lr.parameters().size()),
                  std::vector<double>(n.g_hr.parameters().size()),
                  std::vector<double>(n.d_lr.parameters().size()),
                  std::vector<double>(n.d_hr.parameters().size()),
                  std::vector<double>(n.h_lr.parameters().size()),
                  std::vector<double>(n.h_hr.parameters().size())};
  const SideRefs lr_refs{n.g_lr, n.d_lr, n.h_lr, grads.g_lr, grads.d_lr, grads.h_lr,
                         up.g_lr, up.d_lr, up.h_lr, true};
  const SideRefs hr_refs{n.g_hr, n.d_hr, n.h_hr, grads.g_hr, grads.d_hr, grads.h_hr,
                         up.g_hr, up.d_hr, up.h_hr, false};

  const std::size_t b = batch.size();
  const double inv = 1.0 / static_cast<double>(b);
  const std::size_t d = static_cast<std::size_t>(n.g_lr.spec().embedding_dim);
  LossReport rep;
  for (std::size_t k = 0; k < b; ++k) {
    Rng rng(derive_seed(step_seed, {k}));
    Generator::Trace tl;
    Generator::Trace th;
    std::optional<GeneratorOutput> ol;
    std::optional<GeneratorOutput> oh;
    if (stage.lr_side) ol = n.g_lr.forward(batch.lr_images[k], true, &rng, up.g_lr ? &tl : nullptr);
    if (stage.hr_side) oh = n.g_hr.forward(batch.hr_images[k], true, &rng, up.g_hr ? &th : nullptr);

    std::vector<double> gz1(d, 0.0);
    std::vector<double> gz2(d, 0.0);
    if (on.coupling) {
      const PairGradient pg =
          contrastive_loss_grad(ol->embedding, oh->embedding, batch.pair_labels[k], w.margin);
      rep.cpl += pg.loss * inv;
      add_scaled(gz1, pg.grad_z1, inv);
      add_scaled(gz2, pg.grad_z2, inv);
    }
    if (stage.lr_side) {
      const SideTerms t = side_terms(lr_refs, state.frozen, w, on, batch.lr_images[k],
                                     batch.lr_attributes[k], *ol, tl, gz1, inv);
      rep.a_lr += t.attribute * inv;
      rep.gan_lr += t.adversarial * inv;
      rep.d_lr += t.discriminator * inv;
      rep.p_lr += t.perceptual * inv;
      rep.pa_lr += t.attribute_perceptual * inv;
      rep.l2_lr += t.reconstruction * inv;
    }
    if (stage.hr_side) {
      const SideTerms t = side_terms(hr_refs, state.frozen, w, on, batch.hr_images[k],
                                     batch.hr_attributes[k], *oh, th, gz2, inv);
      rep.a_hr += t.attribute * inv;
      rep.gan_hr += t.adversarial * inv;
      rep.d_hr += t.discriminator * inv;
      rep.pa_hr += t.attribute_perceptual * inv;
      rep.l2_hr += t.reconstruction * inv;
    }
  }

  rep.total = total_loss(rep.terms(), w);
  if (!std::isfinite(rep.d_lr)) throw NumericError("d_lr", "non-finite loss component: d_lr");
  if (!std::isfinite(rep.d_hr)) throw NumericError("d_hr", "non-finite loss component: d_hr");

  StepGradients out;
  out.report = rep;
  std::pair<bool, std::vector<double>*> groups[] = {
      {up.g_lr, &grads.g_lr}, {up.g_hr, &grads.g_hr}, {up.d_lr, &grads.d_lr},
      {up.d_hr, &grads.d_hr}, {up.h_lr, &grads.h_lr}, {up.h_hr, &grads.h_hr}};
  std::vector<double>* targets[] = {&out.g_lr, &out.g_hr, &out.d_lr,
                                    &out.d_hr, &out.h_lr, &out.h_hr};
  const char* names[] = {"g_lr", "g_hr", "d_lr", "d_hr", "h_lr", "h_hr"};
  for (int i = 0; i < 6; ++i) {
    if (!groups[i].first) continue;
    require_finite(*groups[i].second, names[i]);
    *targets[i] = std::move(*groups[i].second);
  }
  return out;
}

LossReport train_step(Checkpoint& state, const PairBatch& batch, const Stage& stage,
                      std::uint64_t step_seed) {
  const StepGradients g = step_gradients(state, batch, stage, step_seed);
  const AdamOptions& adam = state.config.adam;
  OptimizerStates& o = state.optimizer;
  CoupledNetworks& n = state.networks;
  if (!g.d_lr.empty()) o.d_lr.step(n.d_lr.parameters(), g.d_lr, adam);
  if (!g.d_hr.empty()) o.d_hr.step(n.d_hr.parameters(), g.d_hr, adam);
  if (!g.g_lr.empty()) o.g_lr.step(n.g_lr.parameters(), g.g_lr, adam);
  if (!g.g_hr.empty()) o.g_hr.step(n.g_hr.parameters(), g.g_hr, adam);
  if (!g.h_lr.empty()) o.h_lr.step(n.h_lr.parameters(), g.h_lr, adam);
  if (!g.h_hr.empty()) o.h_hr.step(n.h_hr.parameters(), g.h_hr, adam);
  ++state.step;
  return g.report;
}

double pretrain_attribute_network(AttributeNetwork& network, const std::vector<ImageGrid>& images,
                                  const std::vector<AttributeVector>& truth,
                                  const AttributePretrainOptions& options, std::uint64_t seed) {
  require(!images.empty(), "attribute pretraining needs at least one image");
  require(images.size() == truth.size(), "attribute pretraining inputs differ in length");
  Adam adam(network.parameters().size());
  const AdamOptions ao{options.learning_rate, 0.9, 0.999, 1e-8};
  Rng rng(seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(network.parameters().size());
  const std::size_t batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        AttributeNetwork::Trace trace;
        const std::vector<double> p = network.forward(images[order[i]].pixels(), &trace);
        sum += attribute_cross_entropy(clamp_probabilities(p), truth[order[i]]);
        std::vector<double> g = attribute_cross_entropy_grad(p, truth[order[i]]);
        for (double& v : g) v *= scale;
        network.backward(trace, g, grad, false);
      }
      adam.step(network.mutable_parameters(), grad, ao);
    }
    epoch_loss = sum / static_cast<double>(order.size());
  }
  return epoch_loss;
}

namespace {

ordered_json report_json(const LossReport& r) {
  ordered_json j;
  j["cpl"] = r.cpl;
  j["a_lr"] = r.a_lr;
  j["a_hr"] = r.a_hr;
  j["gan_lr"] = r.gan_lr;
  j["gan_hr"] = r.gan_hr;
  j["p_lr"] = r.p_lr;
  j["pa_lr"] = r.pa_lr;
  j["pa_hr"] = r.pa_hr;
  j["l2_lr"] = r.l2_lr;
  j["l2_hr"] = r.l2_hr;
  j["total"] = r.total;
  j["d_lr"] = r.d_lr;
  j["d_hr"] = r.d_hr;
  return j;
}

}  // namespace

std::string to_json(const LossReport& report) { return report_json(report).dump(); }

TrainResult train_stagewise(const DatasetSplit& train, const DatasetSplit* validation,
                            const ModelSpec& model, const TrainConfig& config,
                            const TrainOptions& options) {
  config.validate();
  model.validate();
  if (train.records.empty()) throw DataError("training split is empty");
  if (train.identity_count() < 2) {
    throw InvalidInput("training needs at least 2 identities, got " +
                       std::to_string(train.identity_count()));
  }
  auto progress = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  TrainResult result{initial_checkpoint(model, config), {}, 0.0, 0, false, {}, {}};
  Checkpoint& state = result.checkpoint;

  std::vector<ImageGrid> hr_images;
  std::vector<AttributeVector> truth;
  for (const auto& r : train.records) {
    hr_images.push_back(r.hr);
    truth.push_back(r.attributes);
  }
  const double pretrain_loss = pretrain_attribute_network(
      state.frozen.attribute, hr_images, truth, config.attribute_pretrain,
      derive_seed(config.seed, {5}));
  if (validation != nullptr && !validation->records.empty()) {
    std::vector<std::vector<double>> preds;
    std::vector<AttributeVector> val_truth;
    for (const auto& r : validation->records) {
      preds.push_back(state.frozen.attribute.forward(r.hr));
      val_truth.push_back(r.attributes);
    }
    result.attribute_pretrain_accuracy = attribute_accuracy(preds, val_truth).mean;
  }
  progress(fmt::format("attribute network pretrained: loss {:.4f}, held-out accuracy {:.3f}",
                       pretrain_loss, result.attribute_pretrain_accuracy));

  int batch_size = config.batch_size;
  if (static_cast<std::size_t>(batch_size) > train.records.size()) {
    batch_size = static_cast<int>(train.records.size());
    spdlog::warn("batch size {} exceeds the {} training records; using {}", config.batch_size,
                 train.records.size(), batch_size);
  }
  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(train.records.size()) + batch_size - 1) / batch_size;

  for (std::size_t si = 0; si < config.schedule.size(); ++si) {
    const Stage& stage = config.schedule[si];
    const int epochs = std::min(stage.epochs, config.max_epochs_per_stage);
    state.stage_index = static_cast<int>(si);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      state.epoch = epoch;
      for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
        const std::uint64_t step = static_cast<std::uint64_t>(state.step);
        const PairBatch batch =
            sample_balanced_pairs(train, batch_size, derive_seed(config.seed, {2, step}));
        LossReport report;
        try {
          report = train_step(state, batch, stage, derive_seed(config.seed, {3, step}));
        } catch (const NumericError& e) {
          result.diverged = true;
          result.diverged_component = e.component();
          result.diverged_message = e.what();
          result.steps = state.step;
          spdlog::error("training diverged in stage '{}' at step {}: {}", stage.name, step,
                        e.what());
          return result;
        }
        if (options.run_log != nullptr) {
          ordered_json line;
          line["step"] = step;
          line["stage"] = stage.name;
          line["stage_index"] = si;
          line["epoch"] = epoch;
          const ordered_json losses = report_json(report);
          for (const auto& [key, value] : losses.items()) {
            line[key] = value;
          }
          *options.run_log << line.dump() << '\n';
        }
      }
    }
    state.epoch = epochs;
    if (validation != nullptr && !validation->records.empty()) {
      const EvalReport er = evaluate(state, train, *validation, EvalSettings{});
      StageMetrics m{stage.name, er.cmc->rank(1), er.roc->auc, er.attributes->mean};
      result.metrics.push_back(m);
      progress(fmt::format("stage {}: rank-1 {:.3f}, AUC {:.3f}, attribute accuracy {:.3f}",
                           stage.name, m.rank1, m.auc, m.attribute_accuracy));
    } else {
      progress("stage " + stage.name + " done");
    }
  }
  result.steps = state.step;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[8] = {'X', 'R', 'E', 'S', 'C', 'K', 'P', 'T'};

ordered_json size_json(Size2 s) { return ordered_json::array({s.height, s.width}); }

Size2 size_from(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

ordered_json generator_json(const GeneratorSpec& g) {
  ordered_json j;
  j["input"] = size_json(g.input);
  j["channels"] = g.channels;
  j["depth"] = g.depth;
  j["base_width"] = g.base_width;
  j["embedding_dim"] = g.embedding_dim;
  j["skip_connections"] = g.skip_connections;
  j["instance_norm"] = g.instance_norm;
  j["stochasticity"] = g.stochasticity == Stochasticity::kNone ? "none" : "dropout";
  j["dropout_rate"] = g.dropout_rate;
  return j;
}

GeneratorSpec generator_from(const nlohmann::json& j) {
  GeneratorSpec g;
  g.input = size_from(j.at("input"));
  g.channels = j.at("channels");
  g.depth = j.at("depth");
  g.base_width = j.at("base_width");
  g.embedding_dim = j.at("embedding_dim");
  g.skip_connections = j.at("skip_connections");
  g.instance_norm = j.at("instance_norm");
  g.stochasticity = j.at("stochasticity") == "none" ? Stochasticity::kNone : Stochasticity::kDropout;
  g.dropout_rate = j.at("dropout_rate");
  return g;
}

ordered_json model_json(const ModelSpec& m) {
  ordered_json j;
  j["lr"] = generator_json(m.lr);
  j["hr"] = generator_json(m.hr);
  j["discriminator"] = {{"base_width", m.discriminator.base_width},
                        {"patch_divisor", m.discriminator.patch_divisor},
                        {"leaky_slope", m.discriminator.leaky_slope}};
  j["feature"] = {{"input", size_json(m.feature.input)},
                  {"channels", m.feature.channels},
                  {"base_width", m.feature.base_width},
                  {"seed", m.feature.seed}};
  j["attribute"] = {{"input", size_json(m.attribute.input)},
                    {"channels", m.attribute.channels},
                    {"base_width", m.attribute.base_width},
                    {"num_attributes", m.attribute.num_attributes}};
  return j;
}

ModelSpec model_from(const nlohmann::json& j) {
  ModelSpec m;
  m.lr = generator_from(j.at("lr"));
  m.hr = generator_from(j.at("hr"));
  const auto& d = j.at("discriminator");
  m.discriminator = {d.at("base_width"), d.at("patch_divisor"), d.at("leaky_slope")};
  const auto& f = j.at("feature");
  m.feature = {size_from(f.at("input")), f.at("channels"), f.at("base_width"), f.at("seed")};
  const auto& a = j.at("attribute");
  m.attribute = {size_from(a.at("input")), a.at("channels"), a.at("base_width"),
                 a.at("num_attributes")};
  return m;
}

ordered_json losses_json(const LossSet& l) {
  return {{"coupling", l.coupling},
          {"attribute", l.attribute},
          {"adversarial", l.adversarial},
          {"perceptual", l.perceptual},
          {"attribute_perceptual", l.attribute_perceptual},
          {"reconstruction", l.reconstruction}};
}

ordered_json trainable_json(const Trainable& t) {
  return {{"g_lr", t.g_lr}, {"g_hr", t.g_hr}, {"d_lr", t.d_lr},
          {"d_hr", t.d_hr}, {"h_lr", t.h_lr}, {"h_hr", t.h_hr}};
}

ordered_json config_json(const TrainConfig& c) {
  ordered_json j;
  const LossWeights& w = c.weights;
  j["weights"] = {{"lambda1", w.attribute},
                  {"lambda2", w.adversarial},
                  {"lambda3", w.perceptual},
                  {"lambda4", w.attribute_perceptual},
                  {"lambda5", w.reconstruction},
                  {"margin", w.margin}};
  j["batch_size"] = c.batch_size;
  j["adam"] = {{"learning_rate", c.adam.learning_rate},
               {"beta1", c.adam.beta1},
               {"beta2", c.adam.beta2},
               {"epsilon", c.adam.epsilon}};
  j["seed"] = c.seed;
  j["max_epochs_per_stage"] = c.max_epochs_per_stage;
  j["attribute_pretrain"] = {{"epochs", c.attribute_pretrain.epochs},
                             {"batch_size", c.attribute_pretrain.batch_size},
                             {"learning_rate", c.attribute_pretrain.learning_rate}};
  ordered_json stages = ordered_json::array();
  for (const auto& s : c.schedule) {
    stages.push_back({{"name", s.name},
                      {"epochs", s.epochs},
                      {"losses", losses_json(s.losses)},
                      {"trainable", trainable_json(s.trainable)},
                      {"lr_side", s.lr_side},
                      {"hr_side", s.hr_side}});
  }
  j["schedule"] = stages;
  return j;
}

TrainConfig config_from(const nlohmann::json& j) {
  TrainConfig c;
  const auto& w = j.at("weights");
  c.weights = {w.at("lambda1"), w.at("lambda2"), w.at("lambda3"),
               w.at("lambda4"), w.at("lambda5"), w.at("margin")};
  c.batch_size = j.at("batch_size");
  const auto& a = j.at("adam");
  c.adam = {a.at("learning_rate"), a.at("beta1"), a.at("beta2"), a.at("epsilon")};
  c.seed = j.at("seed");
  c.max_epochs_per_stage = j.at("max_epochs_per_stage");
  const auto& p = j.at("attribute_pretrain");
  c.attribute_pretrain = {p.at("epochs"), p.at("batch_size"), p.at("learning_rate")};
  c.schedule.clear();
  for (const auto& s : j.at("schedule")) {
    Stage st;
    st.name = s.at("name");
    st.epochs = s.at("epochs");
    const auto& l = s.at("losses");
    st.losses = {l.at("coupling"),   l.at("attribute"),           l.at("adversarial"),
                 l.at("perceptual"), l.at("attribute_perceptual"), l.at("reconstruction")};
    const auto& t = s.at("trainable");
    st.trainable = {t.at("g_lr"), t.at("g_hr"), t.at("d_lr"),
                    t.at("d_hr"), t.at("h_lr"), t.at("h_hr")};
    st.lr_side = s.at("lr_side");
    st.hr_side = s.at("hr_side");
    c.schedule.push_back(st);
  }
  return c;
}

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <typename T>
  T get() {
    T value;
    need(sizeof(T));
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::size_t n) {
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError("checkpoint is truncated");
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = sizeof(kMagic) + sizeof(std::uint32_t);
};

void copy_block(std::span<double> into, const std::vector<double>& block, const std::string& name) {
  if (block.size() != into.size()) {
    throw IncompatibleError("checkpoint block '" + name + "' has " + std::to_string(block.size()) +
                            " values, expected " + std::to_string(into.size()));
  }
  std::copy(block.begin(), block.end(), into.begin());
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  ordered_json meta;
  meta["format_version"] = Checkpoint::kFormatVersion;
  meta["model"] = model_json(c.model);
  meta["config"] = config_json(c.config);
  meta["stage_index"] = c.stage_index;
  meta["epoch"] = c.epoch;
  meta["step"] = c.step;
  const OptimizerStates& o = c.optimizer;
  meta["optimizer_steps"] = {{"g_lr", o.g_lr.steps()}, {"g_hr", o.g_hr.steps()},
                             {"d_lr", o.d_lr.steps()}, {"d_hr", o.d_hr.steps()},
                             {"h_lr", o.h_lr.steps()}, {"h_hr", o.h_hr.steps()}};
  const std::string json = meta.dump();

  std::vector<std::pair<std::string, std::span<const double>>> blocks = {
      {"g_lr", c.networks.g_lr.parameters()},
      {"g_hr", c.networks.g_hr.parameters()},
      {"d_lr", c.networks.d_lr.parameters()},
      {"d_hr", c.networks.d_hr.parameters()},
      {"h_lr", c.networks.h_lr.parameters()},
      {"h_hr", c.networks.h_hr.parameters()},
      {"feature", c.frozen.feature.parameters()},
      {"attribute", c.frozen.attribute.parameters()},
  };
  const std::pair<const char*, const Adam*> adams[] = {
      {"g_lr", &o.g_lr}, {"g_hr", &o.g_hr}, {"d_lr", &o.d_lr},
      {"d_hr", &o.d_hr}, {"h_lr", &o.h_lr}, {"h_hr", &o.h_hr}};
  for (const auto& [name, adam] : adams) {
    blocks.emplace_back(std::string("adam_m.") + name, adam->first_moment());
    blocks.emplace_back(std::string("adam_v.") + name, adam->second_moment());
  }

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::kFormatVersion);
  put<std::uint64_t>(out, json.size());
  out += json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, values] : blocks) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, values.size());
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  constexpr std::size_t kHeader = sizeof(kMagic) + sizeof(std::uint32_t);
  if (data.size() < kHeader || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  std::memcpy(&version, data.data() + sizeof(kMagic), sizeof(version));
  if (version != Checkpoint::kFormatVersion) {
    throw IncompatibleError("checkpoint format version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  if (data.size() < kHeader + sizeof(std::uint64_t)) throw DataError("checkpoint is truncated");
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + body, sizeof(stored));
  if (stored != fnv1a(data.data(), body)) {
    throw DataError("checkpoint checksum mismatch (truncated or corrupt): " + path.string());
  }

  Reader in(data, body);
  const auto json_size = in.get<std::uint64_t>();
  nlohmann::json meta;
  ModelSpec model;
  TrainConfig config;
  try {
    meta = nlohmann::json::parse(in.bytes(json_size));
    model = model_from(meta.at("model"));
    config = config_from(meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  std::vector<std::pair<std::string, std::vector<double>>> blocks;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_size = in.get<std::uint32_t>();
    std::string name = in.bytes(name_size);
    const auto n = in.get<std::uint64_t>();
    blocks.emplace_back(std::move(name), in.doubles(n));
  }
  auto block = [&](const std::string& name) -> const std::vector<double>& {
    for (const auto& [k, v] : blocks) {
      if (k == name) return v;
    }
    throw IncompatibleError("checkpoint lacks block '" + name + "'");
  };

  Checkpoint c{model,
               config,
               init_networks(model.lr, model.hr, 0, model.discriminator),
               FrozenNetworks{FeatureNetwork(model.feature, block("feature")),
                              AttributeNetwork(model.attribute)},
               {}};
  copy_block(c.networks.g_lr.parameters(), block("g_lr"), "g_lr");
  copy_block(c.networks.g_hr.parameters(), block("g_hr"), "g_hr");
  copy_block(c.networks.d_lr.parameters(), block("d_lr"), "d_lr");
  copy_block(c.networks.d_hr.parameters(), block("d_hr"), "d_hr");
  copy_block(c.networks.h_lr.parameters(), block("h_lr"), "h_lr");
  copy_block(c.networks.h_hr.parameters(), block("h_hr"), "h_hr");
  copy_block(c.frozen.attribute.mutable_parameters(), block("attribute"), "attribute");
  c.optimizer = OptimizerStates::for_networks(c.networks);
  const std::pair<const char*, Adam*> adams[] = {
      {"g_lr", &c.optimizer.g_lr}, {"g_hr", &c.optimizer.g_hr}, {"d_lr", &c.optimizer.d_lr},
      {"d_hr", &c.optimizer.d_hr}, {"h_lr", &c.optimizer.h_lr}, {"h_hr", &c.optimizer.h_hr}};
  try {
    for (const auto& [name, adam] : adams) {
      adam->restore(meta.at("optimizer_steps").at(name).get<std::int64_t>(),
                    block(std::string("adam_m.") + name), block(std::string("adam_v.") + name));
    }
    c.stage_index = meta.at("stage_index");
    c.epoch = meta.at("epoch");
    c.step = meta.at("step");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return c;
}

}  // namespace xres
