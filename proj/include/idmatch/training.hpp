#ifndef IDMATCH_TRAINING_HPP_
#define IDMATCH_TRAINING_HPP_

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "idmatch/common.hpp"
#include "idmatch/dataset.hpp"
#include "idmatch/imprinting.hpp"
#include "idmatch/losses.hpp"
#include "idmatch/network.hpp"

namespace idmatch {

// ---------------------------------------------------------------------------
// Mini-batch sampling
// ---------------------------------------------------------------------------

enum class SamplerKind {
  RandomImages,      // uniform over samples
  RandomPairs,       // B/2 classes, two samples each (any domain)
  RandomDomainPairs  // B/2 classes, one doc + one live each
};

struct MiniBatch {
  std::vector<std::size_t> indices;  // into dataset.samples; pair samplers
                                     // emit the two samples of a class
                                     // consecutively
};

inline MiniBatch sample_batch(const ShallowDataset& dataset, SamplerKind kind,
                              int batch_size, Rng& rng) {
  if (batch_size < 1) throw ArgumentError("batch size must be >= 1");
  MiniBatch batch;
  batch.indices.reserve(static_cast<std::size_t>(batch_size));

  if (kind == SamplerKind::RandomImages) {
    if (static_cast<std::size_t>(batch_size) > dataset.samples.size()) {
      throw ArgumentError("batch size exceeds available samples");
    }
    std::vector<std::size_t> all(dataset.samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::sample(all.begin(), all.end(), std::back_inserter(batch.indices),
                static_cast<std::size_t>(batch_size), rng);
    return batch;
  }

  if (batch_size % 2 != 0) {
    throw ArgumentError("pair samplers need an even batch size");
  }
  const int num_pairs = batch_size / 2;
  if (num_pairs > dataset.num_identities) {
    throw ArgumentError("batch needs " + std::to_string(num_pairs) +
                        " classes but dataset has " +
                        std::to_string(dataset.num_identities));
  }
  std::vector<int> ids(static_cast<std::size_t>(dataset.num_identities));
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(num_pairs));
  std::sample(ids.begin(), ids.end(), std::back_inserter(chosen),
              static_cast<std::size_t>(num_pairs), rng);

  for (int id : chosen) {
    const IdentityIndex& idx = dataset.index_of(id);
    if (kind == SamplerKind::RandomDomainPairs) {
      if (idx.doc.empty() || idx.live.empty()) {
        throw ArgumentError("identity " + std::to_string(id) +
                            " lacks a domain required for domain pairs");
      }
      std::uniform_int_distribution<std::size_t> doc_pick(0, idx.doc.size() - 1);
      std::uniform_int_distribution<std::size_t> live_pick(0, idx.live.size() - 1);
      batch.indices.push_back(idx.doc[doc_pick(rng)]);
      batch.indices.push_back(idx.live[live_pick(rng)]);
    } else {
      std::vector<std::size_t> pool = idx.doc;
      pool.insert(pool.end(), idx.live.begin(), idx.live.end());
      if (pool.size() < 2) {
        throw ArgumentError("identity " + std::to_string(id) +
                            " has fewer than two samples");
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      batch.indices.push_back(pool[0]);
      batch.indices.push_back(pool[1]);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// SGD with momentum and (coupled) weight decay:
//   v <- mu v + (g + lambda theta);  theta <- theta - lr v.
// ---------------------------------------------------------------------------

struct LrSchedule {
  double base = 0.01;
  double drop_factor = 0.1;
  double drop_at_frac = 0.8;  // fraction of total steps

  double at(int step, int total_steps) const {
    const int drop_step = static_cast<int>(drop_at_frac * total_steps);
    return step >= drop_step && total_steps > 0 ? base * drop_factor : base;
  }
};

struct OptimizerConfig {
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

template <typename Mat>
inline void sgd_step(Mat& param, const Mat& grad, Mat& velocity, double lr,
                     double momentum, double weight_decay) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ArgumentError("sgd_step: gradient shape mismatch");
  }
  if (!grad.allFinite()) throw NumericError("sgd_step: non-finite gradient");
  if (velocity.rows() != param.rows() || velocity.cols() != param.cols()) {
    velocity = Mat::Zero(param.rows(), param.cols());
  }
  velocity = momentum * velocity + (grad + weight_decay * param);
  param -= lr * velocity;
}

inline void sgd_step_scalar(double& param, double grad, double& velocity,
                            double lr, double momentum, double weight_decay) {
  if (!std::isfinite(grad)) throw NumericError("sgd_step: non-finite gradient");
  velocity = momentum * velocity + (grad + weight_decay * param);
  param -= lr * velocity;
}

// ---------------------------------------------------------------------------
// Training configuration and loop
// ---------------------------------------------------------------------------

enum class LossKind { Softmax, AmSoftmax, Contrastive, Triplet, DiamSoftmax };

inline const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Softmax: return "softmax";
    case LossKind::AmSoftmax: return "am-softmax";
    case LossKind::Contrastive: return "contrastive";
    case LossKind::Triplet: return "triplet";
    case LossKind::DiamSoftmax: return "diam";
  }
  return "?";
}

struct TrainConfig {
  int batch_size = 248;
  int steps = 4000;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::DiamSoftmax;
  ImprintConfig imprint;           // used by DiamSoftmax
  SamplerKind sampler = SamplerKind::RandomDomainPairs;
  NetworkConfig net;
  std::string sharing = "high-fc";
  double margin = 5.0;             // additive margin m
  double initial_scale = 16.0;     // s at step 0
  double contrastive_margin = 1.0;
  double triplet_margin = 0.5;
  OptimizerConfig opt;

  bool uses_margin_head() const {
    return loss == LossKind::AmSoftmax || loss == LossKind::DiamSoftmax;
  }
  bool uses_pair_structure() const {
    return loss == LossKind::Contrastive || loss == LossKind::Triplet;
  }
};

struct TraceRow {
  int step = 0;
  double loss = 0.0;
  double scale = 0.0;  // current s; 0 for headless losses
  double lr = 0.0;
};

struct TrainResult {
  SiblingPair pair;
  std::optional<MarginHead> margin_head;
  std::optional<PlainHead> plain_head;
  std::vector<TraceRow> trace;
};

inline std::string serialize_trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,loss,s,lr\n";
  for (const TraceRow& row : trace) {
    out += std::to_string(row.step);
    out += ',';
    out += format_double(row.loss);
    out += ',';
    out += format_double(row.scale);
    out += ',';
    out += format_double(row.lr);
    out += '\n';
  }
  return out;
}

// Steps per epoch: pair samplers walk classes, image sampling walks images.
inline int steps_per_epoch(const ShallowDataset& dataset, SamplerKind sampler,
                           int batch_size) {
  if (sampler == SamplerKind::RandomImages) {
    return static_cast<int>((dataset.samples.size() + batch_size - 1) /
                            static_cast<std::size_t>(batch_size));
  }
  const int pairs = batch_size / 2;
  return (dataset.num_identities + pairs - 1) / pairs;
}

namespace detail {

struct PairGrads {
  std::vector<LayerGrad> doc;
  std::vector<LayerGrad> live;

  explicit PairGrads(const SiblingPair& pair) {
    auto zeros = [](const EmbeddingNetwork& net) {
      std::vector<LayerGrad> g(net.layers().size());
      for (std::size_t l = 0; l < net.layers().size(); ++l) {
        g[l].weight = Eigen::MatrixXd::Zero(net.layers()[l].weight.rows(),
                                            net.layers()[l].weight.cols());
        g[l].bias = Eigen::VectorXd::Zero(net.layers()[l].bias.size());
      }
      return g;
    };
    doc = zeros(pair.doc_net);
    live = zeros(pair.live_net);
  }

  void accumulate(Domain domain, const GradientSet& gs) {
    auto& target = domain == Domain::DocSide ? doc : live;
    for (std::size_t l = 0; l < gs.layers.size(); ++l) {
      target[l].weight += gs.layers[l].weight;
      target[l].bias += gs.layers[l].bias;
    }
  }
};

struct PairVelocities {
  std::vector<LayerGrad> doc, live, shared;

  explicit PairVelocities(const SiblingPair& pair) {
    auto zeros = [](const EmbeddingNetwork& net) {
      std::vector<LayerGrad> v(net.layers().size());
      for (std::size_t l = 0; l < net.layers().size(); ++l) {
        v[l].weight = Eigen::MatrixXd::Zero(net.layers()[l].weight.rows(),
                                            net.layers()[l].weight.cols());
        v[l].bias = Eigen::VectorXd::Zero(net.layers()[l].bias.size());
      }
      return v;
    };
    doc = zeros(pair.doc_net);
    live = zeros(pair.live_net);
    shared = zeros(pair.doc_net);
  }
};

// One optimizer step over both siblings.  Shared layers take the sum of both
// siblings' gradients through a single velocity buffer, then the updated
// parameters are copied verbatim into the other sibling, which keeps tied
// layers bitwise identical.
inline void apply_network_step(SiblingPair& pair, const PairGrads& grads,
                               PairVelocities& vel, double lr, double momentum,
                               double weight_decay) {
  for (std::size_t l = 0; l < pair.doc_net.layers().size(); ++l) {
    Layer& doc_layer = pair.doc_net.layers()[l];
    Layer& live_layer = pair.live_net.layers()[l];
    if (pair.mask.is_shared(l)) {
      const Eigen::MatrixXd gw = grads.doc[l].weight + grads.live[l].weight;
      const Eigen::VectorXd gb = grads.doc[l].bias + grads.live[l].bias;
      sgd_step(doc_layer.weight, gw, vel.shared[l].weight, lr, momentum,
               weight_decay);
      sgd_step(doc_layer.bias, gb, vel.shared[l].bias, lr, momentum,
               weight_decay);
      live_layer = doc_layer;
    } else {
      sgd_step(doc_layer.weight, grads.doc[l].weight, vel.doc[l].weight, lr,
               momentum, weight_decay);
      sgd_step(doc_layer.bias, grads.doc[l].bias, vel.doc[l].bias, lr,
               momentum, weight_decay);
      sgd_step(live_layer.weight, grads.live[l].weight, vel.live[l].weight, lr,
               momentum, weight_decay);
      sgd_step(live_layer.bias, grads.live[l].bias, vel.live[l].bias, lr,
               momentum, weight_decay);
    }
  }
}

}  // namespace detail

inline void validate_train_config(const TrainConfig& config,
                                  const ShallowDataset& dataset) {
  if (config.steps < 0) throw ArgumentError("step count must be >= 0");
  if (config.batch_size < 1) throw ArgumentError("batch size must be >= 1");
  if (config.sampler != SamplerKind::RandomImages && config.batch_size % 2) {
    throw ArgumentError("pair samplers need an even batch size");
  }
  if (config.uses_pair_structure() &&
      config.sampler == SamplerKind::RandomImages) {
    throw ArgumentError(std::string(loss_kind_name(config.loss)) +
                        " loss needs a pair sampler");
  }
  if (!config.uses_pair_structure() && dataset.num_identities < 2) {
    throw ArgumentError("classification losses need >= 2 identities");
  }
  if (config.margin < 0.0) throw ArgumentError("margin must be >= 0");
  if (config.initial_scale <= 0.0) throw ArgumentError("scale must be > 0");
  if (config.opt.lr.base <= 0.0) throw ArgumentError("learning rate must be > 0");
  config.imprint.validate();
}

using StepCallback = std::function<void(const TraceRow&)>;

// End-to-end loop.  Per step: sample a batch, forward every sample through
// its domain's network, compute the loss, backpropagate, update the head
// (imprinting replaces the head's gradient step when DWI is on), then apply
// one SGD step to the networks.  `on_step` streams trace rows as they are
// produced, so callers keep the prefix if a later step diverges.
inline TrainResult train(const ShallowDataset& dataset,
                         const TrainConfig& config,
                         const StepCallback& on_step = {}) {
  dataset.validate();
  validate_train_config(config, dataset);

  const SharingMask mask =
      SharingMask::parse(config.sharing, config.net.layer_count());
  TrainResult result{
      make_sibling_pair(config.net, dataset.d_in, mask,
                        derive_seed(config.seed, 1)),
      std::nullopt, std::nullopt, {}};
  SiblingPair& pair = result.pair;

  const bool dwi = config.loss == LossKind::DiamSoftmax;
  if (config.uses_margin_head()) {
    result.margin_head = MarginHead::random_init(
        dataset.num_identities, config.net.embed_dim, derive_seed(config.seed, 2),
        config.initial_scale, config.margin);
  } else if (config.loss == LossKind::Softmax) {
    result.plain_head = PlainHead::random_init(
        dataset.num_identities, config.net.embed_dim, derive_seed(config.seed, 2));
  }

  const int epoch_len = steps_per_epoch(dataset, config.sampler, config.batch_size);
  const int period_len = std::max(1, config.imprint.period_epochs * epoch_len);
  if (dwi && config.imprint.schedule != ImprintSchedule::Dynamic) {
    static_imprint_all(*result.margin_head, pair, dataset,
                       config.imprint.target_mode);
  }

  Rng sampler_rng(derive_seed(config.seed, 3));
  detail::PairVelocities velocities(pair);
  Eigen::MatrixXd head_weight_velocity;
  Eigen::VectorXd head_bias_velocity;
  double scale_velocity = 0.0;

  result.trace.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const double lr = config.opt.lr.at(step, config.steps);
    if (dwi && config.imprint.schedule == ImprintSchedule::StaticPeriodical &&
        step > 0 && step % period_len == 0) {
      static_imprint_all(*result.margin_head, pair, dataset,
                         config.imprint.target_mode);
    }

    const MiniBatch batch =
        sample_batch(dataset, config.sampler, config.batch_size, sampler_rng);
    const std::size_t n = batch.indices.size();
    std::vector<Eigen::VectorXd> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
      raw[i] = pair.route(dataset.samples[batch.indices[i]]);
    }

    double batch_loss = 0.0;
    std::vector<Eigen::VectorXd> upstream(n);  // dL w.r.t. raw embeddings
    Eigen::MatrixXd head_weight_grad;
    Eigen::VectorXd head_bias_grad;
    double scale_grad = 0.0;

    if (config.uses_margin_head()) {
      const MarginHead& head = *result.margin_head;
      head_weight_grad = Eigen::MatrixXd::Zero(head.num_classes(), head.dim());
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& sample = dataset.samples[batch.indices[i]];
        const LossOutput out = am_softmax(head, raw[i], sample.identity);
        batch_loss += inv_n * out.loss;
        upstream[i] = inv_n * out.grad_embedding;
        head_weight_grad += inv_n * out.grad_weights;
        scale_grad += inv_n * out.grad_scale;
      }
    } else if (config.loss == LossKind::Softmax) {
      const PlainHead& head = *result.plain_head;
      head_weight_grad = Eigen::MatrixXd::Zero(head.num_classes(), head.dim());
      head_bias_grad = Eigen::VectorXd::Zero(head.num_classes());
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Sample& sample = dataset.samples[batch.indices[i]];
        const LossOutput out = plain_softmax(head, raw[i], sample.identity);
        batch_loss += inv_n * out.loss;
        upstream[i] = inv_n * out.grad_embedding;
        head_weight_grad += inv_n * out.grad_weights;
        head_bias_grad += inv_n * out.grad_bias;
      }
    } else {
      // Metric losses act on unit embeddings; batches arrive as consecutive
      // same-class pairs, and negatives come from the neighbouring pair.
      const std::size_t num_pairs = n / 2;
      std::vector<Eigen::VectorXd> unit(n);
      std::vector<Eigen::VectorXd> unit_grad(n, Eigen::VectorXd());
      for (std::size_t i = 0; i < n; ++i) {
        unit[i] = l2_normalize(raw[i], "embedding");
        unit_grad[i] = Eigen::VectorXd::Zero(raw[i].size());
      }
      if (config.loss == LossKind::Contrastive) {
        std::vector<EmbeddingPair> pairs;
        std::vector<std::pair<std::size_t, std::size_t>> slots;
        pairs.reserve(2 * num_pairs);
        slots.reserve(2 * num_pairs);
        for (std::size_t p = 0; p < num_pairs; ++p) {
          pairs.push_back({unit[2 * p], unit[2 * p + 1], true});
          slots.emplace_back(2 * p, 2 * p + 1);
        }
        for (std::size_t p = 0; p < num_pairs; ++p) {
          const std::size_t other = 2 * ((p + 1) % num_pairs) + 1;
          pairs.push_back({unit[2 * p], unit[other], false});
          slots.emplace_back(2 * p, other);
        }
        const PairLossOutput out =
            contrastive_loss(pairs, config.contrastive_margin);
        batch_loss = out.loss;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          unit_grad[slots[k].first] += out.grads[k].first;
          unit_grad[slots[k].second] += out.grads[k].second;
        }
      } else {
        const double inv_p = 1.0 / static_cast<double>(num_pairs);
        for (std::size_t p = 0; p < num_pairs; ++p) {
          const std::size_t a = 2 * p, pos = 2 * p + 1;
          const std::size_t neg = 2 * ((p + 1) % num_pairs) + 1;
          const TripletLossOutput out = triplet_loss(
              unit[a], unit[pos], unit[neg], config.triplet_margin);
          batch_loss += inv_p * out.loss;
          unit_grad[a] += inv_p * out.grad_anchor;
          unit_grad[pos] += inv_p * out.grad_positive;
          unit_grad[neg] += inv_p * out.grad_negative;
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        upstream[i] = l2_normalize_backprop(raw[i], unit_grad[i]);
      }
    }

    if (!std::isfinite(batch_loss)) {
      throw TrainingError("loss diverged to a non-finite value", step);
    }

    detail::PairGrads grads(pair);
    for (std::size_t i = 0; i < n; ++i) {
      const Sample& sample = dataset.samples[batch.indices[i]];
      const EmbeddingNetwork& net = pair.net_for(sample.domain);
      grads.accumulate(sample.domain, net.backward(sample.input, upstream[i]));
    }

    // Head update: DWI imprints from this step's features, otherwise the
    // head takes its own SGD step (decay-free for the normalized head).
    if (dwi) {
      if (config.imprint.schedule == ImprintSchedule::Dynamic) {
        std::vector<BatchFeature> features;
        features.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
          const Sample& sample = dataset.samples[batch.indices[i]];
          features.push_back({l2_normalize(raw[i], "embedding"),
                              sample.identity, sample.domain});
        }
        std::vector<int> skipped;  // absorbs per-class warnings in the loop
        const ClassTargets targets =
            batch_targets(features, config.imprint.target_mode, &skipped);
        dwi_update(*result.margin_head, targets, config.imprint.alpha, &skipped);
      }
      sgd_step_scalar(result.margin_head->log_scale,
                      scale_grad * result.margin_head->scale(), scale_velocity,
                      lr, config.opt.momentum, 0.0);
    } else if (config.loss == LossKind::AmSoftmax) {
      sgd_step(result.margin_head->weights_raw, head_weight_grad,
               head_weight_velocity, lr, config.opt.momentum, 0.0);
      sgd_step_scalar(result.margin_head->log_scale,
                      scale_grad * result.margin_head->scale(), scale_velocity,
                      lr, config.opt.momentum, 0.0);
    } else if (config.loss == LossKind::Softmax) {
      sgd_step(result.plain_head->weights, head_weight_grad,
               head_weight_velocity, lr, config.opt.momentum,
               config.opt.weight_decay);
      sgd_step(result.plain_head->bias, head_bias_grad, head_bias_velocity,
               lr, config.opt.momentum, config.opt.weight_decay);
    }

    detail::apply_network_step(pair, grads, velocities, lr,
                               config.opt.momentum, config.opt.weight_decay);

    const double scale_now =
        result.margin_head ? result.margin_head->scale() : 0.0;
    result.trace.push_back({step, batch_loss, scale_now, lr});
    if (on_step) on_step(result.trace.back());
  }
  return result;
}

}  // namespace idmatch

#endif  // IDMATCH_TRAINING_HPP_
