#ifndef IDMATCH_LOSSES_HPP_
#define IDMATCH_LOSSES_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "idmatch/common.hpp"

namespace idmatch {

// Margin classifier head over the unit sphere.  The stored rows are the raw
// weights; rows are L2-normalized whenever they are read, so the classifier
// always scores by cosine.  The scale s is kept in log space and therefore
// structurally positive.
struct MarginHead {
  Eigen::MatrixXd weights_raw;  // num_classes x d
  double log_scale = 0.0;
  double margin = 0.0;

  int num_classes() const { return static_cast<int>(weights_raw.rows()); }
  int dim() const { return static_cast<int>(weights_raw.cols()); }
  double scale() const { return std::exp(log_scale); }

  Eigen::VectorXd normalized_row(int j) const {
    const double n = weights_raw.row(j).norm();
    if (!(n > 0.0)) {
      throw NumericError("head row " + std::to_string(j) + " has zero norm");
    }
    return weights_raw.row(j).transpose() / n;
  }

  Eigen::MatrixXd normalized_weights() const {
    Eigen::MatrixXd out(weights_raw.rows(), weights_raw.cols());
    for (int j = 0; j < num_classes(); ++j) out.row(j) = normalized_row(j).transpose();
    return out;
  }

  // Unit-norm Gaussian rows; the weight optimizer (SGD or imprinting) takes
  // it from there.
  static MarginHead random_init(int num_classes, int dim, std::uint64_t seed,
                                double initial_scale = 16.0, double margin = 5.0) {
    if (num_classes < 2) throw ArgumentError("head needs >= 2 classes");
    if (dim < 1) throw ArgumentError("head dimension must be >= 1");
    if (!(initial_scale > 0.0)) throw ArgumentError("scale must be positive");
    if (!(margin >= 0.0)) throw ArgumentError("margin must be >= 0");
    MarginHead head;
    head.weights_raw.resize(num_classes, dim);
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int j = 0; j < num_classes; ++j) {
      Eigen::VectorXd row(dim);
      for (int i = 0; i < dim; ++i) row[i] = gauss(rng);
      head.weights_raw.row(j) = row.normalized().transpose();
    }
    head.log_scale = std::log(initial_scale);
    head.margin = margin;
    return head;
  }
};

struct LossOutput {
  double loss = 0.0;
  Eigen::VectorXd prob;            // posterior over classes
  Eigen::VectorXd grad_embedding;  // w.r.t. the embedding argument as passed
  Eigen::MatrixXd grad_weights;    // w.r.t. the stored (raw) weights
  Eigen::VectorXd grad_bias;       // plain softmax only
  double grad_scale = 0.0;         // dL/ds (margin head only)
};

// Cross-entropy over scaled cosine logits with an additive margin on the
// target logit:
//   a_j = s * w_j . f - m * [j == y],   f = embedding / ||embedding||.
// The margin is not multiplied by s, which is what lets s be learned.
// grad_embedding includes the chain through the internal normalization, so
// it is the gradient w.r.t. the raw embedding argument.
inline LossOutput am_softmax(const MarginHead& head,
                             const Eigen::VectorXd& embedding, int label) {
  const int num_classes = head.num_classes();
  if (label < 0 || label >= num_classes) {
    throw ArgumentError("label " + std::to_string(label) + " out of range");
  }
  if (embedding.size() != head.dim()) {
    throw ArgumentError("embedding dimension " + std::to_string(embedding.size()) +
                        " does not match head dimension " +
                        std::to_string(head.dim()));
  }
  const double raw_norm = embedding.norm();
  if (!(raw_norm > 0.0) || !std::isfinite(raw_norm)) {
    throw NumericError("am_softmax requires a nonzero finite embedding");
  }
  const Eigen::VectorXd f = embedding / raw_norm;
  const double s = head.scale();

  Eigen::VectorXd row_norms(num_classes);
  Eigen::MatrixXd w_normalized(num_classes, head.dim());
  for (int j = 0; j < num_classes; ++j) {
    const double n = head.weights_raw.row(j).norm();
    if (!(n > 0.0)) {
      throw NumericError("head row " + std::to_string(j) + " has zero norm");
    }
    row_norms[j] = n;
    w_normalized.row(j) = head.weights_raw.row(j) / n;
  }

  const Eigen::VectorXd cosine = w_normalized * f;
  Eigen::VectorXd logits = s * cosine;
  logits[label] -= head.margin;

  // log-sum-exp with max subtraction
  const double logit_max = logits.maxCoeff();
  const Eigen::VectorXd shifted = (logits.array() - logit_max).exp();
  const double z = shifted.sum();

  LossOutput out;
  out.prob = shifted / z;
  out.loss = -(logits[label] - logit_max - std::log(z));

  Eigen::VectorXd dlogit = out.prob;
  dlogit[label] -= 1.0;

  // d loss / d f, then through f = u/||u||.
  const Eigen::VectorXd grad_f = s * (w_normalized.transpose() * dlogit);
  out.grad_embedding = (grad_f - f * f.dot(grad_f)) / raw_norm;

  // d loss / d raw weight rows, through w_j = w*_j/||w*_j||.
  out.grad_weights.resize(num_classes, head.dim());
  for (int j = 0; j < num_classes; ++j) {
    const Eigen::VectorXd grad_wn = s * dlogit[j] * f;
    const Eigen::VectorXd wj = w_normalized.row(j).transpose();
    out.grad_weights.row(j) =
        ((grad_wn - wj * wj.dot(grad_wn)) / row_norms[j]).transpose();
  }

  out.grad_scale = dlogit.dot(cosine);
  return out;
}

// The per-row update signals on the *normalized* weights, in the attraction/
// repulsion convention: the target row is the attraction direction
// s(1-p_y) f (a descent step adds it to w_y), other rows get the repulsion
// direction -s p_j f.  These are the negatives of the analytic derivatives.
inline Eigen::MatrixXd weight_gradients(const MarginHead& head,
                                        const Eigen::VectorXd& embedding,
                                        int label) {
  const LossOutput out = am_softmax(head, embedding, label);
  const Eigen::VectorXd f = embedding.normalized();
  const double s = head.scale();
  Eigen::MatrixXd signals(head.num_classes(), head.dim());
  for (int j = 0; j < head.num_classes(); ++j) {
    const double coeff = (j == label) ? s * (1.0 - out.prob[j]) : -s * out.prob[j];
    signals.row(j) = coeff * f.transpose();
  }
  return signals;
}

// Unnormalized affine classifier for the plain Softmax baseline.
struct PlainHead {
  Eigen::MatrixXd weights;  // num_classes x d
  Eigen::VectorXd bias;

  int num_classes() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }

  static PlainHead random_init(int num_classes, int dim, std::uint64_t seed) {
    if (num_classes < 2) throw ArgumentError("head needs >= 2 classes");
    PlainHead head;
    head.weights.resize(num_classes, dim);
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int j = 0; j < num_classes; ++j) {
      for (int i = 0; i < dim; ++i) head.weights(j, i) = scale * gauss(rng);
    }
    head.bias = Eigen::VectorXd::Zero(num_classes);
    return head;
  }
};

// Standard cross-entropy on affine logits A e + b.
inline LossOutput plain_softmax(const PlainHead& head,
                                const Eigen::VectorXd& embedding, int label) {
  if (label < 0 || label >= head.num_classes()) {
    throw ArgumentError("label " + std::to_string(label) + " out of range");
  }
  if (embedding.size() != head.dim()) {
    throw ArgumentError("embedding dimension mismatch for plain softmax");
  }
  Eigen::VectorXd logits = head.weights * embedding + head.bias;
  const double logit_max = logits.maxCoeff();
  const Eigen::VectorXd shifted = (logits.array() - logit_max).exp();
  const double z = shifted.sum();

  LossOutput out;
  out.prob = shifted / z;
  out.loss = -(logits[label] - logit_max - std::log(z));
  Eigen::VectorXd dlogit = out.prob;
  dlogit[label] -= 1.0;
  out.grad_embedding = head.weights.transpose() * dlogit;
  out.grad_weights = dlogit * embedding.transpose();
  out.grad_bias = dlogit;
  return out;
}

// ---------------------------------------------------------------------------
// Metric-learning baselines.
// ---------------------------------------------------------------------------

struct EmbeddingPair {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
  bool genuine = true;
};

struct PairLossOutput {
  double loss = 0.0;  // mean over pairs
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> grads;  // per pair
};

// Genuine pairs penalize squared distance, impostor pairs a squared hinge
// max(0, margin - d)^2 on Euclidean distance.  Loss and gradients are
// averaged over the pair list.
inline PairLossOutput contrastive_loss(std::span<const EmbeddingPair> pairs,
                                       double margin) {
  if (pairs.empty()) throw ArgumentError("contrastive_loss needs >= 1 pair");
  if (!(margin >= 0.0)) throw ArgumentError("margin must be >= 0");
  PairLossOutput out;
  out.grads.reserve(pairs.size());
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (const EmbeddingPair& p : pairs) {
    if (p.a.size() != p.b.size()) {
      throw ArgumentError("pair embeddings have mismatched dimensions");
    }
    const Eigen::VectorXd diff = p.a - p.b;
    const double dist = diff.norm();
    Eigen::VectorXd ga = Eigen::VectorXd::Zero(p.a.size());
    Eigen::VectorXd gb = Eigen::VectorXd::Zero(p.b.size());
    if (p.genuine) {
      out.loss += inv_n * dist * dist;
      ga = inv_n * 2.0 * diff;
      gb = -ga;
    } else if (dist < margin) {
      const double gap = margin - dist;
      out.loss += inv_n * gap * gap;
      if (dist > 0.0) {
        // coincident impostors sit on the hinge kink; subgradient 0 there
        ga = inv_n * (-2.0 * gap / dist) * diff;
        gb = -ga;
      }
    }
    out.grads.emplace_back(std::move(ga), std::move(gb));
  }
  return out;
}

struct TripletLossOutput {
  double loss = 0.0;
  Eigen::VectorXd grad_anchor;
  Eigen::VectorXd grad_positive;
  Eigen::VectorXd grad_negative;
};

// Hinge on squared distances: max(0, ||a-p||^2 - ||a-n||^2 + margin).
inline TripletLossOutput triplet_loss(const Eigen::VectorXd& anchor,
                                      const Eigen::VectorXd& positive,
                                      const Eigen::VectorXd& negative,
                                      double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw ArgumentError("triplet embeddings have mismatched dimensions");
  }
  if (!(margin >= 0.0)) throw ArgumentError("margin must be >= 0");
  TripletLossOutput out;
  out.grad_anchor = Eigen::VectorXd::Zero(anchor.size());
  out.grad_positive = Eigen::VectorXd::Zero(anchor.size());
  out.grad_negative = Eigen::VectorXd::Zero(anchor.size());
  const Eigen::VectorXd ap = anchor - positive;
  const Eigen::VectorXd an = anchor - negative;
  const double violation = ap.squaredNorm() - an.squaredNorm() + margin;
  if (violation > 0.0) {
    out.loss = violation;
    out.grad_anchor = 2.0 * (negative - positive);
    out.grad_positive = -2.0 * ap;
    out.grad_negative = 2.0 * an;
  }
  return out;
}

}  // namespace idmatch

#endif  // IDMATCH_LOSSES_HPP_
