#ifndef IDMATCH_IMPRINTING_HPP_
#define IDMATCH_IMPRINTING_HPP_

#include <iostream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "idmatch/dataset.hpp"
#include "idmatch/losses.hpp"
#include "idmatch/network.hpp"

namespace idmatch {

// What a class's target vector is built from.
enum class TargetMode { DocFeature, LiveFeature, AverageFeature };

enum class ImprintSchedule { Dynamic, StaticFixed, StaticPeriodical };

struct ImprintConfig {
  double alpha = 1.0;  // update rate in [0, 1]
  TargetMode target_mode = TargetMode::AverageFeature;
  ImprintSchedule schedule = ImprintSchedule::Dynamic;
  int period_epochs = 2;  // StaticPeriodical only

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw ArgumentError("imprint update rate must be in [0, 1]");
    }
    if (schedule == ImprintSchedule::StaticPeriodical && period_epochs < 1) {
      throw ArgumentError("imprint period must be >= 1 epoch");
    }
  }
};

struct BatchFeature {
  Eigen::VectorXd embedding;  // normalized
  int identity = 0;
  Domain domain = Domain::DocSide;
};

// Ordered so that update application is deterministic.
using ClassTargets = std::map<int, Eigen::VectorXd>;

// Per-class target vectors from one mini-batch of normalized embeddings.
// Embeddings of a class are pooled per domain; AverageFeature averages over
// everything the batch holds for the class.  Classes missing a domain the
// mode requires are omitted (and reported via `skipped`).
inline ClassTargets batch_targets(std::span<const BatchFeature> batch,
                                  TargetMode mode,
                                  std::vector<int>* skipped = nullptr) {
  if (batch.empty()) throw ArgumentError("batch_targets needs a nonempty batch");
  struct Bucket {
    Eigen::VectorXd doc_sum, live_sum;
    int doc_count = 0, live_count = 0;
  };
  std::map<int, Bucket> buckets;
  for (const BatchFeature& bf : batch) {
    Bucket& b = buckets[bf.identity];
    if (bf.domain == Domain::DocSide) {
      if (b.doc_count == 0) b.doc_sum = Eigen::VectorXd::Zero(bf.embedding.size());
      b.doc_sum += bf.embedding;
      ++b.doc_count;
    } else {
      if (b.live_count == 0) b.live_sum = Eigen::VectorXd::Zero(bf.embedding.size());
      b.live_sum += bf.embedding;
      ++b.live_count;
    }
  }

  ClassTargets targets;
  for (const auto& [identity, b] : buckets) {
    const int total = b.doc_count + b.live_count;
    switch (mode) {
      case TargetMode::DocFeature:
        if (b.doc_count == 0) {
          if (skipped) skipped->push_back(identity);
          else
            std::cerr << "warning: class " << identity
                      << " has no doc-side sample in batch, skipping target\n";
          continue;
        }
        targets[identity] = b.doc_sum / b.doc_count;
        break;
      case TargetMode::LiveFeature:
        if (b.live_count == 0) {
          if (skipped) skipped->push_back(identity);
          else
            std::cerr << "warning: class " << identity
                      << " has no live-side sample in batch, skipping target\n";
          continue;
        }
        targets[identity] = b.live_sum / b.live_count;
        break;
      case TargetMode::AverageFeature: {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(batch[0].embedding.size());
        if (b.doc_count > 0) sum += b.doc_sum;
        if (b.live_count > 0) sum += b.live_sum;
        targets[identity] = sum / total;
        break;
      }
    }
  }
  return targets;
}

// Dynamic weight imprinting: for every listed class,
//   w* = (1 - alpha) w + alpha wbar,   w <- w* / ||w*||,
// where w is the current normalized row.  The normalized result is what gets
// stored, and rows of absent classes are left bitwise untouched.  alpha = 1
// degenerates to direct replacement w <- wbar/||wbar||; alpha = 0 is a no-op.
inline void dwi_update(MarginHead& head, const ClassTargets& targets, double alpha,
                       std::vector<int>* skipped = nullptr) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ArgumentError("imprint update rate must be in [0, 1]");
  }
  for (const auto& [cls, target] : targets) {
    if (cls < 0 || cls >= head.num_classes()) {
      throw ArgumentError("imprint target for unknown class " + std::to_string(cls));
    }
    if (!(target.norm() > 0.0)) {
      throw ArgumentError("imprint target for class " + std::to_string(cls) +
                          " is the zero vector");
    }
  }
  if (alpha == 0.0) return;
  for (const auto& [cls, target] : targets) {
    const Eigen::VectorXd current = head.normalized_row(cls);
    const Eigen::VectorXd blended = (1.0 - alpha) * current + alpha * target;
    const double n = blended.norm();
    if (n < 1e-12) {
      // interpolation cancelled; direction is undefined for this class
      if (skipped) skipped->push_back(cls);
      else
        std::cerr << "warning: imprint update for class " << cls
                  << " cancelled to zero, row left unchanged\n";
      continue;
    }
    head.weights_raw.row(cls) = (blended / n).transpose();
  }
}

// Full-dataset imprinting: extracts every sample's normalized embedding,
// composes per-class targets in the given mode and replaces every row
// (update rate 1).  This is the expensive path: it spends one forward pass
// per sample, which is what the static schedules pay on every refresh.
inline void static_imprint_all(MarginHead& head, const SiblingPair& pair,
                               const ShallowDataset& dataset, TargetMode mode) {
  if (head.num_classes() != dataset.num_identities) {
    throw ArgumentError("head has " + std::to_string(head.num_classes()) +
                        " classes, dataset has " +
                        std::to_string(dataset.num_identities) + " identities");
  }
  std::vector<BatchFeature> features;
  features.reserve(dataset.samples.size());
  for (const Sample& s : dataset.samples) {
    features.push_back({l2_normalize(pair.route(s), "embedding"), s.identity,
                        s.domain});
  }
  dwi_update(head, batch_targets(features, mode), 1.0);
}

}  // namespace idmatch

#endif  // IDMATCH_IMPRINTING_HPP_
