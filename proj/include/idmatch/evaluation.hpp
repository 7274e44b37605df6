#ifndef IDMATCH_EVALUATION_HPP_
#define IDMATCH_EVALUATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "idmatch/common.hpp"
#include "idmatch/dataset.hpp"
#include "idmatch/network.hpp"
#include "idmatch/training.hpp"

namespace idmatch {

// ---------------------------------------------------------------------------
// Feature extraction and verification scoring
// ---------------------------------------------------------------------------

inline std::vector<Eigen::VectorXd> extract_all(const SiblingPair& pair,
                                                const ShallowDataset& dataset) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(dataset.samples.size());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    out.push_back(l2_normalize(pair.route(dataset.samples[i]),
                               "embedding of sample " + std::to_string(i)));
  }
  return out;
}

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
  bool impostor_subsampled = false;
};

struct ScoreProtocolConfig {
  // 0 keeps the full doc-vs-foreign-selfie cross product; otherwise impostor
  // pairs are subsampled to this many, seeded.
  std::size_t impostor_cap = 0;
  std::uint64_t subsample_seed = 0;
};

// Genuine scores pair each identity's document embedding with each of its own
// selfies; impostor scores pair it with selfies of every other identity.
inline ScoreSet score_protocol(const std::vector<Eigen::VectorXd>& embeddings,
                               const ShallowDataset& dataset,
                               const ScoreProtocolConfig& config = {}) {
  if (embeddings.size() != dataset.samples.size()) {
    throw ArgumentError("embeddings cover " +
                        std::to_string(embeddings.size()) + " samples, dataset has " +
                        std::to_string(dataset.samples.size()));
  }
  ScoreSet scores;
  std::vector<std::pair<std::size_t, std::size_t>> impostor_pairs;
  for (int id = 0; id < dataset.num_identities; ++id) {
    const IdentityIndex& idx = dataset.index_of(id);
    if (idx.doc.empty() || idx.live.empty()) {
      std::cerr << "warning: identity " << id
                << " lacks a domain; skipped in scoring\n";
      continue;
    }
    const std::size_t doc = idx.doc.front();
    for (std::size_t live : idx.live) {
      scores.genuine.push_back(embeddings[doc].dot(embeddings[live]));
    }
    for (int other = 0; other < dataset.num_identities; ++other) {
      if (other == id) continue;
      for (std::size_t live : dataset.index_of(other).live) {
        impostor_pairs.emplace_back(doc, live);
      }
    }
  }
  if (config.impostor_cap > 0 && impostor_pairs.size() > config.impostor_cap) {
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    Rng rng(config.subsample_seed);
    std::sample(impostor_pairs.begin(), impostor_pairs.end(),
                std::back_inserter(kept), config.impostor_cap, rng);
    impostor_pairs = std::move(kept);
    scores.impostor_subsampled = true;
  }
  scores.impostor.reserve(impostor_pairs.size());
  for (const auto& [a, b] : impostor_pairs) {
    scores.impostor.push_back(embeddings[a].dot(embeddings[b]));
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Operating points
// ---------------------------------------------------------------------------

struct OperatingPoint {
  double far_target = 0.0;
  double threshold = 0.0;
  double tar = 0.0;
  double achieved_far = 0.0;
  bool attainable = true;  // false when no observed threshold meets the target
  bool reliable = true;    // impostor count supports the target resolution
};

// Accept-at-threshold counts use >=, so tied scores land on the accept side.
// The threshold is the smallest observed score whose empirical FAR does not
// exceed the target; when even the top score overshoots, the point is marked
// unattainable with TAR 0.
inline std::vector<OperatingPoint> tar_at_far(
    const ScoreSet& scores, const std::vector<double>& far_targets) {
  if (scores.genuine.empty() || scores.impostor.empty()) {
    throw ArgumentError("tar_at_far needs nonempty genuine and impostor scores");
  }
  for (double v : scores.genuine) {
    if (!std::isfinite(v)) throw ArgumentError("non-finite genuine score");
  }
  for (double v : scores.impostor) {
    if (!std::isfinite(v)) throw ArgumentError("non-finite impostor score");
  }
  std::vector<double> candidates(scores.genuine);
  candidates.insert(candidates.end(), scores.impostor.begin(),
                    scores.impostor.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  std::vector<double> imp_sorted(scores.impostor);
  std::sort(imp_sorted.begin(), imp_sorted.end());
  std::vector<double> gen_sorted(scores.genuine);
  std::sort(gen_sorted.begin(), gen_sorted.end());
  const double n_imp = static_cast<double>(imp_sorted.size());
  const double n_gen = static_cast<double>(gen_sorted.size());
  auto count_geq = [](const std::vector<double>& sorted, double v) {
    return static_cast<double>(
        sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), v));
  };

  std::vector<OperatingPoint> out;
  out.reserve(far_targets.size());
  for (double target : far_targets) {
    if (!(target >= 0.0 && target <= 1.0)) {
      throw ArgumentError("FAR target must be in [0, 1]");
    }
    OperatingPoint point;
    point.far_target = target;
    point.reliable = target > 0.0 && n_imp >= 1.0 / target;
    point.attainable = false;
    for (double v : candidates) {  // ascending: first hit is the smallest
      const double far = count_geq(imp_sorted, v) / n_imp;
      if (far <= target) {
        point.threshold = v;
        point.achieved_far = far;
        point.tar = count_geq(gen_sorted, v) / n_gen;
        point.attainable = true;
        break;
      }
    }
    if (!point.attainable) {
      point.threshold = std::numeric_limits<double>::infinity();
      point.achieved_far = 0.0;
      point.tar = 0.0;
    }
    out.push_back(point);
  }
  return out;
}

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double tar = 0.0;
};

// One point per distinct observed score, descending threshold, so FAR and
// TAR are non-decreasing along the list.
inline std::vector<RocPoint> roc_points(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty()) {
    throw ArgumentError("roc_points needs nonempty genuine and impostor scores");
  }
  std::vector<double> candidates(scores.genuine);
  candidates.insert(candidates.end(), scores.impostor.begin(),
                    scores.impostor.end());
  std::sort(candidates.begin(), candidates.end(), std::greater<>());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());
  std::vector<double> imp_sorted(scores.impostor);
  std::sort(imp_sorted.begin(), imp_sorted.end());
  std::vector<double> gen_sorted(scores.genuine);
  std::sort(gen_sorted.begin(), gen_sorted.end());
  auto frac_geq = [](const std::vector<double>& sorted, double v) {
    return static_cast<double>(sorted.end() -
                               std::lower_bound(sorted.begin(), sorted.end(), v)) /
           static_cast<double>(sorted.size());
  };
  std::vector<RocPoint> out;
  out.reserve(candidates.size());
  for (double v : candidates) {
    out.push_back({v, frac_geq(imp_sorted, v), frac_geq(gen_sorted, v)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct FoldEval {
  int fold = 0;
  std::vector<OperatingPoint> points;
  std::size_t genuine_count = 0;
  std::size_t impostor_count = 0;
};

struct EvalReport {
  std::vector<double> far_targets;
  std::vector<FoldEval> folds;
  std::vector<double> mean_tar;  // per FAR target, across folds
  std::vector<double> sd_tar;    // sample convention (k-1)
  bool impostor_subsampled = false;
};

inline std::pair<double, double> mean_sample_sd(const std::vector<double>& xs) {
  if (xs.empty()) throw ArgumentError("mean of an empty list");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

inline void check_identity_disjoint(const std::vector<int>& train_ids,
                                    const std::vector<int>& test_ids) {
  std::set<int> train_set(train_ids.begin(), train_ids.end());
  for (int id : test_ids) {
    if (train_set.count(id)) {
      throw ArgumentError("identity " + std::to_string(id) +
                          " appears in both train and test splits");
    }
  }
}

inline void finalize_report(EvalReport& report) {
  report.mean_tar.clear();
  report.sd_tar.clear();
  for (std::size_t t = 0; t < report.far_targets.size(); ++t) {
    std::vector<double> tars;
    tars.reserve(report.folds.size());
    for (const FoldEval& fe : report.folds) tars.push_back(fe.points[t].tar);
    const auto [mean, sd] = mean_sample_sd(tars);
    report.mean_tar.push_back(mean);
    report.sd_tar.push_back(sd);
  }
}

// Train on k-1 folds, score the held-out fold, repeat for the requested
// folds (all of them by default).
inline EvalReport cross_validate(const ShallowDataset& dataset,
                                 const FoldSplit& split,
                                 const TrainConfig& config,
                                 const std::vector<double>& far_targets,
                                 const ScoreProtocolConfig& protocol = {},
                                 const std::vector<int>& folds_to_run = {}) {
  if (split.fold_count < 2) throw ArgumentError("cross-validation needs k >= 2");
  if (far_targets.empty()) throw ArgumentError("no FAR targets given");
  std::vector<int> folds(folds_to_run);
  if (folds.empty()) {
    folds.resize(static_cast<std::size_t>(split.fold_count));
    std::iota(folds.begin(), folds.end(), 0);
  }
  EvalReport report;
  report.far_targets = far_targets;
  for (int fold : folds) {
    std::vector<int> train_old_ids, test_old_ids;
    const ShallowDataset train_set =
        subset_for_fold(dataset, split, fold, false, &train_old_ids);
    const ShallowDataset test_set =
        subset_for_fold(dataset, split, fold, true, &test_old_ids);
    check_identity_disjoint(train_old_ids, test_old_ids);

    TrainResult trained;
    try {
      trained = train(train_set, config);
    } catch (const TrainingError& err) {
      throw TrainingError("fold " + std::to_string(fold) + ": " + err.what(),
                          err.step());
    }
    const std::vector<Eigen::VectorXd> embeddings =
        extract_all(trained.pair, test_set);
    const ScoreSet scores = score_protocol(embeddings, test_set, protocol);
    FoldEval fe;
    fe.fold = fold;
    fe.points = tar_at_far(scores, far_targets);
    fe.genuine_count = scores.genuine.size();
    fe.impostor_count = scores.impostor.size();
    report.impostor_subsampled |= scores.impostor_subsampled;
    report.folds.push_back(std::move(fe));
  }
  finalize_report(report);
  return report;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline std::string serialize_eval_csv(const EvalReport& report) {
  std::string out = "fold,far,tar,threshold\n";
  for (const FoldEval& fe : report.folds) {
    for (const OperatingPoint& p : fe.points) {
      out += std::to_string(fe.fold);
      out += ',';
      out += format_double(p.far_target);
      out += ',';
      out += format_double(p.tar);
      out += ',';
      out += format_double(p.threshold);
      out += '\n';
    }
  }
  for (std::size_t t = 0; t < report.far_targets.size(); ++t) {
    out += "mean,";
    out += format_double(report.far_targets[t]);
    out += ',';
    out += format_double(report.mean_tar[t]);
    out += ",\n";
    out += "sd,";
    out += format_double(report.far_targets[t]);
    out += ',';
    out += format_double(report.sd_tar[t]);
    out += ",\n";
  }
  return out;
}

inline std::string serialize_roc_csv(const std::vector<RocPoint>& points) {
  std::string out = "threshold,far,tar\n";
  for (const RocPoint& p : points) {
    out += format_double(p.threshold);
    out += ',';
    out += format_double(p.far);
    out += ',';
    out += format_double(p.tar);
    out += '\n';
  }
  return out;
}

}  // namespace idmatch

#endif  // IDMATCH_EVALUATION_HPP_
