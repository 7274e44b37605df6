#ifndef IDMATCH_EXPERIMENTS_HPP_
#define IDMATCH_EXPERIMENTS_HPP_

#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "idmatch/config_json.hpp"
#include "idmatch/dataset.hpp"
#include "idmatch/evaluation.hpp"
#include "idmatch/training.hpp"

namespace idmatch {

// ---------------------------------------------------------------------------
// Declarative experiment specs
// ---------------------------------------------------------------------------

struct DatasetParams {
  int identities = 200;
  int d_in = 16;
  double domain_shift = 0.5;
  double noise = 0.1;
  int selfies_min = 1;
  int selfies_max = 1;
  std::uint64_t seed = 7;
};

struct GridCell {
  std::string label;
  Json settings;  // sparse TrainConfig patch
};

struct Assertion {
  enum class Kind { Geq, MaxAt };
  Kind kind = Kind::Geq;
  std::string left;   // Geq: lhs cell; MaxAt: the cell expected on top
  std::string right;  // Geq only
  double slack_sd = 0.0;

  std::string describe() const {
    if (kind == Kind::MaxAt) return "mean TAR is maximal at '" + left + "'";
    std::string text = "mean TAR '" + left + "' >= '" + right + "'";
    if (slack_sd > 0.0) {
      text += " - " + format_double(slack_sd) + " sd";
    }
    return text;
  }
};

struct ExperimentSpec {
  std::string name;
  DatasetParams data;
  TrainConfig base;
  int fold_count = 5;
  std::vector<int> folds = {0, 1, 2};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::uint64_t fold_seed = 11;
  double assert_far = 0.01;
  std::vector<double> report_fars = {0.001, 0.01};
  std::vector<GridCell> grid;
  std::vector<Assertion> assertions;

  void validate() const {
    if (grid.empty()) throw ArgumentError("experiment grid is empty");
    if (seeds.size() < 3) throw ArgumentError("experiments need >= 3 seeds");
    if (folds.empty()) throw ArgumentError("no folds selected");
    if (fold_count < 2) throw ArgumentError("fold count must be >= 2");
    for (int f : folds) {
      if (f < 0 || f >= fold_count) {
        throw ArgumentError("fold index " + std::to_string(f) + " out of range");
      }
    }
    std::set<std::string> labels;
    for (const GridCell& cell : grid) {
      if (!labels.insert(cell.label).second) {
        throw ArgumentError("duplicate grid label '" + cell.label + "'");
      }
    }
    for (const Assertion& a : assertions) {
      if (!labels.count(a.left)) {
        throw ArgumentError("assertion references unknown cell '" + a.left + "'");
      }
      if (a.kind == Assertion::Kind::Geq && !labels.count(a.right)) {
        throw ArgumentError("assertion references unknown cell '" + a.right + "'");
      }
    }
    if (!(assert_far > 0.0 && assert_far <= 1.0)) {
      throw ArgumentError("assertion FAR must be in (0, 1]");
    }
    if (report_fars.empty()) throw ArgumentError("no report FARs given");
  }
};

// ---------------------------------------------------------------------------
// Spec <-> JSON
// ---------------------------------------------------------------------------

inline Json experiment_spec_to_json(const ExperimentSpec& spec) {
  Json grid = Json::array();
  for (const GridCell& cell : spec.grid) {
    grid.push_back({{"label", cell.label}, {"settings", cell.settings}});
  }
  Json assertions = Json::array();
  for (const Assertion& a : spec.assertions) {
    if (a.kind == Assertion::Kind::MaxAt) {
      assertions.push_back({{"type", "max"}, {"cell", a.left}});
    } else {
      assertions.push_back({{"type", "geq"},
                            {"left", a.left},
                            {"right", a.right},
                            {"slack-sd", a.slack_sd}});
    }
  }
  return Json{{"name", spec.name},
              {"dataset",
               {{"identities", spec.data.identities},
                {"dim", spec.data.d_in},
                {"shift", spec.data.domain_shift},
                {"noise", spec.data.noise},
                {"selfies-min", spec.data.selfies_min},
                {"selfies-max", spec.data.selfies_max},
                {"seed", spec.data.seed}}},
              {"base", train_config_to_json(spec.base)},
              {"fold-count", spec.fold_count},
              {"folds", spec.folds},
              {"seeds", spec.seeds},
              {"fold-seed", spec.fold_seed},
              {"assert-far", spec.assert_far},
              {"report-fars", spec.report_fars},
              {"grid", std::move(grid)},
              {"assertions", std::move(assertions)}};
}

inline ExperimentSpec experiment_spec_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("experiment spec must be a JSON object");
  ExperimentSpec spec;
  try {
    spec.name = j.at("name").get<std::string>();
    if (j.contains("dataset")) {
      const Json& d = j["dataset"];
      spec.data.identities = d.value("identities", spec.data.identities);
      spec.data.d_in = d.value("dim", spec.data.d_in);
      spec.data.domain_shift = d.value("shift", spec.data.domain_shift);
      spec.data.noise = d.value("noise", spec.data.noise);
      spec.data.selfies_min = d.value("selfies-min", spec.data.selfies_min);
      spec.data.selfies_max = d.value("selfies-max", spec.data.selfies_max);
      spec.data.seed = d.value("seed", spec.data.seed);
    }
    if (j.contains("base")) apply_train_config(spec.base, j["base"], "base");
    spec.fold_count = j.value("fold-count", spec.fold_count);
    if (j.contains("folds")) spec.folds = j["folds"].get<std::vector<int>>();
    if (j.contains("seeds")) {
      spec.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    }
    spec.fold_seed = j.value("fold-seed", spec.fold_seed);
    spec.assert_far = j.value("assert-far", spec.assert_far);
    if (j.contains("report-fars")) {
      spec.report_fars = j["report-fars"].get<std::vector<double>>();
    }
    for (const Json& cell : j.at("grid")) {
      spec.grid.push_back({cell.at("label").get<std::string>(),
                           cell.value("settings", Json::object())});
    }
    if (j.contains("assertions")) {
      for (const Json& a : j["assertions"]) {
        Assertion parsed;
        const std::string type = a.at("type").get<std::string>();
        if (type == "max") {
          parsed.kind = Assertion::Kind::MaxAt;
          parsed.left = a.at("cell").get<std::string>();
        } else if (type == "geq") {
          parsed.kind = Assertion::Kind::Geq;
          parsed.left = a.at("left").get<std::string>();
          parsed.right = a.at("right").get<std::string>();
          parsed.slack_sd = a.value("slack-sd", 0.0);
        } else {
          throw FormatError("unknown assertion type '" + type + "'");
        }
        spec.assertions.push_back(std::move(parsed));
      }
    }
  } catch (const Json::exception& err) {
    throw FormatError(std::string("bad experiment spec: ") + err.what());
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string cell;
  std::uint64_t seed = 0;
  int fold = 0;
  double assert_tar = 0.0;
  std::vector<double> report_tars;  // aligned with spec.report_fars
};

struct CellSummary {
  std::string label;
  std::vector<double> values;  // assert-FAR TARs, one per (seed, fold) run
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> report_means;
};

struct AssertionOutcome {
  Assertion assertion;
  bool passed = false;
  double left_mean = 0.0;
  double right_bound = 0.0;  // value the left mean was required to reach
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<RunRecord> runs;       // grid-major, then seed, then fold
  std::vector<CellSummary> cells;    // grid order
  std::vector<AssertionOutcome> outcomes;
  bool all_passed = true;
};

using ProgressFn =
    std::function<void(std::size_t done, std::size_t total, const RunRecord&)>;

inline ExperimentResult run_experiment(const ExperimentSpec& spec, int jobs = 1,
                                       const ProgressFn& progress = {}) {
  spec.validate();
  if (jobs < 1) throw ArgumentError("jobs must be >= 1");

  const ShallowDataset dataset = generate_synthetic(
      spec.data.identities, {spec.data.selfies_min, spec.data.selfies_max},
      spec.data.d_in, spec.data.domain_shift, spec.data.noise, spec.data.seed);
  const FoldSplit split = split_folds(dataset, spec.fold_count, spec.fold_seed);

  struct FoldData {
    ShallowDataset train_set, test_set;
  };
  std::vector<FoldData> fold_data;
  fold_data.reserve(spec.folds.size());
  for (int fold : spec.folds) {
    std::vector<int> train_ids, test_ids;
    FoldData fd{subset_for_fold(dataset, split, fold, false, &train_ids),
                subset_for_fold(dataset, split, fold, true, &test_ids)};
    check_identity_disjoint(train_ids, test_ids);
    fold_data.push_back(std::move(fd));
  }

  std::vector<double> eval_fars = spec.report_fars;
  eval_fars.push_back(spec.assert_far);

  struct RunTask {
    std::size_t cell_index;
    std::uint64_t seed;
    std::size_t fold_slot;
  };
  std::vector<RunTask> tasks;
  for (std::size_t c = 0; c < spec.grid.size(); ++c) {
    for (std::uint64_t seed : spec.seeds) {
      for (std::size_t f = 0; f < spec.folds.size(); ++f) {
        tasks.push_back({c, seed, f});
      }
    }
  }

  ExperimentResult result;
  result.spec = spec;
  result.runs.resize(tasks.size());

  std::mutex progress_mutex;
  std::size_t done = 0;
  auto run_one = [&](std::size_t task_index) {
    const RunTask& task = tasks[task_index];
    const GridCell& cell = spec.grid[task.cell_index];
    TrainConfig config = spec.base;
    apply_train_config(config, cell.settings, "cell '" + cell.label + "'");
    config.seed = derive_seed(task.seed, static_cast<std::uint64_t>(
                                             spec.folds[task.fold_slot]));
    const FoldData& fd = fold_data[task.fold_slot];

    TrainResult trained;
    try {
      trained = train(fd.train_set, config);
    } catch (const std::exception& err) {
      throw TrainingError("cell '" + cell.label + "' seed " +
                              std::to_string(task.seed) + " fold " +
                              std::to_string(spec.folds[task.fold_slot]) +
                              ": " + err.what(),
                          -1);
    }
    const std::vector<Eigen::VectorXd> embeddings =
        extract_all(trained.pair, fd.test_set);
    const ScoreSet scores = score_protocol(embeddings, fd.test_set);
    const std::vector<OperatingPoint> points = tar_at_far(scores, eval_fars);

    RunRecord record;
    record.cell = cell.label;
    record.seed = task.seed;
    record.fold = spec.folds[task.fold_slot];
    for (std::size_t t = 0; t < spec.report_fars.size(); ++t) {
      record.report_tars.push_back(points[t].tar);
    }
    record.assert_tar = points.back().tar;
    result.runs[task_index] = std::move(record);
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      ++done;
      progress(done, tasks.size(), result.runs[task_index]);
    }
  };

  if (jobs == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_one(i);
  } else {
    std::mutex next_mutex;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&]() {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(next_mutex);
          if (next >= tasks.size() || failure) return;
          i = next++;
        }
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(next_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads =
        std::min(static_cast<std::size_t>(jobs), tasks.size());
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  // Seed-averaged summaries per cell, in grid order.
  std::size_t cursor = 0;
  const std::size_t runs_per_cell = spec.seeds.size() * spec.folds.size();
  for (const GridCell& cell : spec.grid) {
    CellSummary summary;
    summary.label = cell.label;
    std::vector<std::vector<double>> report_values(spec.report_fars.size());
    for (std::size_t r = 0; r < runs_per_cell; ++r, ++cursor) {
      const RunRecord& record = result.runs[cursor];
      summary.values.push_back(record.assert_tar);
      for (std::size_t t = 0; t < spec.report_fars.size(); ++t) {
        report_values[t].push_back(record.report_tars[t]);
      }
    }
    const auto [mean, sd] = mean_sample_sd(summary.values);
    summary.mean = mean;
    summary.sd = sd;
    for (const std::vector<double>& vals : report_values) {
      summary.report_means.push_back(mean_sample_sd(vals).first);
    }
    result.cells.push_back(std::move(summary));
  }

  std::map<std::string, const CellSummary*> by_label;
  for (const CellSummary& cell : result.cells) by_label[cell.label] = &cell;
  for (const Assertion& assertion : spec.assertions) {
    AssertionOutcome outcome;
    outcome.assertion = assertion;
    const CellSummary& left = *by_label.at(assertion.left);
    outcome.left_mean = left.mean;
    if (assertion.kind == Assertion::Kind::MaxAt) {
      outcome.right_bound = 0.0;
      for (const CellSummary& cell : result.cells) {
        if (cell.label != assertion.left) {
          outcome.right_bound = std::max(outcome.right_bound, cell.mean);
        }
      }
      outcome.passed = left.mean >= outcome.right_bound;
    } else {
      const CellSummary& right = *by_label.at(assertion.right);
      outcome.right_bound = right.mean - assertion.slack_sd * right.sd;
      outcome.passed = left.mean >= outcome.right_bound;
    }
    result.all_passed &= outcome.passed;
    result.outcomes.push_back(std::move(outcome));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report emission (markdown + CSV, byte-deterministic)
// ---------------------------------------------------------------------------

inline std::string serialize_experiment_csv(const ExperimentResult& result) {
  std::string out = "cell,seed,fold,far,tar\n";
  for (const RunRecord& run : result.runs) {
    for (std::size_t t = 0; t < result.spec.report_fars.size(); ++t) {
      out += run.cell + ',' + std::to_string(run.seed) + ',' +
             std::to_string(run.fold) + ',' +
             format_double(result.spec.report_fars[t]) + ',' +
             format_double(run.report_tars[t]) + '\n';
    }
    out += run.cell + ',' + std::to_string(run.seed) + ',' +
           std::to_string(run.fold) + ',' +
           format_double(result.spec.assert_far) + ',' +
           format_double(run.assert_tar) + '\n';
  }
  return out;
}

inline std::string serialize_experiment_summary_csv(
    const ExperimentResult& result) {
  std::string out = "cell";
  for (double far : result.spec.report_fars) {
    out += ",tar@far=" + format_double(far);
  }
  out += ",tar@far=" + format_double(result.spec.assert_far) + ",sd\n";
  for (const CellSummary& cell : result.cells) {
    out += cell.label;
    for (double mean : cell.report_means) out += ',' + format_double(mean);
    out += ',' + format_double(cell.mean) + ',' + format_double(cell.sd) + '\n';
  }
  return out;
}

inline std::string serialize_experiment_markdown(const ExperimentResult& result) {
  std::string out = "# Experiment: " + result.spec.name + "\n\n";
  out += "Dataset: " + std::to_string(result.spec.data.identities) +
         " identities, input dim " + std::to_string(result.spec.data.d_in) +
         ", shift " + format_double(result.spec.data.domain_shift) +
         ", noise " + format_double(result.spec.data.noise) + ", selfies " +
         std::to_string(result.spec.data.selfies_min) + ".." +
         std::to_string(result.spec.data.selfies_max) + "\n";
  out += "Runs per cell: " + std::to_string(result.spec.seeds.size()) +
         " seeds x " + std::to_string(result.spec.folds.size()) +
         " held-out folds\n\n";
  out += "| cell |";
  for (double far : result.spec.report_fars) {
    out += " TAR@FAR=" + format_double(far) + " |";
  }
  out += " TAR@FAR=" + format_double(result.spec.assert_far) + " (mean) | sd |\n";
  out += "|---|";
  for (std::size_t t = 0; t < result.spec.report_fars.size(); ++t) out += "---|";
  out += "---|---|\n";
  for (const CellSummary& cell : result.cells) {
    out += "| " + cell.label + " |";
    for (double mean : cell.report_means) out += ' ' + format_double(mean) + " |";
    out += ' ' + format_double(cell.mean) + " | " + format_double(cell.sd) +
           " |\n";
  }
  out += "\n## Assertions\n\n";
  if (result.outcomes.empty()) out += "(none)\n";
  for (const AssertionOutcome& outcome : result.outcomes) {
    out += std::string(outcome.passed ? "- PASS: " : "- FAIL: ") +
           outcome.assertion.describe() + " (left mean " +
           format_double(outcome.left_mean) + ", required >= " +
           format_double(outcome.right_bound) + ")\n";
  }
  return out;
}

inline void emit_report(const ExperimentResult& result, const std::string& dir) {
  write_file_atomic(dir + "/results.csv", serialize_experiment_csv(result));
  write_file_atomic(dir + "/summary.csv",
                    serialize_experiment_summary_csv(result));
  write_file_atomic(dir + "/report.md", serialize_experiment_markdown(result));
}

// ---------------------------------------------------------------------------
// Built-in experiments: canned benchmark grids with asserted orderings
// ---------------------------------------------------------------------------

inline TrainConfig desk_scale_base() {
  TrainConfig base;
  base.batch_size = 64;
  base.steps = 400;
  base.loss = LossKind::DiamSoftmax;
  base.sampler = SamplerKind::RandomDomainPairs;
  base.sharing = "high-fc";
  return base;
}

inline ExperimentSpec builtin_alpha_sweep() {
  ExperimentSpec spec;
  spec.name = "alpha_sweep";
  spec.base = desk_scale_base();
  spec.data.noise = 0.3;  // mild noise keeps the sweep off the ceiling
  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    spec.grid.push_back({"alpha=" + format_double(alpha),
                         Json{{"imprint", {{"alpha", alpha}}}}});
  }
  spec.assertions.push_back({Assertion::Kind::MaxAt, "alpha=1", "", 0.0});
  return spec;
}

inline ExperimentSpec builtin_target_mode() {
  ExperimentSpec spec;
  spec.name = "target_mode";
  spec.base = desk_scale_base();
  spec.data.noise = 0.3;
  for (const char* mode : {"doc", "live", "average"}) {
    spec.grid.push_back(
        {mode, Json{{"imprint", {{"target", mode}}}}});
  }
  spec.assertions.push_back({Assertion::Kind::Geq, "average", "doc", 0.0});
  spec.assertions.push_back({Assertion::Kind::Geq, "average", "live", 0.0});
  return spec;
}

inline ExperimentSpec builtin_sampler() {
  ExperimentSpec spec;
  spec.name = "sampler";
  spec.base = desk_scale_base();
  spec.data.domain_shift = 2.0;
  spec.data.noise = 0.2;
  // Selfie-heavy classes: uniform image sampling rarely draws the lone doc
  // sample, so the doc side of the gap goes under-trained.
  spec.data.selfies_min = 1;
  spec.data.selfies_max = 7;
  for (const char* sampler : {"images", "pairs", "domain-pairs"}) {
    spec.grid.push_back({sampler, Json{{"sampler", sampler}}});
  }
  spec.assertions.push_back(
      {Assertion::Kind::Geq, "domain-pairs", "images", 1.0});
  spec.assertions.push_back(
      {Assertion::Kind::Geq, "domain-pairs", "pairs", 1.0});
  return spec;
}

inline ExperimentSpec builtin_sharing() {
  ExperimentSpec spec;
  spec.name = "sharing";
  spec.base = desk_scale_base();
  spec.base.net.hidden = {64, 64, 64, 64};  // deeper net: sharing has bite
  // Low input dimension makes full sharing pay for domain invariance with a
  // real chunk of identity-bearing signal; at high d_in the cost is negligible.
  spec.data.d_in = 4;
  spec.data.domain_shift = 2.0;
  for (const char* mask : {"none", "low-1", "low-3", "high-fc", "high-2", "all"}) {
    spec.grid.push_back({mask, Json{{"sharing", mask}}});
  }
  spec.assertions.push_back({Assertion::Kind::Geq, "high-fc", "all", 0.0});
  return spec;
}

inline ExperimentSpec builtin_imprint_schedule() {
  ExperimentSpec spec;
  spec.name = "imprint_schedule";
  spec.base = desk_scale_base();
  spec.data.noise = 0.3;
  for (const char* schedule : {"dynamic", "static-periodical", "static-fixed"}) {
    spec.grid.push_back({schedule, Json{{"imprint", {{"schedule", schedule}}}}});
  }
  spec.assertions.push_back(
      {Assertion::Kind::Geq, "dynamic", "static-periodical", 0.0});
  spec.assertions.push_back(
      {Assertion::Kind::Geq, "static-periodical", "static-fixed", 0.0});
  return spec;
}

inline ExperimentSpec builtin_loss_compare() {
  ExperimentSpec spec;
  spec.name = "loss_compare";
  spec.base = desk_scale_base();
  spec.data.identities = 400;  // more classes: plain softmax starts to lag
  spec.data.noise = 0.2;
  spec.grid.push_back({"softmax", Json{{"loss", "softmax"}}});
  spec.grid.push_back({"am-softmax", Json{{"loss", "am-softmax"}}});
  spec.grid.push_back(
      {"am-softmax-2x",
       Json{{"loss", "am-softmax"}, {"steps", 2 * spec.base.steps}}});
  spec.grid.push_back({"contrastive", Json{{"loss", "contrastive"}}});
  spec.grid.push_back({"triplet", Json{{"loss", "triplet"}}});
  spec.grid.push_back({"diam", Json{{"loss", "diam"}}});
  spec.assertions.push_back({Assertion::Kind::Geq, "diam", "am-softmax-2x", 0.0});
  spec.assertions.push_back(
      {Assertion::Kind::Geq, "am-softmax-2x", "contrastive", 0.0});
  spec.assertions.push_back(
      {Assertion::Kind::Geq, "am-softmax-2x", "triplet", 0.0});
  spec.assertions.push_back({Assertion::Kind::Geq, "contrastive", "softmax", 0.0});
  spec.assertions.push_back({Assertion::Kind::Geq, "triplet", "softmax", 0.0});
  return spec;
}

inline std::vector<std::string> builtin_experiment_names() {
  return {"alpha_sweep", "target_mode",      "sampler",
          "sharing",     "imprint_schedule", "loss_compare"};
}

inline ExperimentSpec builtin_experiment(const std::string& name) {
  if (name == "alpha_sweep") return builtin_alpha_sweep();
  if (name == "target_mode") return builtin_target_mode();
  if (name == "sampler") return builtin_sampler();
  if (name == "sharing") return builtin_sharing();
  if (name == "imprint_schedule") return builtin_imprint_schedule();
  if (name == "loss_compare") return builtin_loss_compare();
  std::string names;
  for (const std::string& n : builtin_experiment_names()) {
    if (!names.empty()) names += ", ";
    names += n;
  }
  throw ArgumentError("unknown experiment '" + name + "' (built-ins: " + names +
                      ")");
}

}  // namespace idmatch

#endif  // IDMATCH_EXPERIMENTS_HPP_
