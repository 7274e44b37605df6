// Command-line front end: generate synthetic datasets, train sibling
// networks, evaluate verification accuracy, and run the named experiment
// grids.  Every command records a manifest sufficient to reproduce its
// output files bitwise via `idmatch rerun <manifest>`.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "idmatch/idmatch.hpp"

namespace {

using namespace idmatch;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitAssertion = 4;

std::string hex_hash(const std::string& content) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a_hash(content)));
  return buf;
}

std::string default_run_dir() {
  const char* env = std::getenv("IDMATCH_RUN_DIR");
  return env && *env ? env : ".";
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

void write_manifest(const std::string& path, const std::string& command,
                    const Json& params, const Json& artifacts, double seconds) {
  Json manifest{{"tool", "idmatch"},
                {"version", kToolVersion},
                {"command", command},
                {"params", params},
                {"artifacts", artifacts},
                {"timing", {{"seconds", seconds}}}};
  write_file_atomic(path, manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateParams {
  int identities = 0;
  int dim = 16;
  double shift = 0.5;
  double noise = 0.1;
  int selfies_min = 1;
  int selfies_max = 1;
  std::uint64_t seed = 0;
  std::string out;

  Json to_json() const {
    return Json{{"identities", identities}, {"dim", dim},
                {"shift", shift},           {"noise", noise},
                {"selfies-min", selfies_min}, {"selfies-max", selfies_max},
                {"seed", seed},             {"out", out}};
  }
  static GenerateParams from_json(const Json& j) {
    GenerateParams p;
    p.identities = j.at("identities").get<int>();
    p.dim = j.at("dim").get<int>();
    p.shift = j.at("shift").get<double>();
    p.noise = j.at("noise").get<double>();
    p.selfies_min = j.at("selfies-min").get<int>();
    p.selfies_max = j.at("selfies-max").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.out = j.at("out").get<std::string>();
    return p;
  }
};

int run_generate(const GenerateParams& p) {
  const auto start = std::chrono::steady_clock::now();
  const ShallowDataset dataset =
      generate_synthetic(p.identities, {p.selfies_min, p.selfies_max}, p.dim,
                         p.shift, p.noise, p.seed);
  save_dataset(dataset, p.out);
  write_manifest(p.out + ".manifest.json", "generate", p.to_json(),
                 Json{{"dataset", p.out}}, elapsed_seconds(start));
  std::cout << "wrote " << p.out << ": " << dataset.num_identities
            << " identities, " << dataset.samples.size() << " samples, dim "
            << dataset.d_in << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainParams {
  std::string data;
  std::string out;
  std::string trace;        // defaults to <out>.trace.csv
  std::string config_file;  // optional JSON overlay (overrides flags)
  TrainConfig config;
  std::string head_opt;     // "", "sgd" or "dwi"
  int fold = -1;            // held-out fold index; -1 trains on everything
  int fold_count = 5;
  std::uint64_t fold_seed = 11;

  Json to_json() const {
    Json j{{"data", data},
           {"out", out},
           {"trace", trace},
           {"seed", config.seed},
           {"config", train_config_to_json(config)}};
    if (fold >= 0) {
      j["fold"] = {{"count", fold_count}, {"seed", fold_seed}, {"index", fold}};
    } else {
      j["fold"] = nullptr;
    }
    return j;
  }
  static TrainParams from_json(const Json& j) {
    TrainParams p;
    p.data = j.at("data").get<std::string>();
    p.out = j.at("out").get<std::string>();
    p.trace = j.at("trace").get<std::string>();
    p.config = train_config_from_json(j.at("config"));
    if (j.contains("fold") && !j["fold"].is_null()) {
      p.fold = j["fold"].at("index").get<int>();
      p.fold_count = j["fold"].at("count").get<int>();
      p.fold_seed = j["fold"].at("seed").get<std::uint64_t>();
    }
    return p;
  }
};

int run_train(TrainParams p) {
  const auto start = std::chrono::steady_clock::now();
  if (p.trace.empty()) p.trace = p.out + ".trace.csv";

  // The config file wins over command-line flags.
  if (!p.config_file.empty()) {
    Json overlay;
    try {
      overlay = Json::parse(read_file(p.config_file));
    } catch (const Json::exception& err) {
      throw FormatError(p.config_file + ": " + err.what());
    }
    apply_train_config(p.config, overlay, p.config_file);
  }
  if (p.head_opt == "dwi") {
    if (p.config.loss == LossKind::AmSoftmax) p.config.loss = LossKind::DiamSoftmax;
    else if (p.config.loss != LossKind::DiamSoftmax) {
      throw ArgumentError("--head-opt dwi applies to am-softmax/diam only");
    }
  } else if (p.head_opt == "sgd") {
    if (p.config.loss == LossKind::DiamSoftmax) {
      throw ArgumentError(
          "--loss diam requires the imprinted head; use --loss am-softmax "
          "with --head-opt sgd");
    }
  } else if (!p.head_opt.empty()) {
    throw ArgumentError("unknown --head-opt '" + p.head_opt +
                        "' (valid: sgd, dwi)");
  }

  const std::string content = read_file(p.data);
  const std::string data_hash = hex_hash(content);
  const ShallowDataset full = parse_dataset(content);

  ShallowDataset train_set = full;
  std::vector<int> trained_ids;
  Json fold_json;
  if (p.fold >= 0) {
    const FoldSplit split = split_folds(full, p.fold_count, p.fold_seed);
    train_set = subset_for_fold(full, split, p.fold, false, &trained_ids);
    fold_json = {{"count", p.fold_count}, {"seed", p.fold_seed},
                 {"index", p.fold}};
  } else {
    trained_ids.resize(static_cast<std::size_t>(full.num_identities));
    std::iota(trained_ids.begin(), trained_ids.end(), 0);
  }

  std::vector<TraceRow> rows;
  TrainResult trained;
  try {
    trained = train(train_set, p.config,
                    [&](const TraceRow& row) { rows.push_back(row); });
  } catch (const TrainingError&) {
    write_file_atomic(p.trace, serialize_trace_csv(rows));
    std::cerr << "saved partial trace (" << rows.size() << " rows) to "
              << p.trace << "\n";
    throw;
  }

  Checkpoint ckpt;
  ckpt.pair = std::move(trained.pair);
  ckpt.margin_head = std::move(trained.margin_head);
  ckpt.plain_head = std::move(trained.plain_head);
  ckpt.dataset_hash = data_hash;
  ckpt.trained_identities = trained_ids;
  ckpt.fold = fold_json;
  ckpt.train_config = train_config_to_json(p.config);
  save_checkpoint(p.out, ckpt);
  write_file_atomic(p.trace, serialize_trace_csv(trained.trace));
  write_manifest(p.out + ".manifest.json", "train", p.to_json(),
                 Json{{"checkpoint", p.out}, {"trace", p.trace}},
                 elapsed_seconds(start));

  std::cout << "trained " << loss_kind_name(p.config.loss) << " for "
            << p.config.steps << " steps on " << train_set.num_identities
            << " identities\n";
  if (!trained.trace.empty()) {
    std::cout << "loss " << format_double(trained.trace.front().loss) << " -> "
              << format_double(trained.trace.back().loss) << "\n";
  }
  std::cout << "checkpoint: " << p.out << "\ntrace: " << p.trace << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalParams {
  std::string checkpoint;
  std::string data;
  std::vector<double> fars = {0.001, 0.01};
  std::string out;
  std::string roc;  // optional ROC CSV path
  bool use_fold = false;
  bool allow_train_eval = false;
  std::size_t impostor_cap = 0;
  std::uint64_t subsample_seed = 0;

  Json to_json() const {
    return Json{{"checkpoint", checkpoint},
                {"data", data},
                {"fars", fars},
                {"out", out},
                {"roc", roc},
                {"use-fold", use_fold},
                {"allow-train-eval", allow_train_eval},
                {"impostor-cap", impostor_cap},
                {"subsample-seed", subsample_seed}};
  }
  static EvalParams from_json(const Json& j) {
    EvalParams p;
    p.checkpoint = j.at("checkpoint").get<std::string>();
    p.data = j.at("data").get<std::string>();
    p.fars = j.at("fars").get<std::vector<double>>();
    p.out = j.at("out").get<std::string>();
    p.roc = j.value("roc", "");
    p.use_fold = j.value("use-fold", false);
    p.allow_train_eval = j.value("allow-train-eval", false);
    p.impostor_cap = j.value("impostor-cap", std::size_t{0});
    p.subsample_seed = j.value("subsample-seed", std::uint64_t{0});
    return p;
  }
};

int run_eval(const EvalParams& p) {
  const auto start = std::chrono::steady_clock::now();
  const Checkpoint ckpt = load_checkpoint(p.checkpoint);
  const std::string content = read_file(p.data);
  const std::string data_hash = hex_hash(content);
  const ShallowDataset full = parse_dataset(content);

  ShallowDataset eval_set = full;
  std::vector<int> eval_ids;
  int fold_index = 0;
  if (p.use_fold) {
    if (ckpt.fold.is_null()) {
      throw ArgumentError("--fold given but the checkpoint was not trained "
                          "on a fold split");
    }
    if (ckpt.dataset_hash != data_hash) {
      throw ArgumentError(
          "--fold needs the original training dataset file (content hash "
          "mismatch: checkpoint has " + ckpt.dataset_hash + ", file has " +
          data_hash + ")");
    }
    const FoldSplit split =
        split_folds(full, ckpt.fold.at("count").get<int>(),
                    ckpt.fold.at("seed").get<std::uint64_t>());
    fold_index = ckpt.fold.at("index").get<int>();
    eval_set = subset_for_fold(full, split, fold_index, true, &eval_ids);
  } else {
    eval_ids.resize(static_cast<std::size_t>(full.num_identities));
    std::iota(eval_ids.begin(), eval_ids.end(), 0);
  }

  if (ckpt.dataset_hash == data_hash && !p.allow_train_eval) {
    std::set<int> trained(ckpt.trained_identities.begin(),
                          ckpt.trained_identities.end());
    for (int id : eval_ids) {
      if (trained.count(id)) {
        throw ArgumentError(
            "identity " + std::to_string(id) +
            " was part of training; evaluating on training identities needs "
            "--allow-train-eval");
      }
    }
  }

  const std::vector<Eigen::VectorXd> embeddings =
      extract_all(ckpt.pair, eval_set);
  const ScoreSet scores =
      score_protocol(embeddings, eval_set, {p.impostor_cap, p.subsample_seed});

  EvalReport report;
  report.far_targets = p.fars;
  FoldEval fe;
  fe.fold = fold_index;
  fe.points = tar_at_far(scores, p.fars);
  fe.genuine_count = scores.genuine.size();
  fe.impostor_count = scores.impostor.size();
  report.impostor_subsampled = scores.impostor_subsampled;
  report.folds.push_back(fe);
  finalize_report(report);

  write_file_atomic(p.out, serialize_eval_csv(report));
  Json artifacts{{"report", p.out}};
  if (!p.roc.empty()) {
    write_file_atomic(p.roc, serialize_roc_csv(roc_points(scores)));
    artifacts["roc"] = p.roc;
  }
  write_manifest(p.out + ".manifest.json", "eval", p.to_json(), artifacts,
                 elapsed_seconds(start));

  std::cout << scores.genuine.size() << " genuine, " << scores.impostor.size()
            << " impostor scores"
            << (scores.impostor_subsampled ? " (impostors subsampled)" : "")
            << "\n";
  for (const OperatingPoint& point : fe.points) {
    std::cout << "TAR@FAR=" << format_double(point.far_target) << ": "
              << format_double(point.tar);
    if (!point.attainable) std::cout << " (unattainable)";
    else if (!point.reliable) std::cout << " (too few impostors)";
    std::cout << "\n";
  }
  std::cout << "report: " << p.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

struct ExperimentParams {
  std::string spec_arg;  // builtin name or spec file path
  std::string out_dir;
  int jobs = 1;

  Json to_json(const ExperimentSpec& spec) const {
    return Json{{"spec", experiment_spec_to_json(spec)},
                {"out-dir", out_dir},
                {"jobs", jobs}};
  }
};

ExperimentSpec resolve_experiment_spec(const std::string& arg) {
  const bool looks_like_path =
      arg.find('/') != std::string::npos || arg.find(".json") != std::string::npos;
  if (looks_like_path) {
    Json j;
    try {
      j = Json::parse(read_file(arg));
    } catch (const Json::exception& err) {
      throw FormatError(arg + ": " + err.what());
    }
    return experiment_spec_from_json(j);
  }
  return builtin_experiment(arg);
}

int run_experiment_cmd(ExperimentParams p, const ExperimentSpec* preloaded) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentSpec spec =
      preloaded ? *preloaded : resolve_experiment_spec(p.spec_arg);
  if (p.out_dir.empty()) p.out_dir = default_run_dir() + "/" + spec.name;

  const ExperimentResult result = run_experiment(
      spec, p.jobs, [](std::size_t done, std::size_t total, const RunRecord& run) {
        std::cerr << "[" << done << "/" << total << "] " << run.cell << " seed "
                  << run.seed << " fold " << run.fold << ": TAR "
                  << format_double(run.assert_tar) << "\n";
      });

  fs::create_directories(p.out_dir);
  emit_report(result, p.out_dir);
  write_manifest(p.out_dir + "/manifest.json", "experiment", p.to_json(spec),
                 Json{{"results", p.out_dir + "/results.csv"},
                      {"summary", p.out_dir + "/summary.csv"},
                      {"report", p.out_dir + "/report.md"}},
                 elapsed_seconds(start));

  for (const CellSummary& cell : result.cells) {
    std::cout << cell.label << ": mean TAR@FAR="
              << format_double(spec.assert_far) << " "
              << format_double(cell.mean) << " (sd " << format_double(cell.sd)
              << ")\n";
  }
  for (const AssertionOutcome& outcome : result.outcomes) {
    std::cout << (outcome.passed ? "PASS: " : "FAIL: ")
              << outcome.assertion.describe() << "\n";
  }
  std::cout << "report: " << p.out_dir << "/report.md\n";
  return result.all_passed ? kExitOk : kExitAssertion;
}

// ---------------------------------------------------------------------------
// rerun
// ---------------------------------------------------------------------------

int run_rerun(const std::string& manifest_path) {
  Json manifest;
  try {
    manifest = Json::parse(read_file(manifest_path));
  } catch (const Json::exception& err) {
    throw FormatError(manifest_path + ": " + err.what());
  }
  if (manifest.value("tool", "") != "idmatch") {
    throw FormatError(manifest_path + ": not an idmatch manifest");
  }
  const std::string command = manifest.value("command", "");
  const Json& params = manifest.at("params");
  if (command == "generate") {
    return run_generate(GenerateParams::from_json(params));
  }
  if (command == "train") {
    return run_train(TrainParams::from_json(params));
  }
  if (command == "eval") {
    return run_eval(EvalParams::from_json(params));
  }
  if (command == "experiment") {
    ExperimentParams p;
    p.out_dir = params.at("out-dir").get<std::string>();
    p.jobs = params.value("jobs", 1);
    const ExperimentSpec spec = experiment_spec_from_json(params.at("spec"));
    p.spec_arg = spec.name;
    return run_experiment_cmd(p, &spec);
  }
  throw FormatError(manifest_path + ": unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ID-document to selfie matcher: synthetic benchmark, trainer "
               "and evaluation harness"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenerateParams gen;
  CLI::App* cmd_gen = app.add_subcommand("generate", "Write a synthetic dataset");
  cmd_gen->add_option("--identities", gen.identities, "number of identities")
      ->required();
  cmd_gen->add_option("--dim", gen.dim, "input dimension");
  cmd_gen->add_option("--shift", gen.shift, "domain shift magnitude");
  cmd_gen->add_option("--noise", gen.noise, "per-sample noise level");
  cmd_gen->add_option("--selfies-min", gen.selfies_min, "min selfies per identity");
  cmd_gen->add_option("--selfies-max", gen.selfies_max, "max selfies per identity");
  cmd_gen->add_option("--seed", gen.seed, "generator seed (always recorded)");
  cmd_gen->add_option("-o,--out", gen.out, "output dataset path")->required();

  TrainParams tp;
  std::string loss_name = "diam";
  std::string sampler_name_flag = "domain-pairs";
  std::string target_name = "average";
  std::string schedule_name_flag = "dynamic";
  CLI::App* cmd_train = app.add_subcommand("train", "Train a sibling pair");
  cmd_train->add_option("--data", tp.data, "dataset file")->required();
  cmd_train->add_option("-o,--out", tp.out, "checkpoint path")->required();
  cmd_train->add_option("--trace", tp.trace, "loss trace CSV (default <out>.trace.csv)");
  cmd_train->add_option("--config", tp.config_file,
                        "JSON config overlay; overrides flags");
  cmd_train->add_option("--loss", loss_name,
                        "softmax | am-softmax | contrastive | triplet | diam");
  cmd_train->add_option("--head-opt", tp.head_opt,
                        "head optimizer: sgd | dwi (diam = am-softmax + dwi)");
  cmd_train->add_option("--sampler", sampler_name_flag,
                        "images | pairs | domain-pairs");
  cmd_train->add_option("--alpha", tp.config.imprint.alpha, "imprint update rate");
  cmd_train->add_option("--target", target_name, "imprint target: doc | live | average");
  cmd_train->add_option("--schedule", schedule_name_flag,
                        "imprint schedule: dynamic | static-fixed | static-periodical");
  cmd_train->add_option("--period-epochs", tp.config.imprint.period_epochs,
                        "static-periodical imprint period");
  cmd_train->add_option("--batch", tp.config.batch_size, "batch size");
  cmd_train->add_option("--steps", tp.config.steps, "training steps");
  cmd_train->add_option("--seed", tp.config.seed, "training seed (always recorded)");
  cmd_train->add_option("--sharing", tp.config.sharing,
                        "layer sharing: none | low-K | high-K | high-fc | all");
  cmd_train->add_option("--margin", tp.config.margin, "additive margin m");
  cmd_train->add_option("--scale", tp.config.initial_scale, "initial logit scale s");
  cmd_train->add_option("--contrastive-margin", tp.config.contrastive_margin,
                        "contrastive impostor margin");
  cmd_train->add_option("--triplet-margin", tp.config.triplet_margin,
                        "triplet margin");
  cmd_train->add_option("--hidden", tp.config.net.hidden, "hidden layer widths");
  cmd_train->add_option("--embed", tp.config.net.embed_dim, "embedding dimension");
  cmd_train->add_option("--lr", tp.config.opt.lr.base, "base learning rate");
  cmd_train->add_option("--momentum", tp.config.opt.momentum, "SGD momentum");
  cmd_train->add_option("--weight-decay", tp.config.opt.weight_decay,
                        "weight decay");
  cmd_train->add_option("--fold", tp.fold,
                        "hold out this fold and train on the rest");
  cmd_train->add_option("--fold-count", tp.fold_count, "number of folds");
  cmd_train->add_option("--fold-seed", tp.fold_seed, "fold split seed");

  EvalParams ep;
  CLI::App* cmd_eval = app.add_subcommand("eval", "Score a checkpoint");
  cmd_eval->add_option("--checkpoint", ep.checkpoint, "checkpoint path")->required();
  cmd_eval->add_option("--data", ep.data, "dataset file")->required();
  cmd_eval->add_option("-o,--out", ep.out, "report CSV path")->required();
  cmd_eval->add_option("--far", ep.fars, "FAR targets");
  cmd_eval->add_option("--roc", ep.roc, "also write ROC points CSV here");
  cmd_eval->add_flag("--fold", ep.use_fold,
                     "evaluate the checkpoint's held-out fold");
  cmd_eval->add_flag("--allow-train-eval", ep.allow_train_eval,
                     "permit scoring identities seen in training");
  cmd_eval->add_option("--impostor-cap", ep.impostor_cap,
                       "subsample impostor pairs to this many (0 = all)");
  cmd_eval->add_option("--subsample-seed", ep.subsample_seed,
                       "impostor subsample seed");

  ExperimentParams xp;
  CLI::App* cmd_exp = app.add_subcommand(
      "experiment", "Run a named experiment grid or a spec file");
  cmd_exp->add_option("name", xp.spec_arg,
                      "builtin name (see --help footer) or spec JSON path")
      ->required();
  cmd_exp->add_option("--out-dir", xp.out_dir,
                      "report directory (default $IDMATCH_RUN_DIR/<name>)");
  cmd_exp->add_option("--jobs", xp.jobs, "parallel training jobs");

  std::string manifest_path;
  CLI::App* cmd_rerun =
      app.add_subcommand("rerun", "Replay a command from its manifest");
  cmd_rerun->add_option("manifest", manifest_path, "manifest JSON path")
      ->required();

  std::string builtins;
  for (const std::string& name : builtin_experiment_names()) {
    if (!builtins.empty()) builtins += ", ";
    builtins += name;
  }
  app.footer("Built-in experiments: " + builtins +
             "\nExit codes: 0 ok, 2 usage, 3 runtime failure, 4 assertion "
             "failed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (cmd_gen->parsed()) return run_generate(gen);
    if (cmd_train->parsed()) {
      tp.config.loss = parse_loss(loss_name);
      tp.config.sampler = parse_sampler(sampler_name_flag);
      tp.config.imprint.target_mode = parse_target_mode(target_name);
      tp.config.imprint.schedule = parse_schedule(schedule_name_flag);
      return run_train(tp);
    }
    if (cmd_eval->parsed()) return run_eval(ep);
    if (cmd_exp->parsed()) return run_experiment_cmd(xp, nullptr);
    if (cmd_rerun->parsed()) return run_rerun(manifest_path);
  } catch (const ArgumentError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
