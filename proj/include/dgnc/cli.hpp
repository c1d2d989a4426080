// Command-line entry point: synth / train / eval / gradcheck.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or config error,
// 3 numerical divergence. Every command is idempotent in --seed: identical
// invocations produce byte-identical outputs. The report file is fully
// deterministic; wall-clock time goes to stdout only.
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgnc/checkpoint.hpp"
#include "dgnc/common.hpp"
#include "dgnc/config.hpp"
#include "dgnc/data.hpp"
#include "dgnc/model.hpp"
#include "dgnc/training.hpp"
#include "dgnc/verify.hpp"

namespace dgnc {

namespace cli {

constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kUsageError = 2;
constexpr int kDivergence = 3;
constexpr double kGradCheckThreshold = 1e-4;

struct SynthArgs {
  std::string out;
  std::size_t subjects = 64;
  std::size_t regions = 20;
  std::size_t timepoints = 100;
  double coupling = 1.0;
  std::uint64_t seed = 1;
  std::size_t plant_window = 20;
  double train_fraction = 0.8;
};

inline int cmd_synth(const SynthArgs& a) {
  auto ds = synth_generate<double>(a.subjects, a.regions, a.timepoints, a.coupling, a.seed,
                                   a.plant_window, a.train_fraction);
  std::vector<std::string> comments = {
      "generator: synth",
      "subjects=" + std::to_string(a.subjects) + " regions=" + std::to_string(a.regions) +
          " timepoints=" + std::to_string(a.timepoints),
      "coupling=" + fmt_real(a.coupling) + " plant_window=" + std::to_string(a.plant_window) +
          " train_fraction=" + fmt_real(a.train_fraction) + " seed=" + std::to_string(a.seed),
  };
  if (a.coupling == 0.0) {
    comments.push_back("degenerate: coupling=0, classes are statistically identical");
  }
  save_dataset(ds, a.out, comments);
  std::cout << "wrote " << ds.subjects.size() << " subjects (" << ds.train_indices.size()
            << " train, " << ds.test_indices.size() << " test) to " << a.out << "\n";
  return kOk;
}

inline std::string render_report(const Config& cfg, const TrainResult<double>& result,
                                 const Metrics& train_metrics,
                                 const std::optional<Metrics>& test_metrics) {
  std::string out;
  out += "report_version=1\n";
  out += "seed=" + std::to_string(cfg.seed) + "\n";
  {
    std::istringstream echo(config_echo(cfg));
    std::string line;
    while (std::getline(echo, line)) out += "config." + line + "\n";
  }
  auto metrics_block = [&out](const std::string& split, const Metrics& m) {
    out += "final." + split + ".accuracy=" + fmt_real(m.accuracy) + "\n";
    out += "final." + split + ".auc=" + fmt_real(m.auc) + "\n";
    out += "final." + split + ".recall=" + fmt_real(m.recall) + "\n";
    out += "final." + split + ".precision=" + fmt_real(m.precision) + "\n";
  };
  metrics_block("train", train_metrics);
  if (test_metrics) metrics_block("test", *test_metrics);
  out += "history:\n";
  out += "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  for (const auto& rec : result.history) {
    out += std::to_string(rec.epoch) + "," + fmt_real(rec.train_loss) + "," +
           fmt_real(rec.train_acc) + "," + fmt_real(rec.val_loss) + "," + fmt_real(rec.val_acc) +
           "," + fmt_real(rec.lr) + "\n";
  }
  return out;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out_ckpt;
  std::string report;
  std::optional<std::uint64_t> seed_override;
};

inline int cmd_train(const TrainArgs& a) {
  Config cfg = parse_config_file(a.config);
  if (a.seed_override) cfg.seed = *a.seed_override;
  auto ds = load_dataset<double>(a.data, std::filesystem::path(a.data) / "manifest.csv");
  // the dataset fixes the structural width; echo the effective value
  cfg.regions = ds.regions();
  cfg.validate();

  const auto t0 = std::chrono::steady_clock::now();
  auto result = train(ds, cfg);
  const Metrics train_metrics = evaluate(result.params, ds, ds.train_indices, cfg);
  std::optional<Metrics> test_metrics;
  if (!ds.test_indices.empty()) {
    test_metrics = evaluate(result.params, ds, ds.test_indices, cfg);
  }
  const auto t1 = std::chrono::steady_clock::now();

  save_checkpoint(a.out_ckpt, cfg, result.params.named());
  {
    std::ofstream rep(a.report, std::ios::binary);
    if (!rep) {
      throw ConfigError("cannot write report file " + a.report);
    }
    rep << render_report(cfg, result, train_metrics, test_metrics);
  }
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  std::cout << "train_loss=" << fmt_real(result.history.back().train_loss) << "\n";
  std::cout << "train_accuracy=" << fmt_real(train_metrics.accuracy) << "\n";
  if (test_metrics) std::cout << "test_accuracy=" << fmt_real(test_metrics->accuracy) << "\n";
  std::cout << "wall_clock_seconds=" << fmt_real(secs) << "\n";
  std::cout << "checkpoint=" << a.out_ckpt << "\n";
  std::cout << "report=" << a.report << "\n";
  return kOk;
}

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string split = "test";
};

inline int cmd_eval(const EvalArgs& a) {
  auto loaded = load_checkpoint(a.ckpt);
  auto params = restore_model<double>(loaded, a.ckpt);
  auto ds = load_dataset<double>(a.data, std::filesystem::path(a.data) / "manifest.csv");
  if (ds.regions() != loaded.config.regions) {
    throw CheckpointError("checkpoint " + a.ckpt + " was trained with " +
                          std::to_string(loaded.config.regions) + " regions, dataset has " +
                          std::to_string(ds.regions()));
  }
  const std::vector<std::size_t>* split = nullptr;
  if (a.split == "train") {
    split = &ds.train_indices;
  } else if (a.split == "test") {
    split = &ds.test_indices;
  } else {
    throw ConfigError("eval: unknown split '" + a.split + "' (expected train or test)");
  }
  if (split->empty()) {
    throw ConfigError("eval: split '" + a.split + "' is empty");
  }
  const Metrics m = evaluate(params, ds, *split, loaded.config);
  if (m.auc_degenerate) {
    std::cerr << "warning: single-class split, auc reported as 0.5\n";
  }
  std::cout << "accuracy=" << fmt_real(m.accuracy) << "\n";
  std::cout << "auc=" << fmt_real(m.auc) << "\n";
  std::cout << "recall=" << fmt_real(m.recall) << "\n";
  std::cout << "precision=" << fmt_real(m.precision) << "\n";
  return kOk;
}

struct GradCheckArgs {
  std::string config;
  bool inject_fault = false;
};

inline int cmd_gradcheck(const GradCheckArgs& a) {
  Config cfg = parse_config_file(a.config);
  FaultInjection::reset();
  if (a.inject_fault) {
    FaultInjection::sigmoid_adjoint_scale = 1.5;
    std::cout << "fault.injected=sigmoid\n";
  }
  auto results = run_gradcheck_suite(cfg);
  FaultInjection::reset();
  // no-dead-branch assertion: every parameter tensor must receive gradient
  {
    auto params = ModelParams<double>::init(cfg, cfg.regions);
    const auto dead = dead_parameters(params, cfg);
    std::cout << "gradcheck.dead_parameters=" << dead.size() << "\n";
    if (!dead.empty()) {
      for (const auto& name : dead) std::cout << "gradcheck.dead=" << name << "\n";
      std::cout << "gradcheck.status=fail\n";
      return kVerificationFailure;
    }
  }
  double max_err = 0;
  std::vector<std::string> failures;
  for (const auto& r : results) {
    std::cout << "gradcheck." << r.module << "=" << fmt_real(r.report.max_rel_err) << "\n";
    if (r.probe_redraws > 0) {
      std::cout << "gradcheck." << r.module
                << ".probe_redraws=" << std::to_string(r.probe_redraws) << "\n";
    }
    max_err = std::max(max_err, r.report.max_rel_err);
    if (!(r.report.max_rel_err < kGradCheckThreshold) || r.report.kink_crossings > 0) {
      failures.push_back(r.module + ":" + r.report.worst_param + "[" +
                         std::to_string(r.report.worst_index) + "]");
    }
  }
  std::cout << "gradcheck.max=" << fmt_real(max_err) << "\n";
  std::cout << "gradcheck.threshold=" << fmt_real(kGradCheckThreshold) << "\n";
  if (!failures.empty()) {
    std::cout << "gradcheck.status=fail\n";
    for (const auto& f : failures) std::cout << "gradcheck.offending=" << f << "\n";
    return kVerificationFailure;
  }
  std::cout << "gradcheck.status=pass\n";
  return kOk;
}

}  // namespace cli

inline int cli_main(int argc, char** argv) {
  CLI::App app{"dynamic-graph attention classifier for multivariate time series"};
  app.require_subcommand(1);

  cli::SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--subjects", synth_args.subjects, "number of subjects");
  synth->add_option("--regions", synth_args.regions, "regions per subject");
  synth->add_option("--timepoints", synth_args.timepoints, "timepoints per subject");
  synth->add_option("--coupling", synth_args.coupling, "coupling strength (0 = no class signal)");
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--plant-window", synth_args.plant_window, "planting window size");
  synth->add_option("--train-fraction", synth_args.train_fraction, "fraction of subjects in train");

  cli::TrainArgs train_args;
  std::uint64_t seed_flag = 0;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", train_args.data, "dataset directory (with manifest.csv)")
      ->required();
  train_cmd->add_option("--config", train_args.config, "key=value config file")->required();
  train_cmd->add_option("--out", train_args.out_ckpt, "checkpoint output path")->required();
  train_cmd->add_option("--report", train_args.report, "run report output path")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed_flag, "override config seed");

  cli::EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", eval_args.data, "dataset directory")->required();
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--split", eval_args.split, "split to evaluate (train|test)");

  cli::GradCheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "verify gradients by finite differences");
  gc_cmd->add_option("--config", gc_args.config, "key=value config file")->required();
  gc_cmd->add_flag("--inject-fault", gc_args.inject_fault,
                   "corrupt one adjoint to prove the check catches it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsageError;
  }

  try {
    if (synth->parsed()) return cli::cmd_synth(synth_args);
    if (train_cmd->parsed()) {
      if (*seed_opt) train_args.seed_override = seed_flag;
      return cli::cmd_train(train_args);
    }
    if (eval_cmd->parsed()) return cli::cmd_eval(eval_args);
    if (gc_cmd->parsed()) return cli::cmd_gradcheck(gc_args);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsageError;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsageError;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsageError;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsageError;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsageError;
  }
  return cli::kUsageError;
}

}  // namespace dgnc
