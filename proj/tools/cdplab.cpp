#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cdplab/config.hpp"
#include "cdplab/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitPipeline = 2;
constexpr int kExitCheckFailed = 3;

std::optional<std::filesystem::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cdplab: a simulation bench for copy-detection-pattern authentication.\n"
      "Generates binary templates, simulates printing and capture, mounts\n"
      "template-estimation attacks, trains a conditional generator, and\n"
      "evaluates reference strategies with ROC/AUC analysis."};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  app.add_option("--config", config_path, "Experiment config JSON (bundled defaults if omitted)");
  app.add_option("--set", overrides,
                 "Override a config field, dotted path (e.g. --set train.lambda_l1=50)");
  app.add_option("--threads", threads, "Worker cap for parallel stages (0 = all cores)");

  std::string dataset, out_dir, printer, device, checkpoint;
  std::vector<std::string> printer_filter, device_filter, references, metrics;
  bool check_mode = false;
  double target_lo = 0.62, target_hi = 0.97;
  std::string calibrate_out;

  auto* gen = app.add_subcommand("gen", "Generate templates, split and manifest");
  gen->add_option("--out", out_dir, "Dataset directory to create")->required();

  auto* simulate = app.add_subcommand("simulate", "Print originals and capture them");
  simulate->add_option("--dataset", dataset)->required();
  simulate->add_option("--printers", printer_filter, "Only these printer ids")->delimiter(',');
  simulate->add_option("--devices", device_filter, "Only these device ids")->delimiter(',');

  auto* attack = app.add_subcommand("attack", "Estimate templates and print fakes");
  attack->add_option("--dataset", dataset)->required();
  attack->add_option("--printers", printer_filter)->delimiter(',');
  attack->add_option("--devices", device_filter)->delimiter(',');

  auto* train = app.add_subcommand("train", "Train the synthesis generator for one cell");
  train->add_option("--dataset", dataset)->required();
  train->add_option("--printer", printer)->required();
  train->add_option("--device", device)->required();

  auto* synth = app.add_subcommand("synth", "Synthesize held-out references from a checkpoint");
  synth->add_option("--dataset", dataset)->required();
  synth->add_option("--checkpoint", checkpoint)->required();

  auto* score = app.add_subcommand("score", "Register probes and score them");
  score->add_option("--dataset", dataset)->required();
  score->add_option("--printers", printer_filter)->delimiter(',');
  score->add_option("--devices", device_filter)->delimiter(',');
  score->add_option("--references", references, "Subset of t,xhat,xe")->delimiter(',');
  score->add_option("--metrics", metrics, "Subset of pcorr,ssim")->delimiter(',');

  auto* evaluate = app.add_subcommand("evaluate", "Build the AUC table, histograms and ROC plots");
  evaluate->add_option("--dataset", dataset)->required();
  evaluate->add_option("--printers", printer_filter)->delimiter(',');
  evaluate->add_option("--devices", device_filter)->delimiter(',');
  evaluate->add_flag("--check", check_mode, "Assert separability properties (exit 3 on failure)");

  auto* calibrate = app.add_subcommand("calibrate", "Tune the device ladder and QC floors");
  calibrate->add_option("--out", calibrate_out, "Where to write the tuned config")->required();
  calibrate->add_option("--target-lo", target_lo, "Template-reference AUC at the worst device");
  calibrate->add_option("--target-hi", target_hi, "Template-reference AUC at the best device");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  cdp::PipelineOptions opt;
  opt.threads = threads;
  opt.printer_filter = printer_filter;
  opt.device_filter = device_filter;
  opt.config_overrides = overrides;

  // Friendlier spellings for common score overrides.
  if (!references.empty()) {
    std::string list = "[";
    for (std::size_t i = 0; i < references.size(); ++i)
      list += (i ? ",\"" : "\"") + references[i] + "\"";
    opt.config_overrides.push_back("score.references=" + list + "]");
  }
  if (!metrics.empty()) {
    std::string list = "[";
    for (std::size_t i = 0; i < metrics.size(); ++i)
      list += (i ? ",\"" : "\"") + metrics[i] + "\"";
    opt.config_overrides.push_back("score.metrics=" + list + "]");
  }

  try {
    if (gen->parsed()) {
      const auto cfg = cdp::ExperimentConfig::load(optional_path(config_path),
                                                   opt.config_overrides);
      cdp::run_gen(cfg, out_dir, opt);
      std::cout << "dataset written to " << out_dir << "\n";
    } else if (simulate->parsed()) {
      cdp::run_simulate(dataset, opt);
    } else if (attack->parsed()) {
      cdp::run_attack(dataset, opt);
    } else if (train->parsed()) {
      const auto ckpt = cdp::run_train(dataset, printer, device, opt);
      std::cout << "checkpoint: " << ckpt.string() << "\n";
    } else if (synth->parsed()) {
      cdp::run_synth(checkpoint, dataset, opt);
    } else if (score->parsed()) {
      const auto csv = cdp::run_score(dataset, opt);
      std::cout << "scores: " << csv.string() << "\n";
    } else if (evaluate->parsed()) {
      const auto outcome = cdp::run_evaluate(dataset, check_mode, opt);
      for (const auto& line : outcome.check_lines) std::cout << line << "\n";
      std::cout << "auc cells: " << outcome.table.cells.size()
                << ", missing: " << outcome.table.missing.size() << "\n";
      if (check_mode && !outcome.checks_passed) return kExitCheckFailed;
    } else if (calibrate->parsed()) {
      const auto base = cdp::ExperimentConfig::load(optional_path(config_path),
                                                    opt.config_overrides);
      cdp::run_calibrate(base, target_lo, target_hi,
                         std::filesystem::path(calibrate_out), opt);
      std::cout << "tuned config written to " << calibrate_out << "\n";
    }
  } catch (const cdp::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cdp::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitOk;
}
