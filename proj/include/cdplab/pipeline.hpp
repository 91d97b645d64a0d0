#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdplab/config.hpp"
#include "cdplab/dataset.hpp"
#include "cdplab/rocstat.hpp"

namespace cdp {

struct PipelineOptions {
  int threads = 0;  // 0 = hardware default
  // Restrict simulate/attack/score to these printers/devices (empty = all).
  std::vector<std::string> printer_filter;
  std::vector<std::string> device_filter;
  // Dotted-path assignments applied on top of the stored dataset config.
  std::vector<std::string> config_overrides;
  bool write_run_record = true;
};

/// Generates templates, splits the dataset and writes manifest + config into
/// out_dir. Rerunning with the same config is byte-identical.
void run_gen(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
             const PipelineOptions& opt = {});

/// Prints every template on every (filtered) printer and captures every
/// instance with every (filtered) device; runs capture quality control and
/// records it in the manifest.
void run_simulate(const std::filesystem::path& dataset_dir, const PipelineOptions& opt = {});

/// Estimates templates from attacker captures of the physical originals,
/// reprints them as fakes and captures the fakes.
void run_attack(const std::filesystem::path& dataset_dir, const PipelineOptions& opt = {});

/// Trains the synthesis generator for one (printer, device) cell on the
/// train split. Returns the final checkpoint path.
std::filesystem::path run_train(const std::filesystem::path& dataset_dir,
                                const std::string& printer_id, const std::string& device_id,
                                const PipelineOptions& opt = {});

/// Synthesizes one image per held-out template from a trained checkpoint.
void run_synth(const std::filesystem::path& checkpoint,
               const std::filesystem::path& dataset_dir, const PipelineOptions& opt = {});

/// Registers every probe capture and scores it against the configured
/// references and metrics. Writes scores.csv and align_failures.csv.
std::filesystem::path run_score(const std::filesystem::path& dataset_dir,
                                const PipelineOptions& opt = {});

struct EvaluateOutcome {
  AucTable table;
  std::vector<std::string> check_lines;  // one line per asserted property
  bool checks_passed = true;             // meaningful in check mode
};

/// Builds auc_table.json, per-cell histograms and ROC SVGs under
/// dataset/eval. In check mode also asserts the built-in separability
/// properties (enrollment perfection, ladder monotonicity, synthetic
/// improvement on the held-out split) and reports one line per check.
EvaluateOutcome run_evaluate(const std::filesystem::path& dataset_dir, bool check_mode,
                             const PipelineOptions& opt = {});

/// Tunes the device ladder: per-device psf_sigma bisection towards
/// template-reference AUC targets spaced linearly over [target_lo, target_hi]
/// in ladder order, then QC thresholds from a clean run. Writes the tuned
/// config and returns it.
ExperimentConfig run_calibrate(const ExperimentConfig& base, double target_lo,
                               double target_hi,
                               const std::optional<std::filesystem::path>& out_config,
                               const PipelineOptions& opt = {});

/// Quick template-reference AUC probe for one cell (used by calibration):
/// originals vs Otsu-attack fakes, one capture each, n_templates samples.
double quick_auc_t(const ExperimentConfig& cfg, const PrinterProfile& printer,
                   const DeviceProfile& device, int n_templates, std::uint64_t seed,
                   int threads);

/// The designated enrollment repetition for a capture group: the first
/// QC-kept repetition, or nullopt when every repetition was discarded.
std::optional<int> enrollment_rep(const DatasetManifest& manifest, const DatasetPaths& paths,
                                  const std::string& printer_id, const std::string& device_id,
                                  int template_id, int instance, int n_reps);

}  // namespace cdp
