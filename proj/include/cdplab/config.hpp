#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdplab/channel.hpp"
#include "cdplab/metrics.hpp"
#include "cdplab/pix2pix.hpp"
#include "cdplab/rocstat.hpp"

namespace cdp {

struct DatasetConfig {
  int n_templates = 144;
  int template_size = 64;
  double black_fraction = 0.5;
  double train_fraction = 0.278;
};

struct CaptureConfig {
  int n_reps = 3;
  int n_instances = 1;
};

struct AttackConfig {
  std::string estimator = "otsu";  // "otsu" or "unet"
  std::string capture_device = "epson";
  double unet_threshold = 0.5;
  int estimator_epochs = 30;
  double estimator_learning_rate = 2e-4;
};

struct AlignSection {
  int radius_margin = 1;  // search radius = device jitter + margin
  double peak_floor = 0.05;
};

struct TrainSection {
  int depth = 4;
  int base_channels = 32;
  int disc_layers = 3;
  int disc_base_channels = 32;
  double adv_weight = 1.0;
  double lambda_l1 = 100.0;
  double extra_l2_weight = 0.0;
  double extra_ssim_weight = 0.0;
  int epochs = 200;
  int batch_size = 1;
  int n_pairs = 40;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int checkpoint_every = 50;
};

struct ScoreSection {
  std::vector<Reference> references{Reference::t, Reference::xhat, Reference::xe};
  std::vector<Metric> metrics{Metric::pcorr, Metric::ssim};
  std::string ssim_window = "gaussian11";  // or "uniform8"

  SsimParams ssim_params() const;
};

struct EvaluateSection {
  int histogram_bins = 30;
};

/// The single experiment configuration: everything a pipeline run needs.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetConfig dataset;
  CaptureConfig capture;
  std::vector<PrinterProfile> printers;
  std::vector<DeviceProfile> devices;
  AttackConfig attack;
  AlignSection align;
  TrainSection train;
  ScoreSection score;
  EvaluateSection evaluate;

  /// Bundled defaults: HPI55/HPI76 printers and the seven-device ladder.
  static ExperimentConfig defaults();

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  void save(const std::filesystem::path& path) const;

  /// Loads a config file (or the bundled defaults when path is empty),
  /// applies dotted-path overrides ("train.lambda_l1=50"), then the
  /// CDP_LAB_SEED environment variable when present.
  static ExperimentConfig load(const std::optional<std::filesystem::path>& path,
                               const std::vector<std::string>& overrides = {},
                               bool apply_env_seed = true);

  void validate() const;

  const PrinterProfile& printer(const std::string& id) const;
  const DeviceProfile& device(const std::string& id) const;

  /// Devices ordered from lowest to highest effective resolution
  /// (decreasing psf_sigma).
  std::vector<const DeviceProfile*> resolution_ladder() const;

  px::TrainConfig train_config() const;
};

/// Applies one "a.b.c=value" override to a JSON document. Values parse as
/// JSON when possible and fall back to strings.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace cdp
