#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "cdplab/channel.hpp"
#include "cdplab/image.hpp"
#include "cdplab/pix2pix.hpp"

namespace cdp {

/// Template estimator used by the counterfeiter.
struct EstimatorSpec {
  enum class Kind { threshold_otsu, learned_unet };
  Kind kind = Kind::threshold_otsu;

  // learned_unet only
  std::shared_ptr<const px::UNet> network;
  double threshold = 0.5;

  void validate() const;
};

/// Otsu threshold over a 256-bin intensity histogram. Throws NumericError
/// on a degenerate (single-level) histogram.
double otsu_threshold(const Image& img);

/// Recovers a binary template estimate from a probe that has already been
/// registered to the template grid (dark -> ink). The learned variant runs
/// the network and binarizes its output at the configured threshold.
Template estimate_template(const Image& probe, const EstimatorSpec& est,
                           int template_id = 0);

/// Reprints an estimated template on the attacker's printer. Counterfeit
/// instances always draw fresh microstructure; the original's physical
/// randomness is not reproducible.
PhysicalInstance make_fake(const Template& t_hat, const PrinterProfile& attacker_printer,
                           std::uint64_t instance_seed);

/// Trains a capture -> template estimator network: plain L1 regression on
/// (registered capture, template rendering) pairs, no adversarial term.
px::UNet train_estimator(const std::vector<px::TrainPair>& capture_template_pairs,
                         const px::GeneratorConfig& cfg, int epochs, double learning_rate,
                         std::uint64_t seed);

/// Full attack on one template: capture the victim's physical original with
/// the given device, register it, estimate the template, reprint it.
struct AttackOutcome {
  Template estimated;
  PhysicalInstance fake;
  double bit_error_rate = 0.0;  // vs the true template
};

AttackOutcome attack_template(const Template& true_template,
                              const PhysicalInstance& original,
                              const DeviceProfile& capture_device,
                              const PrinterProfile& attacker_printer,
                              const EstimatorSpec& est, std::uint64_t seed,
                              int align_radius);

}  // namespace cdp
