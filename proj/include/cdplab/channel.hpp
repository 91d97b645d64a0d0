#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdplab/image.hpp"

namespace cdp {

/// Parametric print model standing in for an industrial offset printer.
struct PrinterProfile {
  std::string id;
  double dot_gain = 0.15;            // ink spread, blend weight of a 3x3 erosion
  double instance_noise_sigma = 0.1; // per-print microstructure field std
  double print_blur_sigma = 0.6;     // pixels, on the template grid

  void validate() const;
};

/// Parametric acquisition model standing in for a scanner or phone camera.
struct DeviceProfile {
  std::string id;
  double psf_sigma = 0.8;        // optical blur, capture pixels
  double acq_noise_sigma = 0.03; // additive sensor noise std
  double gamma = 1.0;            // tone response exponent
  double scale_factor = 1.0;     // capture pixels per template pixel
  int shift_jitter_max = 2;      // framing shift range, capture pixels

  // Quality-control floors, calibrated per device (capture-resolution units).
  double qc_blur_threshold = 0.0;
  double qc_contrast_threshold = 0.0;

  void validate() const;
};

/// A printed item: the fixed physical realization of one template on one
/// printer. The latent image is created once and shared by all captures.
struct PhysicalInstance {
  int template_id = 0;
  std::string printer_id;
  int instance = 0;
  PhysicalImage latent;  // role original_x or fake_f
};

/// Prints a template: ink map -> dot gain -> press blur -> per-instance
/// microstructure -> clamp. Pure in (template, profile, instance_seed).
PhysicalInstance print_template(const Template& t, const PrinterProfile& printer,
                                std::uint64_t instance_seed,
                                ImageRole role = ImageRole::original_x);

struct CaptureResult {
  PhysicalImage image;  // role capture_y
  int true_dx = 0;      // injected framing shift, capture pixels
  int true_dy = 0;
};

/// Captures an instance: resample to the device grid -> optical blur ->
/// gamma -> sensor noise -> integer framing shift -> clamp. The injected
/// shift is returned for test oracles. rep_seed varies noise and shift only.
CaptureResult acquire(const PhysicalInstance& inst, const DeviceProfile& device,
                      std::uint64_t rep_seed);

/// n_reps independent captures with per-repetition derived seeds.
std::vector<CaptureResult> capture_repeats(const PhysicalInstance& inst,
                                           const DeviceProfile& device, int n_reps,
                                           std::uint64_t seed);

struct QcOutcome {
  struct Discard {
    std::size_t index;
    std::string reason;  // "blur" or "contrast"
  };
  std::vector<std::size_t> kept;
  std::vector<Discard> discarded;
  bool all_discarded() const { return kept.empty(); }
};

/// Flags captures whose Laplacian-variance sharpness or p99-p1 intensity
/// range falls below the thresholds. An all-discarded batch is a warning
/// condition for the caller, not an error.
QcOutcome quality_control(const std::vector<Image>& captures, double blur_threshold,
                          double contrast_threshold);

}  // namespace cdp
