#include "cdplab/channel.hpp"

#include <cmath>

#include "cdplab/imageops.hpp"
#include "cdplab/rng.hpp"

namespace cdp {

void PrinterProfile::validate() const {
  if (id.empty()) throw InvalidArgument("PrinterProfile: empty id");
  if (dot_gain < 0.0 || dot_gain > 1.0)
    throw InvalidArgument("PrinterProfile " + id + ": dot_gain must be in [0, 1]");
  if (instance_noise_sigma < 0.0)
    throw InvalidArgument("PrinterProfile " + id + ": instance_noise_sigma must be >= 0");
  if (print_blur_sigma < 0.0)
    throw InvalidArgument("PrinterProfile " + id + ": print_blur_sigma must be >= 0");
}

void DeviceProfile::validate() const {
  if (id.empty()) throw InvalidArgument("DeviceProfile: empty id");
  if (psf_sigma < 0.0)
    throw InvalidArgument("DeviceProfile " + id + ": psf_sigma must be >= 0");
  if (acq_noise_sigma < 0.0)
    throw InvalidArgument("DeviceProfile " + id + ": acq_noise_sigma must be >= 0");
  if (gamma <= 0.0)
    throw InvalidArgument("DeviceProfile " + id + ": gamma must be > 0");
  if (scale_factor < 0.25 || scale_factor > 4.0)
    throw InvalidArgument("DeviceProfile " + id + ": scale_factor must be in [0.25, 4]");
  if (shift_jitter_max < 0)
    throw InvalidArgument("DeviceProfile " + id + ": shift_jitter_max must be >= 0");
}

PhysicalInstance print_template(const Template& t, const PrinterProfile& printer,
                                std::uint64_t instance_seed, ImageRole role) {
  printer.validate();
  if (t.width() < 4 || t.height() < 4)
    throw InvalidArgument("print_template: template too small");
  if (role != ImageRole::original_x && role != ImageRole::fake_f)
    throw InvalidArgument("print_template: role must be original_x or fake_f");

  Image ink = t.to_image();
  if (printer.dot_gain > 0.0) {
    // Ink spreads into neighbouring substrate: darken towards the local min.
    Image eroded = min_filter3(ink);
    ink = (1.0 - printer.dot_gain) * ink + printer.dot_gain * eroded;
  }
  ink = gaussian_blur(ink, printer.print_blur_sigma);

  if (printer.instance_noise_sigma > 0.0) {
    Rng rng(derive_seed(instance_seed, "microstructure"));
    add_gaussian_noise(ink, printer.instance_noise_sigma, rng);
  }
  clamp01(ink);

  PhysicalInstance inst;
  inst.template_id = t.id;
  inst.printer_id = printer.id;
  inst.latent.pixels = std::move(ink);
  inst.latent.role = role;
  inst.latent.template_id = t.id;
  inst.latent.printer_id = printer.id;
  return inst;
}

CaptureResult acquire(const PhysicalInstance& inst, const DeviceProfile& device,
                      std::uint64_t rep_seed) {
  device.validate();
  const Image& latent = inst.latent.pixels;
  if (latent.rows() < 4 || latent.cols() < 4)
    throw InvalidArgument("acquire: latent image too small");

  const int out_rows = static_cast<int>(std::lround(latent.rows() * device.scale_factor));
  const int out_cols = static_cast<int>(std::lround(latent.cols() * device.scale_factor));

  Image cap = (out_rows == latent.rows() && out_cols == latent.cols())
                  ? latent
                  : resample_bilinear(latent, out_rows, out_cols);
  cap = gaussian_blur(cap, device.psf_sigma);
  if (device.gamma != 1.0) cap = cap.pow(device.gamma);

  Rng rng(derive_seed(rep_seed, "acquisition"));
  add_gaussian_noise(cap, device.acq_noise_sigma, rng);

  int dx = 0, dy = 0;
  if (device.shift_jitter_max > 0) {
    dx = static_cast<int>(rng.between(-device.shift_jitter_max, device.shift_jitter_max));
    dy = static_cast<int>(rng.between(-device.shift_jitter_max, device.shift_jitter_max));
    cap = shift_integer(cap, dy, dx);
  }
  clamp01(cap);

  CaptureResult result;
  result.image.pixels = std::move(cap);
  result.image.role = ImageRole::capture_y;
  result.image.template_id = inst.template_id;
  result.image.printer_id = inst.printer_id;
  result.image.device_id = device.id;
  result.image.instance = inst.instance;
  result.true_dx = dx;
  result.true_dy = dy;
  return result;
}

std::vector<CaptureResult> capture_repeats(const PhysicalInstance& inst,
                                           const DeviceProfile& device, int n_reps,
                                           std::uint64_t seed) {
  if (n_reps < 1) throw InvalidArgument("capture_repeats: n_reps must be >= 1");
  std::vector<CaptureResult> out;
  out.reserve(n_reps);
  for (int r = 0; r < n_reps; ++r) {
    auto cap = acquire(inst, device, derive_seed(seed, "rep", {static_cast<std::uint64_t>(r)}));
    cap.image.repetition = r;
    out.push_back(std::move(cap));
  }
  return out;
}

QcOutcome quality_control(const std::vector<Image>& captures, double blur_threshold,
                          double contrast_threshold) {
  if (captures.empty()) throw InvalidArgument("quality_control: empty capture list");
  QcOutcome outcome;
  for (std::size_t i = 0; i < captures.size(); ++i) {
    if (contrast_range(captures[i]) < contrast_threshold) {
      outcome.discarded.push_back({i, "contrast"});
    } else if (laplacian_variance(captures[i]) < blur_threshold) {
      outcome.discarded.push_back({i, "blur"});
    } else {
      outcome.kept.push_back(i);
    }
  }
  return outcome;
}

}  // namespace cdp
