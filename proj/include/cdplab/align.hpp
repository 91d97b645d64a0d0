#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdplab/image.hpp"

namespace cdp {

struct RegisterResult {
  Image aligned;   // capture resampled to the template grid at the best shift
  int dx = 0;      // estimated framing shift, capture pixels
  int dy = 0;
  double peak = 0.0;  // pcorr against the template over the valid region
  int margin = 0;     // template-grid border to crop before scoring
};

/// Undoes the acquisition geometry: exhaustive integer shift search in
/// capture-pixel units over [-radius, radius]^2, each candidate scored by
/// correlation of the resampled capture against the template over the
/// margin-cropped region. Ties broken by smaller ||(dx,dy)|| then
/// lexicographically by (dx, dy). Throws RegistrationFailed when the best
/// peak is below peak_floor.
RegisterResult register_capture(const Image& capture, const Template& t,
                                int search_radius, double peak_floor = 0.05);

/// Crops `margin` pixels from every side.
Image crop_margin(const Image& img, int margin);

struct RegisterFailure {
  std::size_t index;
  int template_id;
  double peak;
  std::string reason;
};

struct BatchRegisterOutcome {
  std::vector<std::optional<RegisterResult>> results;  // nullopt where failed
  std::vector<RegisterFailure> failures;
};

/// Registers each capture against its template; failures are recorded, not
/// thrown. captures[i] is matched with templates[i].
BatchRegisterOutcome batch_register(const std::vector<Image>& captures,
                                    const std::vector<const Template*>& templates,
                                    int search_radius, double peak_floor = 0.05);

}  // namespace cdp
