#include "cdplab/align.hpp"

#include <cmath>

#include "cdplab/imageops.hpp"
#include "cdplab/metrics.hpp"

namespace cdp {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

struct TapTable {
  std::vector<int> i0;
  std::vector<double> w;  // weight of the i0+1 tap
};

// Bilinear taps for mapping template-grid index u to source coordinate
// (u + 0.5) * scale - 0.5. Integer shifts move i0 without changing w.
TapTable make_taps(int out_n, double scale) {
  TapTable t;
  t.i0.resize(out_n);
  t.w.resize(out_n);
  for (int u = 0; u < out_n; ++u) {
    double f = (u + 0.5) * scale - 0.5;
    int i0 = static_cast<int>(std::floor(f));
    t.i0[u] = i0;
    t.w[u] = f - i0;
  }
  return t;
}

}  // namespace

Image crop_margin(const Image& img, int margin) {
  if (margin <= 0) return img;
  const auto rows = img.rows() - 2 * margin;
  const auto cols = img.cols() - 2 * margin;
  if (rows < 1 || cols < 1)
    throw InvalidArgument("crop_margin: margin consumes the whole image");
  return img.block(margin, margin, rows, cols);
}

RegisterResult register_capture(const Image& capture, const Template& t,
                                int search_radius, double peak_floor) {
  if (search_radius < 0) throw InvalidArgument("register_capture: negative radius");
  const int th = t.height(), tw = t.width();
  if (capture.rows() < 4 || capture.cols() < 4 || th < 4 || tw < 4)
    throw InvalidArgument("register_capture: inputs too small");

  const int ch = static_cast<int>(capture.rows());
  const int cw = static_cast<int>(capture.cols());
  const double sy = static_cast<double>(ch) / th;
  const double sx = static_cast<double>(cw) / tw;
  const double s_min = std::min(sx, sy);

  const int margin = static_cast<int>(std::ceil((search_radius + 1.0) / s_min));
  const int rh = th - 2 * margin, rw = tw - 2 * margin;
  if (rh < 8 || rw < 8)
    throw InvalidArgument("register_capture: search radius too large for template size");

  const Image t_img = t.to_image();

  // Template statistics over the scored region.
  double sum_t = 0.0, sum_tt = 0.0;
  for (int u = margin; u < th - margin; ++u)
    for (int v = margin; v < tw - margin; ++v) {
      const double tv = t_img(u, v);
      sum_t += tv;
      sum_tt += tv * tv;
    }
  const double n = static_cast<double>(rh) * rw;

  const TapTable ty = make_taps(th, sy);
  const TapTable tx = make_taps(tw, sx);

  double best_corr = -2.0;
  int best_dx = 0, best_dy = 0;
  std::vector<double> row_vals(static_cast<std::size_t>(rw));

  for (int dy = -search_radius; dy <= search_radius; ++dy) {
    for (int dx = -search_radius; dx <= search_radius; ++dx) {
      double sum_s = 0.0, sum_ss = 0.0, sum_st = 0.0;
      for (int u = margin; u < th - margin; ++u) {
        const int y0 = clampi(ty.i0[u] + dy, 0, ch - 1);
        const int y1 = clampi(ty.i0[u] + 1 + dy, 0, ch - 1);
        const double wy = ty.w[u];
        const double* r0 = capture.data() + static_cast<std::ptrdiff_t>(y0) * cw;
        const double* r1 = capture.data() + static_cast<std::ptrdiff_t>(y1) * cw;
        for (int v = margin; v < tw - margin; ++v) {
          const int x0 = clampi(tx.i0[v] + dx, 0, cw - 1);
          const int x1 = clampi(tx.i0[v] + 1 + dx, 0, cw - 1);
          const double wx = tx.w[v];
          const double top = r0[x0] * (1.0 - wx) + r0[x1] * wx;
          const double bot = r1[x0] * (1.0 - wx) + r1[x1] * wx;
          const double sv = top * (1.0 - wy) + bot * wy;
          sum_s += sv;
          sum_ss += sv * sv;
          sum_st += sv * t_img(u, v);
        }
      }
      const double cov = n * sum_st - sum_s * sum_t;
      const double var_s = n * sum_ss - sum_s * sum_s;
      const double var_t = n * sum_tt - sum_t * sum_t;
      const double denom = var_s * var_t;
      const double corr = denom > 0.0 ? cov / std::sqrt(denom) : 0.0;

      bool better = corr > best_corr;
      if (corr == best_corr) {
        const long n2_new = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
        const long n2_old = static_cast<long>(best_dx) * best_dx +
                            static_cast<long>(best_dy) * best_dy;
        better = n2_new < n2_old ||
                 (n2_new == n2_old &&
                  (dx < best_dx || (dx == best_dx && dy < best_dy)));
      }
      if (better) {
        best_corr = corr;
        best_dx = dx;
        best_dy = dy;
      }
    }
  }

  RegisterResult result;
  result.dx = best_dx;
  result.dy = best_dy;
  result.margin = margin;
  result.aligned = sample_grid_offset(capture, th, tw, best_dy, best_dx);
  result.peak = pcorr(crop_margin(result.aligned, margin), crop_margin(t_img, margin));

  if (result.peak < peak_floor)
    throw RegistrationFailed("register_capture: peak " + std::to_string(result.peak) +
                                 " below floor " + std::to_string(peak_floor) +
                                 " for template " + std::to_string(t.id),
                             result.peak);
  return result;
}

BatchRegisterOutcome batch_register(const std::vector<Image>& captures,
                                    const std::vector<const Template*>& templates,
                                    int search_radius, double peak_floor) {
  if (captures.size() != templates.size())
    throw InvalidArgument("batch_register: size mismatch");
  BatchRegisterOutcome out;
  out.results.resize(captures.size());
  for (std::size_t i = 0; i < captures.size(); ++i) {
    try {
      out.results[i] = register_capture(captures[i], *templates[i], search_radius,
                                        peak_floor);
    } catch (const RegistrationFailed& e) {
      out.failures.push_back({i, templates[i]->id, e.peak(), "low_peak"});
    }
  }
  return out;
}

}  // namespace cdp
