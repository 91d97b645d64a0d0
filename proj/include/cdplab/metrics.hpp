#pragma once

#include <cmath>

#include "cdplab/image.hpp"

namespace cdp {

/// Pearson correlation over flattened pixels. Two-pass mean subtraction,
/// 64-bit accumulation. Accepts any same-shaped Eigen array expressions.
///
/// A pair of constant images has no defined correlation and throws
/// UndefinedCorrelation. If exactly one side is constant the coefficient is
/// taken as 0 (a constant image carries no correlation).
template <class A, class B>
double pcorr(const Eigen::ArrayBase<A>& a_expr, const Eigen::ArrayBase<B>& b_expr) {
  const Image a = a_expr.template cast<double>();
  const Image b = b_expr.template cast<double>();
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument("pcorr: shape mismatch " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                          "x" + std::to_string(b.cols()));
  if (a.size() < 2) throw InvalidArgument("pcorr: need at least 2 pixels");

  const double ma = a.mean();
  const double mb = b.mean();
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double da = pa[i] - ma;
    const double db = pb[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa == 0.0 && sbb == 0.0)
    throw UndefinedCorrelation("pcorr: both images are constant");
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

struct SsimParams {
  enum class Window { gaussian11, uniform8 };
  Window window = Window::gaussian11;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  int side() const { return window == Window::gaussian11 ? 11 : 8; }
};

/// Mean structural similarity over all fully-valid window positions (no
/// padding). gaussian11 is an 11x11 sigma-1.5 window; uniform8 is a flat 8x8.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

/// Property-test helper: deviation of pcorr from positive-affine invariance,
/// |pcorr(alpha*a + beta, b) - sign(alpha)*pcorr(a, b)|.
template <class A, class B>
double pcorr_affine_gap(const Eigen::ArrayBase<A>& a, const Eigen::ArrayBase<B>& b,
                        double alpha, double beta) {
  if (alpha == 0.0) throw InvalidArgument("pcorr_affine_gap: alpha must be nonzero");
  const double sign = alpha > 0.0 ? 1.0 : -1.0;
  const Image scaled = alpha * a.template cast<double>() + beta;
  return std::abs(pcorr(scaled, b) - sign * pcorr(a, b));
}

}  // namespace cdp
