#include "cdplab/metrics.hpp"

#include <vector>

namespace cdp {

namespace {

std::vector<double> window_weights_1d(SsimParams::Window w) {
  if (w == SsimParams::Window::gaussian11) {
    std::vector<double> k(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      double d = i - 5.0;
      k[i] = std::exp(-0.5 * d * d / (1.5 * 1.5));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
  }
  return std::vector<double>(8, 1.0 / 8.0);
}

// Separable weighted local sums over fully-valid positions.
// out is (rows - side + 1) x (cols - side + 1).
Image filter_valid(const Image& src, const std::vector<double>& k) {
  const int side = static_cast<int>(k.size());
  const int rows = static_cast<int>(src.rows());
  const int cols = static_cast<int>(src.cols());
  const int out_c = cols - side + 1;
  const int out_r = rows - side + 1;

  Image horiz(rows, out_c);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < out_c; ++c) {
      double acc = 0.0;
      for (int i = 0; i < side; ++i) acc += k[i] * src(r, c + i);
      horiz(r, c) = acc;
    }
  }
  Image out(out_r, out_c);
  for (int c = 0; c < out_c; ++c) {
    for (int r = 0; r < out_r; ++r) {
      double acc = 0.0;
      for (int i = 0; i < side; ++i) acc += k[i] * horiz(r + i, c);
      out(r, c) = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimParams& params) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidArgument("ssim: shape mismatch");
  if (params.k1 <= 0.0 || params.k2 <= 0.0)
    throw InvalidArgument("ssim: k1 and k2 must be positive");
  const int side = params.side();
  if (a.rows() < side || a.cols() < side)
    throw InvalidArgument("ssim: image smaller than the " + std::to_string(side) +
                          "x" + std::to_string(side) + " window");

  const auto k = window_weights_1d(params.window);
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);

  const Image mu_a = filter_valid(a, k);
  const Image mu_b = filter_valid(b, k);
  const Image s_aa = filter_valid(a * a, k);
  const Image s_bb = filter_valid(b * b, k);
  const Image s_ab = filter_valid(a * b, k);

  double total = 0.0;
  const Eigen::Index n = mu_a.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ma = mu_a(i), mb = mu_b(i);
    const double va = s_aa(i) - ma * ma;
    const double vb = s_bb(i) - mb * mb;
    const double cov = s_ab(i) - ma * mb;
    const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
    const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(n);
}

}  // namespace cdp
