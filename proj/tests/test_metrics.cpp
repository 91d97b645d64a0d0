#include <doctest.h>

#include <cmath>
#include <vector>

#include "cdplab/metrics.hpp"
#include "cdplab/rng.hpp"

using namespace cdp;

namespace {

Image random_image(Rng& rng, int rows, int cols) {
  Image img(rows, cols);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
  return img;
}

// Textbook single-pass formula, independent of the two-pass implementation.
double pcorr_oracle(const Image& a, const Image& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

// Direct per-window SSIM evaluation over every valid position.
double ssim_oracle(const Image& a, const Image& b, const SsimParams& p) {
  const int side = p.side();
  std::vector<double> w(static_cast<std::size_t>(side) * side);
  if (p.window == SsimParams::Window::gaussian11) {
    double sum = 0.0;
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        const double di = i - (side - 1) / 2.0;
        const double dj = j - (side - 1) / 2.0;
        w[i * side + j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
        sum += w[i * side + j];
      }
    for (auto& v : w) v /= sum;
  } else {
    for (auto& v : w) v = 1.0 / (side * side);
  }
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  double total = 0.0;
  long count = 0;
  for (int r = 0; r + side <= a.rows(); ++r) {
    for (int c = 0; c + side <= a.cols(); ++c) {
      double mu_a = 0, mu_b = 0;
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          mu_a += w[i * side + j] * a(r + i, c + j);
          mu_b += w[i * side + j] * b(r + i, c + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
          const double da = a(r + i, c + j) - mu_a;
          const double db = b(r + i, c + j) - mu_b;
          va += w[i * side + j] * da * da;
          vb += w[i * side + j] * db * db;
          cov += w[i * side + j] * da * db;
        }
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("pcorr identity and orthogonal cases") {
  Rng rng(1);
  Image a = random_image(rng, 16, 16);
  CHECK(pcorr(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  Image u(2, 2), v(2, 2);
  u << 0, 0, 1, 1;
  v << 0, 1, 0, 1;
  CHECK(pcorr(u, v) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pcorr matches the textbook formula oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 25; ++trial) {
    const int rows = 4 + static_cast<int>(rng.below(30));
    const int cols = 4 + static_cast<int>(rng.below(30));
    Image a = random_image(rng, rows, cols);
    Image b = random_image(rng, rows, cols);
    CHECK(pcorr(a, b) == doctest::Approx(pcorr_oracle(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("pcorr error and degenerate cases") {
  Image a = Image::Constant(4, 4, 0.3);
  Image b = Image::Constant(4, 4, 0.8);
  CHECK_THROWS_AS(pcorr(a, b), UndefinedCorrelation);

  Image c(4, 4);
  Rng rng(3);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
  CHECK(pcorr(a, c) == 0.0);  // one constant side carries no correlation

  Image wrong(3, 4);
  CHECK_THROWS_AS(pcorr(wrong, c), InvalidArgument);
}

TEST_CASE("pcorr positive-affine invariance, sign flip for negative scale") {
  Rng rng(4);
  Image a = random_image(rng, 12, 12);
  Image b = random_image(rng, 12, 12);
  CHECK(pcorr_affine_gap(a, b, 2.0, 0.1) <= 1e-10);
  CHECK(pcorr_affine_gap(a, b, -1.0, 0.0) <= 1e-10);
  for (int trial = 0; trial < 100; ++trial) {
    const double alpha = (rng.uniform() - 0.5) * 4.0;
    if (std::abs(alpha) < 1e-3) continue;
    const double beta = (rng.uniform() - 0.5) * 2.0;
    CHECK(pcorr_affine_gap(a, b, alpha, beta) <= 1e-10);
  }
}

TEST_CASE("pcorr symmetry and bounds") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Image a = random_image(rng, 8, 8);
    Image b = random_image(rng, 8, 8);
    const double ab = pcorr(a, b);
    CHECK(ab == doctest::Approx(pcorr(b, a)).epsilon(1e-14));
    CHECK(ab <= 1.0 + 1e-12);
    CHECK(ab >= -1.0 - 1e-12);
  }
}

TEST_CASE("ssim identity is 1") {
  Rng rng(6);
  Image a = random_image(rng, 16, 16);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  SsimParams uniform;
  uniform.window = SsimParams::Window::uniform8;
  CHECK(ssim(a, a, uniform) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of two distinct constants has the closed form") {
  const double c1v = 0.25, c2v = 0.75;
  Image a = Image::Constant(16, 16, c1v);
  Image b = Image::Constant(16, 16, c2v);
  SsimParams p;
  const double C1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double expected = (2 * c1v * c2v + C1) / (c1v * c1v + c2v * c2v + C1);
  CHECK(ssim(a, b, p) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ssim matches per-window brute force on random pairs") {
  Rng rng(7);
  SsimParams gaussian;
  SsimParams uniform;
  uniform.window = SsimParams::Window::uniform8;
  for (int trial = 0; trial < 50; ++trial) {
    Image a = random_image(rng, 16, 16);
    Image b = random_image(rng, 16, 16);
    CHECK(ssim(a, b, gaussian) ==
          doctest::Approx(ssim_oracle(a, b, gaussian)).epsilon(1e-10));
    if (trial < 10)
      CHECK(ssim(a, b, uniform) ==
            doctest::Approx(ssim_oracle(a, b, uniform)).epsilon(1e-10));
  }
}

TEST_CASE("ssim symmetry and bounds") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Image a = random_image(rng, 14, 14);
    Image b = random_image(rng, 14, 14);
    const double s = ssim(a, b);
    CHECK(s == doctest::Approx(ssim(b, a)).epsilon(1e-13));
    CHECK(s <= 1.0 + 1e-12);
    CHECK(s >= -1.0 - 1e-12);
  }
}

TEST_CASE("ssim rejects undersized images") {
  Image small(8, 8);
  small.setConstant(0.5);
  CHECK_THROWS_AS(ssim(small, small), InvalidArgument);  // gaussian11 needs 11
  Image tiny(7, 7);
  tiny.setConstant(0.5);
  SsimParams uniform;
  uniform.window = SsimParams::Window::uniform8;
  CHECK_THROWS_AS(ssim(tiny, tiny, uniform), InvalidArgument);
}

TEST_SUITE_END();
