#include "cdplab/imageops.hpp"

#include <algorithm>
#include <cmath>

namespace cdp {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = w;
    sum += w;
  }
  for (double& w : k) w /= sum;
  return k;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int rows = static_cast<int>(src.rows());
  const int cols = static_cast<int>(src.cols());

  Image tmp(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * src(r, clampi(c + i, 0, cols - 1));
      tmp(r, c) = acc;
    }
  }
  Image out(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp(clampi(r + i, 0, rows - 1), c);
      out(r, c) = acc;
    }
  }
  return out;
}

Image resample_bilinear(const Image& src, int out_rows, int out_cols) {
  if (out_rows < 1 || out_cols < 1)
    throw InvalidArgument("resample_bilinear: output size must be positive");
  const double sy = static_cast<double>(src.rows()) / out_rows;
  const double sx = static_cast<double>(src.cols()) / out_cols;
  Image out(out_rows, out_cols);
  const int h = static_cast<int>(src.rows()), w = static_cast<int>(src.cols());
  for (int r = 0; r < out_rows; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = clampi(y0, 0, h - 1), y1c = clampi(y0 + 1, 0, h - 1);
    for (int c = 0; c < out_cols; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = clampi(x0, 0, w - 1), x1c = clampi(x0 + 1, 0, w - 1);
      double top = src(y0c, x0c) * (1.0 - wx) + src(y0c, x1c) * wx;
      double bot = src(y1c, x0c) * (1.0 - wx) + src(y1c, x1c) * wx;
      out(r, c) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

Image sample_grid_offset(const Image& src, int rows, int cols, double dy, double dx) {
  if (rows < 1 || cols < 1)
    throw InvalidArgument("sample_grid_offset: output size must be positive");
  const double sy = static_cast<double>(src.rows()) / rows;
  const double sx = static_cast<double>(src.cols()) / cols;
  Image out(rows, cols);
  const int h = static_cast<int>(src.rows()), w = static_cast<int>(src.cols());
  for (int r = 0; r < rows; ++r) {
    double fy = (r + 0.5) * sy - 0.5 + dy;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = clampi(y0, 0, h - 1), y1c = clampi(y0 + 1, 0, h - 1);
    for (int c = 0; c < cols; ++c) {
      double fx = (c + 0.5) * sx - 0.5 + dx;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = clampi(x0, 0, w - 1), x1c = clampi(x0 + 1, 0, w - 1);
      double top = src(y0c, x0c) * (1.0 - wx) + src(y0c, x1c) * wx;
      double bot = src(y1c, x0c) * (1.0 - wx) + src(y1c, x1c) * wx;
      out(r, c) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

Image min_filter3(const Image& src) {
  const int rows = static_cast<int>(src.rows());
  const int cols = static_cast<int>(src.cols());
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double m = src(r, c);
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j)
          m = std::min(m, src(clampi(r + i, 0, rows - 1), clampi(c + j, 0, cols - 1)));
      out(r, c) = m;
    }
  }
  return out;
}

Image shift_integer(const Image& src, int dy, int dx) {
  const int rows = static_cast<int>(src.rows());
  const int cols = static_cast<int>(src.cols());
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out(r, c) = src(clampi(r - dy, 0, rows - 1), clampi(c - dx, 0, cols - 1));
  return out;
}

double laplacian_variance(const Image& img) {
  const int rows = static_cast<int>(img.rows());
  const int cols = static_cast<int>(img.cols());
  if (rows < 3 || cols < 3)
    throw InvalidArgument("laplacian_variance: image must be at least 3x3");
  double sum = 0.0, sum2 = 0.0;
  const double n = static_cast<double>((rows - 2) * (cols - 2));
  for (int r = 1; r < rows - 1; ++r) {
    for (int c = 1; c < cols - 1; ++c) {
      double v = img(r - 1, c) + img(r + 1, c) + img(r, c - 1) + img(r, c + 1) -
                 4.0 * img(r, c);
      sum += v;
      sum2 += v * v;
    }
  }
  double mean = sum / n;
  return sum2 / n - mean * mean;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InvalidArgument("percentile: empty input");
  if (p < 0.0 || p > 100.0) throw InvalidArgument("percentile: p out of [0, 100]");
  std::sort(values.begin(), values.end());
  double idx = p / 100.0 * (static_cast<double>(values.size()) - 1.0);
  std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
  double frac = idx - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double contrast_range(const Image& img) {
  std::vector<double> v(img.data(), img.data() + img.size());
  return percentile(v, 99.0) - percentile(std::move(v), 1.0);
}

void add_gaussian_noise(Image& img, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  double* p = img.data();
  const auto n = img.size();
  for (Eigen::Index i = 0; i < n; ++i) p[i] += sigma * rng.normal();
}

}  // namespace cdp
