#pragma once

#include <vector>

#include "cdplab/image.hpp"
#include "cdplab/rng.hpp"

namespace cdp {

/// Separable Gaussian blur with replicated borders. sigma <= 0 is identity.
/// Kernel radius is ceil(3*sigma), weights normalized to sum 1.
Image gaussian_blur(const Image& src, double sigma);

/// Bilinear resampling onto an out_rows x out_cols grid, pixel centers
/// aligned ((u + 0.5) * in/out - 0.5), edge-clamped.
Image resample_bilinear(const Image& src, int out_rows, int out_cols);

/// Samples `src` onto a rows x cols grid with a source-space translation:
/// source coordinate = (u + 0.5) * src_rows/rows - 0.5 + dy (same for x).
/// Bilinear, edge-clamped. dy/dx are in source pixels.
Image sample_grid_offset(const Image& src, int rows, int cols, double dy, double dx);

/// 3x3 min filter (gray-level erosion of the bright phase), replicated borders.
Image min_filter3(const Image& src);

/// Integer translation by (dy, dx); vacated border replicates edge values.
Image shift_integer(const Image& src, int dy, int dx);

/// Variance of the 4-neighbour Laplacian over the interior. Sharpness proxy.
double laplacian_variance(const Image& img);

/// Linear-interpolated percentile, p in [0, 100]. Copies and sorts.
double percentile(std::vector<double> values, double p);

/// p-th intensity spread: percentile(img, 99) - percentile(img, 1).
double contrast_range(const Image& img);

/// Adds i.i.d. Gaussian noise, row-major draw order. sigma <= 0 is identity.
void add_gaussian_noise(Image& img, double sigma, Rng& rng);

inline void clamp01(Image& img) { img = img.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace cdp
