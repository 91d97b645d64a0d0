#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>

#include "cdplab/error.hpp"

namespace cdp {

/// Dense row-major grayscale image. Values live in [0, 1], 0 = black.
template <class Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Image = ImageT<double>;

/// Binary pattern storage, one byte per cell, values in {0, 1}.
using BitMatrix = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class TemplateKind { original, estimated };

/// A binary source pattern. Bit 1 = ink (prints black), bit 0 = substrate.
struct Template {
  int id = 0;
  TemplateKind kind = TemplateKind::original;
  BitMatrix bits;

  int height() const { return static_cast<int>(bits.rows()); }
  int width() const { return static_cast<int>(bits.cols()); }

  /// Renders the pattern as an intensity image: ink -> 0.0, substrate -> 1.0.
  Image to_image() const {
    return 1.0 - bits.cast<double>();
  }

  /// Rebinarizes an intensity image (dark -> ink).
  static Template from_image(const Image& img, int id, TemplateKind kind,
                             double threshold = 0.5) {
    Template t;
    t.id = id;
    t.kind = kind;
    t.bits = (img < threshold).cast<std::uint8_t>();
    return t;
  }

  bool operator==(const Template& o) const {
    return id == o.id && kind == o.kind && bits.rows() == o.bits.rows() &&
           bits.cols() == o.bits.cols() && (bits == o.bits).all();
  }
};

enum class ImageRole { original_x, enrolled_xe, fake_f, synthetic_xhat, capture_y };

std::string to_string(ImageRole role);
ImageRole image_role_from_string(const std::string& s);

/// A continuous grayscale image with full experiment provenance.
struct PhysicalImage {
  Image pixels;
  ImageRole role = ImageRole::capture_y;
  int template_id = 0;
  std::string printer_id;
  std::optional<std::string> device_id;
  int instance = 0;
  std::optional<int> repetition;
};

/// Enforces the value-range and provenance invariants; throws InvalidArgument.
void validate_physical(const PhysicalImage& img);

}  // namespace cdp
