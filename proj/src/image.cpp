#include "cdplab/image.hpp"

namespace cdp {

std::string to_string(ImageRole role) {
  switch (role) {
    case ImageRole::original_x: return "original_x";
    case ImageRole::enrolled_xe: return "enrolled_xe";
    case ImageRole::fake_f: return "fake_f";
    case ImageRole::synthetic_xhat: return "synthetic_xhat";
    case ImageRole::capture_y: return "capture_y";
  }
  throw InvalidArgument("unknown ImageRole");
}

ImageRole image_role_from_string(const std::string& s) {
  if (s == "original_x") return ImageRole::original_x;
  if (s == "enrolled_xe") return ImageRole::enrolled_xe;
  if (s == "fake_f") return ImageRole::fake_f;
  if (s == "synthetic_xhat") return ImageRole::synthetic_xhat;
  if (s == "capture_y") return ImageRole::capture_y;
  throw InvalidArgument("unknown image role: " + s);
}

void validate_physical(const PhysicalImage& img) {
  if (img.pixels.rows() < 1 || img.pixels.cols() < 1)
    throw InvalidArgument("PhysicalImage: empty pixel array");
  if (!img.pixels.allFinite())
    throw InvalidArgument("PhysicalImage: non-finite pixel values");
  if ((img.pixels < 0.0).any() || (img.pixels > 1.0).any())
    throw InvalidArgument("PhysicalImage: pixel values outside [0, 1]");
  if (img.role == ImageRole::synthetic_xhat && !img.device_id)
    throw InvalidArgument("PhysicalImage: synthetic_xhat requires a device_id");
}

}  // namespace cdp
