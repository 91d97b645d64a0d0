#pragma once

#include <filesystem>

#include "cdplab/image.hpp"

namespace cdp {

/// Writes a [0,1] image as 16-bit grayscale PNG. Creates parent directories.
/// Values are clamped and quantized to round(v * 65535).
void save_png16(const std::filesystem::path& path, const Image& img);

/// Reads a grayscale PNG back to [0,1]. 8-bit inputs are accepted and scaled
/// by 1/255; 16-bit by 1/65535. Throws IoError on filesystem problems and
/// ParseError on malformed content.
Image load_png16(const std::filesystem::path& path);

}  // namespace cdp
