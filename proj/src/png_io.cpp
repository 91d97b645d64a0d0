#include "cdplab/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace cdp {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through longjmp; capture the message first.
thread_local std::string g_png_error;

void png_error_fn(png_structp png, png_const_charp msg) {
  g_png_error = msg ? msg : "unknown libpng error";
  longjmp(png_jmpbuf(png), 1);
}

void png_warn_fn(png_structp, png_const_charp) {}

constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

void save_png16(const std::filesystem::path& path, const Image& img) {
  if (img.rows() < 1 || img.cols() < 1)
    throw InvalidArgument("save_png16: empty image");

  std::error_code ec;
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path(), ec);

  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            png_error_fn, png_warn_fn);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  const int rows = static_cast<int>(img.rows());
  const int cols = static_cast<int>(img.cols());
  // Big-endian 16-bit samples as required by the format.
  std::vector<unsigned char> rowbuf(static_cast<std::size_t>(cols) * 2);
  std::vector<png_bytep> row_ptrs;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed (" + g_png_error + "): " + path.string());
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows),
               16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double v = img(r, c);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      auto q = static_cast<unsigned>(std::lround(v * 65535.0));
      rowbuf[2 * c] = static_cast<unsigned char>(q >> 8);
      rowbuf[2 * c + 1] = static_cast<unsigned char>(q & 0xff);
    }
    png_write_row(png, rowbuf.data());
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

Image load_png16(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open for reading: " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8)
    throw ParseError("truncated PNG header: " + path.string(), 0);
  if (std::memcmp(sig, kPngSignature, 8) != 0)
    throw ParseError("not a PNG file: " + path.string(), 0);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           png_error_fn, png_warn_fn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  std::vector<unsigned char> data;
  Image out;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("malformed PNG (" + g_png_error + "): " + path.string());
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  if (color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("expected grayscale PNG, got color type " +
                     std::to_string(color_type) + ": " + path.string());
  }
  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int bytes_per_sample = bit_depth == 16 ? 2 : 1;
  const double scale = bit_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  data.resize(static_cast<std::size_t>(width) * bytes_per_sample);
  out.resize(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));

  for (png_uint_32 r = 0; r < height; ++r) {
    png_read_row(png, data.data(), nullptr);
    if (bytes_per_sample == 2) {
      for (png_uint_32 c = 0; c < width; ++c) {
        unsigned v = (static_cast<unsigned>(data[2 * c]) << 8) | data[2 * c + 1];
        out(r, c) = v * scale;
      }
    } else {
      for (png_uint_32 c = 0; c < width; ++c) out(r, c) = data[c] * scale;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace cdp
