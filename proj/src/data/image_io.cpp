#include "camforge/data/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "camforge/errors.hpp"
#include "camforge/io_util.hpp"

namespace camforge::data {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->bytes.size() - cur->pos < n) png_error(png, "unexpected end of PNG data");
  std::copy_n(cur->bytes.data() + cur->pos, n, out);
  cur->pos += n;
}

void write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_cb(png_structp) {}

// Rows of 8- or 16-bit samples in PNG byte order (16-bit is big-endian).
std::vector<std::uint8_t> encode_png(std::int64_t h, std::int64_t w, int color_type, int depth,
                                     const std::vector<std::uint8_t>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, write_cb, flush_cb);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(w) * channels * (depth / 8);
  for (std::int64_t y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(rows.data() + stride * static_cast<std::size_t>(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void check_single(const nn::Tensor& image) {
  if (image.n() != 1 || image.c() != 1) {
    throw ShapeError("expected a (1, 1, H, W) image, got " + image.shape().str());
  }
}

}  // namespace

nn::Tensor read_png_gray(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes};
  std::vector<std::uint8_t> raw;
  png_uint_32 w = 0, h = 0;
  int depth = 0;
  std::size_t rowbytes = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_set_read_fn(png, &cursor, read_cb);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  nn::Tensor out({1, 1, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  for (png_uint_32 y = 0; y < h; ++y) {
    const std::uint8_t* row = raw.data() + rowbytes * y;
    for (png_uint_32 x = 0; x < w; ++x) {
      float v;
      if (depth == 16) {
        v = static_cast<float>((row[2 * x] << 8) | row[2 * x + 1]) / 65535.0f;
      } else {
        v = static_cast<float>(row[x]) / 255.0f;
      }
      out.at(0, 0, y, x) = v;
    }
  }
  return out;
}

void write_png_gray8(const std::filesystem::path& path, const nn::Tensor& image) {
  check_single(image);
  std::vector<std::uint8_t> rows(image.numel());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    rows[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_bytes_atomic(path, encode_png(image.h(), image.w(), PNG_COLOR_TYPE_GRAY, 8, rows));
}

void write_png_gray16(const std::filesystem::path& path, const nn::Tensor& image) {
  check_single(image);
  std::vector<std::uint8_t> rows(2 * image.numel());
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const double v = std::clamp(static_cast<double>(image[i]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    rows[2 * i] = static_cast<std::uint8_t>(q >> 8);
    rows[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  write_bytes_atomic(path, encode_png(image.h(), image.w(), PNG_COLOR_TYPE_GRAY, 16, rows));
}

void write_png_rgb8(const std::filesystem::path& path, std::int64_t h, std::int64_t w,
                    std::span<const std::uint8_t> rgb) {
  if (static_cast<std::int64_t>(rgb.size()) != 3 * h * w) throw ShapeError("RGB buffer size mismatch");
  std::vector<std::uint8_t> rows(rgb.begin(), rgb.end());
  write_bytes_atomic(path, encode_png(h, w, PNG_COLOR_TYPE_RGB, 8, rows));
}

LabelMask read_mask_png(const std::filesystem::path& path) {
  const nn::Tensor t = read_png_gray(path);
  LabelMask m(t.h(), t.w());
  for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = t[i] >= 0.5f ? 1 : 0;
  return m;
}

void write_mask_png(const std::filesystem::path& path, const LabelMask& mask) {
  std::vector<std::uint8_t> rows(mask.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = mask.labels[i] ? 255 : 0;
  write_bytes_atomic(path, encode_png(mask.h, mask.w, PNG_COLOR_TYPE_GRAY, 8, rows));
}

}  // namespace camforge::data
