#include "ovhr3d/png.hpp"

#include <csetjmp>
#include <cstring>
#include <vector>

#include <png.h>

#include "ovhr3d/error.hpp"

namespace ovhr3d {

namespace {

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + n > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->offset, n);
  cur->offset += n;
}

void write_callback(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void flush_callback(png_structp) {}

void error_callback(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

}  // namespace

std::string encode_png(const Raster<Rgb>& image) {
  if (image.width < 1 || image.height < 1) throw Error("encode_png: empty image");
  std::string message;
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_callback, warning_callback);
  if (!png) throw Error("encode_png: cannot allocate libpng writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("encode_png: cannot allocate libpng info");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("encode_png: " + message);
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = reinterpret_cast<png_bytep>(const_cast<Rgb*>(&image.data[static_cast<std::size_t>(y) * image.width]));
  }
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Raster<Rgb> decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw ParseError("png", 0, 0, "missing PNG signature");
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_callback, warning_callback);
  if (!png) throw Error("decode_png: cannot allocate libpng reader");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("decode_png: cannot allocate libpng info");
  }
  ReadCursor cursor{&bytes, 0};
  Raster<Rgb> image;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("png", 0, cursor.offset, message.empty() ? "corrupt PNG" : message);
  }
  png_set_read_fn(png, &cursor, read_callback);
  png_set_user_limits(png, 1 << 14, 1 << 14);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != png_get_image_width(png, info) * 3) {
    png_error(png, "unsupported PNG pixel layout");
  }
  image = Raster<Rgb>(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
  rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    rows[y] = reinterpret_cast<png_bytep>(&image.data[static_cast<std::size_t>(y) * image.width]);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

}  // namespace ovhr3d
