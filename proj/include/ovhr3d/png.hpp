#pragma once

#include <string>

#include "ovhr3d/raster.hpp"

namespace ovhr3d {

/// 8-bit RGB PNG, no interlacing. Returns the encoded bytes.
std::string encode_png(const Raster<Rgb>& image);
/// Accepts gray, gray+alpha, palette, RGB and RGBA inputs; converts to RGB8.
/// Throws ParseError on anything libpng rejects.
Raster<Rgb> decode_png(const std::string& bytes);

}  // namespace ovhr3d
