#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace ovhr3d {

using ClassId = std::uint16_t;
using InstanceId = std::uint32_t;

/// Class id 0 is reserved for "unlabeled".
inline constexpr ClassId kUnlabeled = 0;

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major image buffer with the origin at the top-left pixel.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T& at(int x, int y) {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[static_cast<std::size_t>(y) * width + x];
  }
  const T& at(int x, int y) const {
    assert(x >= 0 && x < width && y >= 0 && y < height);
    return data[static_cast<std::size_t>(y) * width + x];
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

using Mask = Raster<std::uint8_t>;

}  // namespace ovhr3d
