#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovhr3d/perception.hpp"
#include "ovhr3d/raster.hpp"

namespace ovhr3d::wire {

std::string base64_encode(std::string_view bytes);
/// Throws ParseError on characters outside the standard alphabet or bad padding.
std::string base64_decode(std::string_view text);

/// Row-major run lengths, alternating background/foreground starting with
/// background (a leading 0 when the first pixel is set). Sums to w*h.
std::vector<std::uint32_t> encode_rle(const Mask& mask);
/// Throws ParseError unless the runs sum to exactly width*height.
Mask decode_rle(const std::vector<std::uint32_t>& runs, int width, int height);

/// Body of a POST /v1/detect_segment request.
nlohmann::json make_request(const Raster<Rgb>& image, const PromptSpec& prompts, double box_threshold,
                            double text_threshold);

struct WireInstance {
  std::size_t phrase_index = 0;
  Box box;
  double score = 0.0;
  std::vector<std::uint32_t> mask_rle;
};

/// Validates shape and types of a detect_segment response. Throws ParseError.
std::vector<WireInstance> parse_response(const nlohmann::json& body);
nlohmann::json make_response(const std::vector<WireInstance>& instances);

}  // namespace ovhr3d::wire
