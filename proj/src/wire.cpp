#include "ovhr3d/wire.hpp"

#include <array>

#include "ovhr3d/error.hpp"
#include "ovhr3d/png.hpp"

namespace ovhr3d::wire {

namespace {

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::array<int, 256> decode_table() {
  std::array<int, 256> t{};
  t.fill(-1);
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) t[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
  return t;
}

[[noreturn]] void fail(const std::string& msg) { throw ParseError("detect_segment response", 0, 0, msg); }

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t(std::uint8_t(bytes[i])) << 16) |
                            (std::uint32_t(std::uint8_t(bytes[i + 1])) << 8) | std::uint8_t(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = std::uint32_t(std::uint8_t(bytes[i])) << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (std::uint32_t(std::uint8_t(bytes[i])) << 16) | (std::uint32_t(std::uint8_t(bytes[i + 1])) << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  static const auto table = decode_table();
  if (text.size() % 4 != 0) throw ParseError("base64", 0, text.size(), "length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        if (i + 4 != text.size() || j < 2) throw ParseError("base64", 0, i + j, "misplaced padding");
        vals[j] = 0;
        ++pad;
      } else {
        if (pad > 0) throw ParseError("base64", 0, i + j, "data after padding");
        vals[j] = table[static_cast<unsigned char>(c)];
        if (vals[j] < 0) throw ParseError("base64", 0, i + j, "invalid base64 character");
      }
    }
    const std::uint32_t v = (std::uint32_t(vals[0]) << 18) | (std::uint32_t(vals[1]) << 12) |
                            (std::uint32_t(vals[2]) << 6) | std::uint32_t(vals[3]);
    out += static_cast<char>((v >> 16) & 0xFF);
    if (pad < 2) out += static_cast<char>((v >> 8) & 0xFF);
    if (pad < 1) out += static_cast<char>(v & 0xFF);
  }
  return out;
}

std::vector<std::uint32_t> encode_rle(const Mask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t v : mask.data) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

Mask decode_rle(const std::vector<std::uint32_t>& runs, int width, int height) {
  const std::uint64_t total = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  std::uint64_t sum = 0;
  for (auto r : runs) sum += r;
  if (sum != total) {
    throw ParseError("mask_rle", 0, 0,
                     "run lengths sum to " + std::to_string(sum) + ", expected " + std::to_string(total));
  }
  Mask mask(width, height, 0);
  std::size_t pos = 0;
  std::uint8_t bit = 0;
  for (auto r : runs) {
    if (bit) std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(pos), r, std::uint8_t{1});
    pos += r;
    bit ^= 1;
  }
  return mask;
}

nlohmann::json make_request(const Raster<Rgb>& image, const PromptSpec& prompts, double box_threshold,
                            double text_threshold) {
  return nlohmann::json{{"image", base64_encode(encode_png(image))},
                        {"phrases", prompts.phrases()},
                        {"box_threshold", box_threshold},
                        {"text_threshold", text_threshold}};
}

std::vector<WireInstance> parse_response(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("instances") || !body["instances"].is_array()) {
    fail("response lacks an 'instances' array");
  }
  std::vector<WireInstance> out;
  std::size_t i = 0;
  for (const auto& inst : body["instances"]) {
    const std::string where = "instances[" + std::to_string(i++) + "]";
    if (!inst.is_object()) fail(where + " is not an object");
    if (!inst.contains("phrase_index") || !inst["phrase_index"].is_number_integer() ||
        inst["phrase_index"].get<long long>() < 0) {
      fail(where + ".phrase_index must be a non-negative integer");
    }
    if (!inst.contains("box") || !inst["box"].is_array() || inst["box"].size() != 4) {
      fail(where + ".box must be [x0,y0,x1,y1]");
    }
    if (!inst.contains("score") || !inst["score"].is_number()) fail(where + ".score must be a number");
    if (!inst.contains("mask_rle") || !inst["mask_rle"].is_array()) fail(where + ".mask_rle must be an array");
    WireInstance w;
    w.phrase_index = inst["phrase_index"].get<std::size_t>();
    double b[4];
    for (int k = 0; k < 4; ++k) {
      if (!inst["box"][k].is_number()) fail(where + ".box entries must be numbers");
      b[k] = inst["box"][k].get<double>();
    }
    w.box = Box{b[0], b[1], b[2], b[3]};
    w.score = inst["score"].get<double>();
    w.mask_rle.reserve(inst["mask_rle"].size());
    for (const auto& r : inst["mask_rle"]) {
      if (!r.is_number_unsigned() || r.get<std::uint64_t>() > 0xFFFFFFFFull) fail(where + ".mask_rle entries must be u32");
      w.mask_rle.push_back(r.get<std::uint32_t>());
    }
    out.push_back(std::move(w));
  }
  return out;
}

nlohmann::json make_response(const std::vector<WireInstance>& instances) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& w : instances) {
    arr.push_back({{"phrase_index", w.phrase_index},
                   {"box", {w.box.x0, w.box.y0, w.box.x1, w.box.y1}},
                   {"score", w.score},
                   {"mask_rle", w.mask_rle}});
  }
  return nlohmann::json{{"instances", arr}};
}

}  // namespace ovhr3d::wire
