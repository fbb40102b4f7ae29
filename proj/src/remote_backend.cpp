#include "ovhr3d/remote_backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ovhr3d/error.hpp"
#include "ovhr3d/wire.hpp"

namespace ovhr3d {

namespace {

constexpr const char* kEndpoint = "/v1/detect_segment";

struct SemaphoreGuard {
  explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
  std::counting_semaphore<1024>& sem;
};

MaskInstance2D to_instance(const wire::WireInstance& w, const Detection& base, const RenderedView& view,
                           std::size_t index) {
  MaskInstance2D inst;
  inst.detection = base;
  const int width = view.width();
  const int height = view.height();
  if (!inst.detection.box.within(width, height)) {
    const Box fixed = inst.detection.box.clamped(width, height);
    spdlog::warn("view {}: instance {} box [{}, {}, {}, {}] clamped to the image", view.view_id, index,
                 inst.detection.box.x0, inst.detection.box.y0, inst.detection.box.x1, inst.detection.box.y1);
    inst.detection.box = fixed;
  }
  if (!(inst.detection.score >= 0.0 && inst.detection.score <= 1.0)) {
    spdlog::warn("view {}: instance {} score {} clamped to [0,1]", view.view_id, index, inst.detection.score);
    inst.detection.score = std::isfinite(inst.detection.score) ? std::clamp(inst.detection.score, 0.0, 1.0) : 0.0;
  }
  try {
    inst.mask = wire::decode_rle(w.mask_rle, width, height);
  } catch (const ParseError& e) {
    throw BackendUnavailable(std::string("protocol violation: ") + e.what());
  }
  if (const auto cleared = clamp_mask_to_box(inst); cleared > 0) {
    spdlog::warn("view {}: instance {} had {} mask pixels outside its box; cleared", view.view_id, index, cleared);
  }
  return inst;
}

}  // namespace

RemoteBackend::RemoteBackend(RemoteBackendConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 1024)) {
  const auto scheme = config_.url.find("://");
  const auto path_start = config_.url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  host_ = config_.url.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = config_.url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (host_.empty()) throw std::invalid_argument("remote backend URL is empty");
}

std::string RemoteBackend::post(const std::string& body) {
  SemaphoreGuard guard(in_flight_);
  std::string last_error;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long long>(config_.backoff_ms) << (attempt - 1)));
    }
    httplib::Client client(host_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = client.Post(path_prefix_ + kEndpoint, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      spdlog::warn("detect_segment attempt {} failed: {}", attempt + 1, last_error);
      continue;
    }
    if (res->status == 200) return res->body;
    std::string message = "HTTP " + std::to_string(res->status);
    const auto err = nlohmann::json::parse(res->body, nullptr, false);
    if (err.is_object() && err.contains("error") && err["error"].is_string()) {
      message += ": " + err["error"].get<std::string>();
    }
    last_error = message;
    const bool transient = res->status >= 500 || res->status == 429;
    spdlog::warn("detect_segment attempt {} failed: {}", attempt + 1, message);
    if (!transient) break;
  }
  throw BackendUnavailable("model server " + config_.url + " unavailable: " + last_error);
}

std::vector<MaskInstance2D> RemoteBackend::detect_segment(const RenderedView& view, const PromptSpec& prompts) {
  prompts.validate();
  const auto body = wire::make_request(view.rgb, prompts, config_.box_threshold, config_.text_threshold).dump();
  const auto reply = post(body);
  const auto json = nlohmann::json::parse(reply, nullptr, false);
  if (json.is_discarded()) throw BackendUnavailable("protocol violation: response is not JSON");
  std::vector<wire::WireInstance> wires;
  try {
    wires = wire::parse_response(json);
  } catch (const ParseError& e) {
    throw BackendUnavailable(std::string("protocol violation: ") + e.what());
  }
  std::vector<MaskInstance2D> out;
  out.reserve(wires.size());
  for (std::size_t i = 0; i < wires.size(); ++i) {
    const auto& w = wires[i];
    if (w.phrase_index >= prompts.entries.size()) {
      throw BackendUnavailable("protocol violation: phrase_index " + std::to_string(w.phrase_index) + " out of range");
    }
    const Detection det{prompts.entries[w.phrase_index].class_id, w.box, w.score};
    out.push_back(to_instance(w, det, view, i));
  }
  return out;
}

std::vector<Detection> RemoteBackend::detect(const RenderedView& view, const PromptSpec& prompts) {
  std::vector<Detection> out;
  for (auto& m : detect_segment(view, prompts)) out.push_back(m.detection);
  return out;
}

std::vector<MaskInstance2D> RemoteBackend::segment(const RenderedView& view, std::span<const Detection> boxes) {
  if (boxes.empty()) return {};
  // Box prompts ride on the same endpoint; the server answers one instance
  // per box in order.
  auto request = wire::make_request(view.rgb, PromptSpec{}, config_.box_threshold, config_.text_threshold);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : boxes) arr.push_back({d.box.x0, d.box.y0, d.box.x1, d.box.y1});
  request["boxes"] = arr;
  const auto reply = post(request.dump());
  const auto json = nlohmann::json::parse(reply, nullptr, false);
  if (json.is_discarded()) throw BackendUnavailable("protocol violation: response is not JSON");
  std::vector<wire::WireInstance> wires;
  try {
    wires = wire::parse_response(json);
  } catch (const ParseError& e) {
    throw BackendUnavailable(std::string("protocol violation: ") + e.what());
  }
  if (wires.size() != boxes.size()) {
    throw BackendUnavailable("protocol violation: expected " + std::to_string(boxes.size()) + " masks, got " +
                             std::to_string(wires.size()));
  }
  std::vector<MaskInstance2D> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) out.push_back(to_instance(wires[i], boxes[i], view, i));
  return out;
}

}  // namespace ovhr3d
