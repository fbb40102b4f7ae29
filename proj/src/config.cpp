#include "ovhr3d/config.hpp"

#include <set>
#include <stdexcept>

#include "ovhr3d/error.hpp"
#include "ovhr3d/io.hpp"

namespace ovhr3d {

void PipelineConfig::validate() const {
  prompts.validate();
  views.validate();
  fusion.validate();
  dbscan.validate();
  nms.validate();
  backend.noise.validate();
  if (backend.kind == BackendKind::kRemote && backend.remote.url.empty()) {
    throw std::invalid_argument("config: remote backend requires a url");
  }
  if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
}

namespace {

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json prompts_to_json(const PromptSpec& p) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : p.entries) arr.push_back({{"phrase", e.phrase}, {"class_id", e.class_id}});
  return arr;
}

PromptSpec prompts_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("prompts must be an array");
  PromptSpec p;
  for (const auto& e : j) {
    check_keys(e, "prompt entry", {"phrase", "class_id"});
    if (!e.contains("phrase") || !e.contains("class_id")) {
      throw std::invalid_argument("prompt entries need 'phrase' and 'class_id'");
    }
    p.entries.push_back({e.at("phrase").get<std::string>(), e.at("class_id").get<ClassId>()});
  }
  return p;
}

PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    check_keys(j, "config",
               {"prompts", "views", "fusion", "dbscan", "nms", "postprocess", "backend", "output", "seed", "threads"});
    if (j.contains("prompts")) c.prompts = prompts_from_json(j["prompts"]);
    if (j.contains("views")) {
      const auto& v = j["views"];
      check_keys(v, "views",
                 {"mode", "count", "altitude", "pitch", "orbit_radius", "grid_spacing", "start_azimuth_deg", "look_at",
                  "width", "height", "hfov_deg"});
      if (v.contains("mode")) {
        const auto mode = v["mode"].get<std::string>();
        if (mode == "orbit") {
          c.views.mode = ViewPlanMode::kOrbit;
        } else if (mode == "grid") {
          c.views.mode = ViewPlanMode::kGrid;
        } else {
          throw std::invalid_argument("config: views.mode must be 'orbit' or 'grid'");
        }
      }
      read(v, "count", c.views.count);
      read(v, "altitude", c.views.altitude);
      read(v, "pitch", c.views.pitch);
      read(v, "orbit_radius", c.views.orbit_radius);
      read(v, "grid_spacing", c.views.grid_spacing);
      read(v, "start_azimuth_deg", c.views.start_azimuth_deg);
      if (v.contains("look_at") && !v["look_at"].is_null()) {
        const auto& la = v["look_at"];
        if (!la.is_array() || la.size() != 3) throw std::invalid_argument("config: views.look_at must be [x,y,z]");
        c.views.look_at = Point3(la[0].get<double>(), la[1].get<double>(), la[2].get<double>());
      }
      read(v, "width", c.views.image.width);
      read(v, "height", c.views.image.height);
      read(v, "hfov_deg", c.views.image.hfov_deg);
    }
    if (j.contains("fusion")) {
      const auto& f = j["fusion"];
      check_keys(f, "fusion", {"depth_tolerance_abs", "depth_tolerance_rel", "min_votes"});
      read(f, "depth_tolerance_abs", c.fusion.depth_tolerance_abs);
      read(f, "depth_tolerance_rel", c.fusion.depth_tolerance_rel);
      read(f, "min_votes", c.fusion.min_votes);
    }
    if (j.contains("dbscan")) {
      const auto& d = j["dbscan"];
      check_keys(d, "dbscan", {"eps", "min_pts"});
      read(d, "eps", c.dbscan.eps);
      read(d, "min_pts", c.dbscan.min_pts);
    }
    if (j.contains("nms")) {
      check_keys(j["nms"], "nms", {"overlap_threshold"});
      read(j["nms"], "overlap_threshold", c.nms.overlap_threshold);
    }
    read(j, "postprocess", c.postprocess);
    if (j.contains("backend")) {
      const auto& b = j["backend"];
      check_keys(b, "backend",
                 {"kind", "url", "box_threshold", "text_threshold", "retries", "backoff_ms", "timeout_s",
                  "max_in_flight", "noise"});
      if (b.contains("kind")) {
        const auto kind = b["kind"].get<std::string>();
        if (kind == "oracle") {
          c.backend.kind = BackendKind::kOracle;
        } else if (kind == "remote") {
          c.backend.kind = BackendKind::kRemote;
        } else {
          throw std::invalid_argument("config: backend.kind must be 'oracle' or 'remote'");
        }
      }
      read(b, "url", c.backend.remote.url);
      read(b, "box_threshold", c.backend.remote.box_threshold);
      read(b, "text_threshold", c.backend.remote.text_threshold);
      read(b, "retries", c.backend.remote.retries);
      read(b, "backoff_ms", c.backend.remote.backoff_ms);
      read(b, "timeout_s", c.backend.remote.timeout_s);
      read(b, "max_in_flight", c.backend.remote.max_in_flight);
      if (b.contains("noise")) {
        const auto& n = b["noise"];
        check_keys(n, "backend.noise", {"box_jitter_px", "drop_rate", "false_positive_rate", "mask_erode_dilate_px", "seed"});
        read(n, "box_jitter_px", c.backend.noise.box_jitter_px);
        read(n, "drop_rate", c.backend.noise.drop_rate);
        read(n, "false_positive_rate", c.backend.noise.false_positive_rate);
        read(n, "mask_erode_dilate_px", c.backend.noise.mask_erode_dilate_px);
        read(n, "seed", c.backend.noise.seed);
      }
    }
    if (j.contains("output")) {
      check_keys(j["output"], "output", {"dir"});
      if (j["output"].contains("dir")) c.output_dir = j["output"]["dir"].get<std::string>();
    }
    read(j, "seed", c.seed);
    read(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json views{{"mode", c.views.mode == ViewPlanMode::kOrbit ? "orbit" : "grid"},
                       {"count", c.views.count},
                       {"altitude", c.views.altitude},
                       {"pitch", c.views.pitch},
                       {"orbit_radius", c.views.orbit_radius},
                       {"grid_spacing", c.views.grid_spacing},
                       {"start_azimuth_deg", c.views.start_azimuth_deg},
                       {"width", c.views.image.width},
                       {"height", c.views.image.height},
                       {"hfov_deg", c.views.image.hfov_deg}};
  if (c.views.look_at) views["look_at"] = {c.views.look_at->x(), c.views.look_at->y(), c.views.look_at->z()};
  const auto& n = c.backend.noise;
  const auto& r = c.backend.remote;
  return nlohmann::json{
      {"prompts", prompts_to_json(c.prompts)},
      {"views", views},
      {"fusion",
       {{"depth_tolerance_abs", c.fusion.depth_tolerance_abs},
        {"depth_tolerance_rel", c.fusion.depth_tolerance_rel},
        {"min_votes", c.fusion.min_votes}}},
      {"dbscan", {{"eps", c.dbscan.eps}, {"min_pts", c.dbscan.min_pts}}},
      {"nms", {{"overlap_threshold", c.nms.overlap_threshold}}},
      {"postprocess", c.postprocess},
      {"backend",
       {{"kind", c.backend.kind == BackendKind::kOracle ? "oracle" : "remote"},
        {"url", r.url},
        {"box_threshold", r.box_threshold},
        {"text_threshold", r.text_threshold},
        {"retries", r.retries},
        {"backoff_ms", r.backoff_ms},
        {"timeout_s", r.timeout_s},
        {"max_in_flight", r.max_in_flight},
        {"noise",
         {{"box_jitter_px", n.box_jitter_px},
          {"drop_rate", n.drop_rate},
          {"false_positive_rate", n.false_positive_rate},
          {"mask_erode_dilate_px", n.mask_erode_dilate_px},
          {"seed", n.seed}}}}},
      {"output", {{"dir", c.output_dir.string()}}},
      {"seed", c.seed},
      {"threads", c.threads}};
}

PipelineConfig load_config(const std::filesystem::path& path) {
  const auto text = read_file(path);
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ParseError(path.string(), 0, 0, "config is not valid JSON");
  return config_from_json(j);
}

}  // namespace ovhr3d
