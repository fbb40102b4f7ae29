#include "ovhr3d/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "ovhr3d/error.hpp"
#include "ovhr3d/io.hpp"
#include "ovhr3d/pipeline.hpp"
#include "ovhr3d/png.hpp"
#include "ovhr3d/synthetic.hpp"

namespace ovhr3d {

namespace fs = std::filesystem;
using nlohmann::json;

ServiceConfig service_config_from_env(ServiceConfig base) {
  if (const char* addr = std::getenv("OVHR3D_ADDR"); addr && *addr) {
    std::string a(addr);
    const auto colon = a.rfind(':');
    std::string port_text = a;
    if (colon != std::string::npos) {
      if (colon > 0) base.host = a.substr(0, colon);
      port_text = a.substr(colon + 1);
    }
    int port = 0;
    const auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || p != port_text.data() + port_text.size() || port < 0 || port > 65535) {
      throw std::invalid_argument("OVHR3D_ADDR: bad port in '" + a + "'");
    }
    base.port = port;
  }
  if (const char* data = std::getenv("OVHR3D_DATA"); data && *data) base.data_root = data;
  if (const char* url = std::getenv("OVHR3D_BACKEND"); url && *url) base.backend_url = url;
  return base;
}

namespace {

constexpr const char* kJson = "application/json";

struct HttpError : std::runtime_error {
  HttpError(int s, std::string c, const std::string& message) : std::runtime_error(message), status(s), code(std::move(c)) {}
  int status;
  std::string code;
};

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                json extra = json::object()) {
  extra["error"] = message;
  extra["code"] = code;
  res.status = status;
  res.set_content(extra.dump(), kJson);
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

enum class Verdict { kPending, kAccepted, kRejected };

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kPending: return "pending";
    case Verdict::kAccepted: return "accepted";
    case Verdict::kRejected: return "rejected";
  }
  return "pending";
}

Verdict parse_verdict(const std::string& s) {
  if (s == "accept" || s == "accepted") return Verdict::kAccepted;
  if (s == "reject" || s == "rejected") return Verdict::kRejected;
  throw HttpError(400, "bad_verdict", "verdict must be 'accept' or 'reject'");
}

// Fixed 32-color palette keyed by class id.
Rgb palette(ClassId id) {
  static const Rgb colors[32] = {
      {128, 128, 128}, {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},   {245, 130, 48},
      {145, 30, 180},  {70, 240, 240},  {240, 50, 230},  {210, 245, 60},  {250, 190, 212}, {0, 128, 128},
      {220, 190, 255}, {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {170, 255, 195}, {128, 128, 0},
      {255, 215, 180}, {0, 0, 128},     {255, 99, 71},   {46, 139, 87},   {218, 165, 32},  {72, 61, 139},
      {199, 21, 133},  {0, 191, 255},   {154, 205, 50},  {233, 150, 122}, {106, 90, 205},  {255, 140, 0},
      {32, 178, 170},  {188, 143, 143}};
  return colors[id % 32];
}

struct CandidateRecord {
  int id = 0;
  int pass_id = 0;
  Verdict verdict = Verdict::kPending;
};

struct PassRecord {
  int id = 0;
  std::string scene_id;
  std::string status = "running";
  PromptSpec prompts;
  std::vector<int> view_ids;
  std::string error_code;
  std::string error_message;
  json summary;
};

/// Everything GET handlers read; replaced wholesale after each mutation.
struct Snapshot {
  json info;
  json listing;
  bool has_labels = false;
  std::shared_ptr<const LabeledPointCloud> labeled;
  std::shared_ptr<const std::string> export_ply;
  json metrics;
  std::map<int, std::shared_ptr<const ResponseLog>> pass_logs;
  int latest_pass = 0;
};

struct Session {
  std::string id;
  std::string name;
  fs::path dir;
  PipelineConfig config;

  std::mutex writer;
  PipelineRun run;
  std::vector<CandidateRecord> current;
  std::set<int> stale;
  int next_candidate_id = 1;
  std::vector<int> pass_ids;
  std::map<ClassId, std::string> class_names;
  json journal = json::array();
  std::map<int, std::shared_ptr<const ResponseLog>> logs;

  mutable std::mutex snap_mu;
  std::shared_ptr<const Snapshot> snap;

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(snap_mu);
    return snap;
  }
};

struct IdempotentEntry {
  std::mutex mu;
  bool done = false;
  std::string fingerprint;
  int status = 0;
  std::string body;
  std::string content_type;
};

int parse_int(const std::string& s, const char* what) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw HttpError(400, "bad_request", std::string("bad ") + what);
  return v;
}

json candidate_json(const Session& s, const InstanceCandidate3D& c, const CandidateRecord& rec) {
  const auto name = s.class_names.find(c.class_id);
  return {{"id", rec.id},
          {"class_id", c.class_id},
          {"phrase", name == s.class_names.end() ? "" : name->second},
          {"confidence", c.confidence},
          {"points", c.point_indices.size()},
          {"source_views", c.source_views},
          {"pass_id", rec.pass_id},
          {"review", verdict_name(rec.verdict)}};
}

}  // namespace

struct AnnotationService::Impl {
  explicit Impl(ServiceConfig c) : cfg(std::move(c)) {}

  ServiceConfig cfg;
  httplib::Server svr;
  int bound_port = -1;
  std::thread server_thread;

  mutable std::mutex mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::map<int, PassRecord> passes;
  int next_scene = 1;
  int next_pass = 1;

  std::mutex idem_mu;
  std::map<std::string, std::shared_ptr<IdempotentEntry>> idem;

  std::mutex workers_mu;
  std::vector<std::thread> workers;

  // ---- lookup ------------------------------------------------------------

  std::shared_ptr<Session> session(const std::string& id) const {
    std::lock_guard lock(mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw HttpError(404, "scene_not_found", "unknown scene '" + id + "'");
    return it->second;
  }

  bool is_async(const Session& s) const {
    return !cfg.backend_url.empty() || s.config.backend.kind == BackendKind::kRemote;
  }

  std::shared_ptr<PerceptionBackend> backend_for(const Session& s) const {
    PipelineConfig c = s.config;
    if (!cfg.backend_url.empty()) {
      c.backend.kind = BackendKind::kRemote;
      c.backend.remote.url = cfg.backend_url;
    }
    if (cfg.backend_factory) return cfg.backend_factory(c, s.run.mesh);
    return make_backend(c, s.run.mesh);
  }

  PassRecord pass_copy(int id) const {
    std::lock_guard lock(mu);
    return passes.at(id);
  }

  // ---- snapshot ----------------------------------------------------------

  // Caller holds s.writer.
  void publish(Session& s) {
    auto snap = std::make_shared<Snapshot>();
    snap->pass_logs = s.logs;
    const bool labeled = s.run.labeled.has_value();
    snap->has_labels = labeled;

    json candidates = json::array();
    for (std::size_t i = 0; i < s.current.size(); ++i) {
      candidates.push_back(candidate_json(s, s.run.candidates[i], s.current[i]));
    }
    json pass_list = json::array();
    {
      std::lock_guard lock(mu);
      for (int pid : s.pass_ids) {
        const auto& p = passes.at(pid);
        pass_list.push_back({{"pass_id", pid}, {"status", p.status}});
        if (p.status == "done") snap->latest_pass = pid;
      }
    }

    if (labeled) {
      std::vector<bool> keep(s.current.size());
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = s.current[i].verdict == Verdict::kAccepted;
      auto cloud = std::make_shared<LabeledPointCloud>(labeled_snapshot(s.run, keep));
      snap->export_ply = std::make_shared<const std::string>(serialize_labeled_cloud(*cloud));
      if (auto m = evaluate(*cloud)) snap->metrics = to_json(*m, s.class_names);
      snap->labeled = std::move(cloud);
    } else {
      snap->labeled = std::make_shared<LabeledPointCloud>(LabeledPointCloud::unlabeled(*s.run.cloud));
    }

    json classes = json::array();
    for (const auto& [id, name] : s.class_names) classes.push_back({{"class_id", id}, {"phrase", name}});
    snap->listing = {{"scene_id", s.id},
                     {"name", s.name},
                     {"points", s.run.cloud->size()},
                     {"faces", s.run.mesh->faces.size()},
                     {"views", s.run.views.size()},
                     {"has_ground_truth", s.run.cloud->has_ground_truth()},
                     {"passes", s.pass_ids.size()}};
    snap->info = snap->listing;
    snap->info["passes"] = pass_list;
    snap->info["classes"] = classes;
    snap->info["prompts"] = prompts_to_json(s.config.prompts);
    snap->info["candidates"] = candidates;
    snap->info["latest_pass"] = snap->latest_pass == 0 ? json(nullptr) : json(snap->latest_pass);
    snap->info["config"] = config_to_json(s.config);

    std::lock_guard lock(s.snap_mu);
    s.snap = std::move(snap);
  }

  void save_journal(const Session& s) { write_file(s.dir / "journal.json", s.journal.dump(1)); }

  // ---- passes ------------------------------------------------------------

  // Caller holds s.writer. Runs the pass, updates candidates and the record.
  void execute_pass(Session& s, int pass_id, PerceptionBackend& backend, bool replaying) {
    PassRecord rec = pass_copy(pass_id);
    const std::vector<InstanceCandidate3D> before = s.run.candidates;
    auto recorder = std::make_shared<RecordingBackend>(std::shared_ptr<PerceptionBackend>(&backend, [](auto*) {}));
    run_detection_pass(s.run, *recorder, rec.prompts, rec.view_ids);

    if (!s.run.ok()) {
      rec.status = "failed";
      rec.error_code = s.run.failure->code;
      rec.error_message = s.run.failure->message;
      s.run.failure.reset();
      if (!replaying) {
        s.journal.push_back({{"type", "pass"},
                             {"pass_id", pass_id},
                             {"status", "failed"},
                             {"prompts", prompts_to_json(rec.prompts)},
                             {"views", rec.view_ids},
                             {"error_code", rec.error_code},
                             {"error", rec.error_message}});
      }
    } else {
      for (const auto& e : rec.prompts.entries) s.class_names[e.class_id] = e.phrase;
      // Candidates identical to a previous one keep its id and verdict.
      std::vector<CandidateRecord> next(s.run.candidates.size());
      std::set<int> kept;
      for (std::size_t i = 0; i < s.run.candidates.size(); ++i) {
        next[i] = CandidateRecord{0, pass_id, Verdict::kPending};
      }
      for (std::size_t i = 0; i < s.run.candidates.size(); ++i) {
        for (std::size_t j = 0; j < before.size(); ++j) {
          if (kept.count(s.current[j].id)) continue;
          if (before[j] == s.run.candidates[i]) {
            next[i] = s.current[j];
            kept.insert(s.current[j].id);
            break;
          }
        }
        if (next[i].id == 0) next[i].id = s.next_candidate_id++;
      }
      for (const auto& old : s.current) {
        if (!kept.count(old.id)) s.stale.insert(old.id);
      }
      s.current = std::move(next);

      auto log = std::make_shared<const ResponseLog>(recorder->log());
      s.logs[pass_id] = log;
      rec.status = "done";
      json per_view = json::array();
      for (int vid : rec.view_ids) per_view.push_back({{"view_id", vid}, {"instances", s.run.evidence.at(vid).masks.size()}});
      json cands = json::array();
      for (std::size_t i = 0; i < s.current.size(); ++i) cands.push_back(candidate_json(s, s.run.candidates[i], s.current[i]));
      rec.summary = {{"per_view", per_view}, {"candidates", cands}};
      if (!replaying) {
        s.journal.push_back({{"type", "pass"},
                             {"pass_id", pass_id},
                             {"status", "done"},
                             {"prompts", prompts_to_json(rec.prompts)},
                             {"views", rec.view_ids},
                             {"responses", to_json(*log)}});
      }
    }
    {
      std::lock_guard lock(mu);
      passes[pass_id] = rec;
    }
  }

  json pass_json(const PassRecord& p) const {
    json j = {{"pass_id", p.id},
              {"scene_id", p.scene_id},
              {"status", p.status},
              {"prompts", prompts_to_json(p.prompts)},
              {"views", p.view_ids}};
    if (p.status == "done") {
      j["per_view"] = p.summary.at("per_view");
      j["candidates"] = p.summary.at("candidates");
    }
    if (p.status == "failed") {
      j["error"] = p.error_message;
      j["code"] = p.error_code;
    }
    return j;
  }

  void send_pass(httplib::Response& res, const PassRecord& p) {
    if (p.status == "failed") {
      json extra = pass_json(p);
      extra["retry"] = "the perception backend is unavailable; retry the pass once it is reachable";
      send_error(res, 502, p.error_code == "backend_unavailable" ? "backend_unavailable" : p.error_code,
                 p.error_message, extra);
      return;
    }
    send_json(res, p.status == "running" ? 202 : 200, pass_json(p));
  }

  // ---- scene creation and restore ----------------------------------------

  std::string allocate_scene_id() {
    std::lock_guard lock(mu);
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene-%04d", next_scene++);
    return buf;
  }

  // Builds the session from stored bytes so that a restored session sees the
  // exact same inputs as the original.
  std::shared_ptr<Session> open_session(const std::string& id, const std::string& name, const PipelineConfig& config,
                                        const std::string& mesh_bytes, const std::string& cloud_bytes,
                                        bool use_view_cache) {
    auto s = std::make_shared<Session>();
    s->id = id;
    s->name = name;
    s->dir = cfg.data_root / "scenes" / id;
    s->config = config;
    auto mesh = std::make_shared<const TriangleMesh>(parse_ply_mesh(mesh_bytes, (s->dir / "mesh.ply").string()));
    auto cloud = std::make_shared<const PointCloud>(parse_point_cloud(cloud_bytes, (s->dir / "cloud.ply").string()));
    for (const auto& e : config.prompts.entries) s->class_names[e.class_id] = e.phrase;

    const fs::path view_dir = s->dir / "views";
    bool cached = false;
    if (use_view_cache) {
      // Views are cached on disk; fall back to rendering when any is missing.
      try {
        config.validate();
        const auto planned = plan_views(mesh->bounds(), config.views);
        PipelineRun r;
        r.config = config;
        r.mesh = mesh;
        r.cloud = cloud;
        for (std::size_t i = 0; i < planned.size(); ++i) r.views.push_back(load_view(view_dir, static_cast<int>(i)));
        r.completed.push_back(Stage::kRender);
        s->run = std::move(r);
        cached = true;
      } catch (const std::exception& e) {
        spdlog::info("scene {}: view cache unusable ({}); rendering", id, e.what());
      }
    }
    if (!cached) {
      s->run = render_stage(config, mesh, cloud);
      s->run.throw_if_failed();
      for (const auto& v : s->run.views) save_view(v, view_dir);
    }
    return s;
  }

  json create_scene(const httplib::Request& req) {
    std::string name = "scene";
    PipelineConfig config;
    std::string mesh_bytes;
    std::string cloud_bytes;
    bool have_config = false;

    if (req.is_multipart_form_data()) {
      if (!req.has_file("mesh")) throw HttpError(400, "missing_mesh", "multipart upload needs a 'mesh' part");
      const auto mesh_part = req.get_file_value("mesh");
      const std::string mesh_source = mesh_part.filename.empty() ? "mesh" : mesh_part.filename;
      const TriangleMesh mesh = parse_mesh(mesh_part.content, mesh_source);
      mesh.validate();
      name = mesh_part.filename.empty() ? name : mesh_part.filename;
      if (req.has_file("config")) {
        const auto& text = req.get_file_value("config").content;
        const auto j = json::parse(text, nullptr, false);
        if (j.is_discarded()) throw ParseError("config", 0, 0, "config is not valid JSON");
        config = config_from_json(j);
        have_config = true;
      }
      if (req.has_file("name")) name = req.get_file_value("name").content;
      PointCloud cloud;
      if (req.has_file("cloud")) {
        const auto part = req.get_file_value("cloud");
        cloud = parse_point_cloud(part.content, part.filename.empty() ? "cloud" : part.filename);
      } else {
        cloud = sample_surface(mesh, cfg.sample_density, config.seed);
      }
      if (cloud.empty()) throw HttpError(400, "empty_cloud", "point cloud is empty");
      mesh_bytes = serialize_mesh_ply(mesh);
      cloud_bytes = serialize_labeled_cloud(LabeledPointCloud::unlabeled(std::move(cloud)));
    } else {
      json body = json::object();
      if (!req.body.empty()) {
        body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) throw ParseError("request", 0, 0, "body is not a JSON object");
      }
      for (const auto& [key, value] : body.items()) {
        if (key != "synthetic" && key != "config" && key != "name") {
          throw HttpError(400, "bad_request", "unknown key '" + key + "'");
        }
      }
      SyntheticSceneParams params;
      const json syn = body.value("synthetic", json::object());
      try {
        params.seed = syn.value("seed", params.seed);
        params.object_count = syn.value("object_count", params.object_count);
        params.point_density = syn.value("point_density", params.point_density);
        params.ground_size = syn.value("ground_size", params.ground_size);
      } catch (const json::exception& e) {
        throw HttpError(400, "bad_request", std::string("synthetic: ") + e.what());
      }
      const SyntheticScene scene = generate_synthetic_scene(params);
      config = scene.config;
      if (body.contains("config")) {
        config = config_from_json(body["config"]);
        if (config.prompts.empty()) config.prompts = scene.prompts;
        if (!body["config"].contains("dbscan")) config.dbscan = scene.config.dbscan;
        have_config = true;
      }
      name = body.value("name", "synthetic-" + std::to_string(params.seed));
      mesh_bytes = serialize_mesh_ply(scene.mesh);
      cloud_bytes = serialize_labeled_cloud(LabeledPointCloud::unlabeled(scene.cloud));
    }
    (void)have_config;
    config.validate();

    const std::string id = allocate_scene_id();
    auto s = open_session(id, name, config, mesh_bytes, cloud_bytes, false);
    write_file(s->dir / "mesh.ply", mesh_bytes);
    write_file(s->dir / "cloud.ply", cloud_bytes);
    write_file(s->dir / "scene.json", json{{"id", id}, {"name", name}, {"config", config_to_json(config)}}.dump(1));
    save_journal(*s);
    {
      std::lock_guard w(s->writer);
      publish(*s);
    }
    {
      std::lock_guard lock(mu);
      sessions[id] = s;
    }
    return s->snapshot()->info;
  }

  void restore() {
    const fs::path root = cfg.data_root / "scenes";
    std::error_code ec;
    if (!fs::is_directory(root, ec)) return;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
      const std::string id = dir.filename().string();
      try {
        const json meta = json::parse(read_file(dir / "scene.json"));
        const PipelineConfig config = config_from_json(meta.at("config"));
        auto s = open_session(id, meta.value("name", id), config, read_file(dir / "mesh.ply"),
                              read_file(dir / "cloud.ply"), true);
        const fs::path journal_path = dir / "journal.json";
        json journal = fs::exists(journal_path) ? json::parse(read_file(journal_path)) : json::array();
        std::lock_guard w(s->writer);
        replay(*s, journal);
        s->journal = std::move(journal);
        publish(*s);
        std::lock_guard lock(mu);
        sessions[id] = s;
        int n = 0;
        if (std::sscanf(id.c_str(), "scene-%d", &n) == 1) next_scene = std::max(next_scene, n + 1);
        spdlog::info("restored {} ({} journal events)", id, s->journal.size());
      } catch (const std::exception& e) {
        spdlog::error("cannot restore scene {}: {}", id, e.what());
      }
    }
  }

  // Caller holds s.writer.
  void replay(Session& s, const json& journal) {
    for (const auto& ev : journal) {
      const std::string type = ev.at("type");
      if (type == "pass") {
        PassRecord rec;
        rec.id = ev.at("pass_id").get<int>();
        rec.scene_id = s.id;
        rec.prompts = prompts_from_json(ev.at("prompts"));
        rec.view_ids = ev.at("views").get<std::vector<int>>();
        {
          std::lock_guard lock(mu);
          next_pass = std::max(next_pass, rec.id + 1);
        }
        s.pass_ids.push_back(rec.id);
        if (ev.at("status") == "failed") {
          rec.status = "failed";
          rec.error_code = ev.value("error_code", "error");
          rec.error_message = ev.value("error", "");
          std::lock_guard lock(mu);
          passes[rec.id] = rec;
          continue;
        }
        {
          std::lock_guard lock(mu);
          passes[rec.id] = rec;
        }
        ReplayBackend backend(response_log_from_json(ev.at("responses")));
        execute_pass(s, rec.id, backend, true);
        if (pass_copy(rec.id).status != "done") throw Error("journal replay of pass " + std::to_string(rec.id) + " failed");
      } else if (type == "review") {
        apply_review(s, ev.at("candidate_id").get<int>(), parse_verdict(ev.at("verdict")), true);
      } else {
        throw Error("unknown journal event '" + type + "'");
      }
    }
  }

  // ---- reviews -----------------------------------------------------------

  // Caller holds s.writer. Returns the candidate JSON.
  json apply_review(Session& s, int candidate_id, Verdict verdict, bool replaying) {
    for (std::size_t i = 0; i < s.current.size(); ++i) {
      auto& rec = s.current[i];
      if (rec.id != candidate_id) continue;
      if (rec.verdict != verdict) {
        rec.verdict = verdict;
        if (!replaying) {
          s.journal.push_back({{"type", "review"}, {"candidate_id", candidate_id},
                               {"verdict", verdict == Verdict::kAccepted ? "accept" : "reject"}});
        }
      }
      return candidate_json(s, s.run.candidates[i], rec);
    }
    if (s.stale.count(candidate_id)) {
      throw HttpError(409, "stale_candidate",
                      "candidate " + std::to_string(candidate_id) + " was superseded by a newer pass");
    }
    throw HttpError(404, "candidate_not_found", "unknown candidate " + std::to_string(candidate_id));
  }

  // ---- request plumbing --------------------------------------------------

  template <typename F>
  void guarded(const httplib::Request& req, httplib::Response& res, F&& fn) {
    try {
      fn(req, res);
    } catch (const HttpError& e) {
      send_error(res, e.status, e.code, e.what());
    } catch (const ParseError& e) {
      send_error(res, 400, "parse_error", e.what(),
                 {{"source", e.source()}, {"line", e.line()}, {"offset", e.byte_offset()}});
    } catch (const SchemaError& e) {
      send_error(res, 400, "schema_error", e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, "invalid_argument", e.what());
    } catch (const BackendUnavailable& e) {
      send_error(res, 502, "backend_unavailable", e.what(),
                 {{"retry", "the perception backend is unavailable; retry the pass once it is reachable"}});
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, 500, "internal", e.what());
    }
  }

  // Mutating routes replay their first response for a repeated Idempotency-Key.
  template <typename F>
  void mutating(const httplib::Request& req, httplib::Response& res, F&& fn) {
    const std::string key = req.get_header_value("Idempotency-Key");
    if (key.empty()) {
      guarded(req, res, fn);
      return;
    }
    std::shared_ptr<IdempotentEntry> entry;
    {
      std::lock_guard lock(idem_mu);
      auto& slot = idem[key];
      if (!slot) slot = std::make_shared<IdempotentEntry>();
      entry = slot;
    }
    const std::string fingerprint = req.method + " " + req.path + "\n" + req.body;
    std::lock_guard lock(entry->mu);
    if (entry->done) {
      if (entry->fingerprint != fingerprint) {
        send_error(res, 409, "idempotency_key_reused", "Idempotency-Key was used for a different request");
        return;
      }
      res.status = entry->status;
      res.set_content(entry->body, entry->content_type);
      res.set_header("Idempotent-Replay", "true");
      return;
    }
    guarded(req, res, fn);
    // Server errors are not cached so that a retry can succeed.
    if (res.status < 500) {
      entry->done = true;
      entry->fingerprint = fingerprint;
      entry->status = res.status;
      entry->body = res.body;
      entry->content_type = res.get_header_value("Content-Type");
    }
  }

  json parse_body(const httplib::Request& req) const {
    if (req.body.empty()) return json::object();
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw HttpError(400, "bad_json", "body is not a JSON object");
    return j;
  }

  // ---- routes ------------------------------------------------------------

  void routes() {
    svr.set_payload_max_length(cfg.max_upload_bytes);
    svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404   ? "not_found"
                               : res.status == 413 ? "payload_too_large"
                               : res.status == 400 ? "bad_request"
                                                   : "http_" + std::to_string(res.status);
      const std::string reason = httplib::status_message(res.status);
      res.set_content(json{{"error", reason}, {"code", code}}.dump(), kJson);
    });
    svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, Idempotency-Key");
      res.status = 204;
    });

    svr.Post("/scenes", [this](const httplib::Request& req, httplib::Response& res) {
      mutating(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        if (rq.body.size() > cfg.max_upload_bytes) throw HttpError(413, "payload_too_large", "upload exceeds the size limit");
        send_json(rs, 201, create_scene(rq));
      });
    });

    svr.Get("/scenes", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request&, httplib::Response& rs) {
        std::vector<std::shared_ptr<Session>> all;
        {
          std::lock_guard lock(mu);
          for (const auto& [id, s] : sessions) all.push_back(s);
        }
        json out = json::array();
        for (const auto& s : all) out.push_back(s->snapshot()->listing);
        send_json(rs, 200, {{"scenes", out}});
      });
    });

    svr.Get(R"(/scenes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        send_json(rs, 200, session(rq.matches[1])->snapshot()->info);
      });
    });

    svr.Get(R"(/scenes/([^/]+)/views)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        json out = json::array();
        for (const auto& v : s->run.views) {
          out.push_back(json::parse(camera_sidecar(v)));
        }
        send_json(rs, 200, {{"views", out}});
      });
    });

    svr.Get(R"(/scenes/([^/]+)/views/(-?\d+)/rgb)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        const RenderedView* v = s->run.find_view(parse_int(rq.matches[2], "view id"));
        if (!v) throw HttpError(404, "view_not_found", "unknown view " + std::string(rq.matches[2]));
        rs.set_content(encode_png(v->rgb), "image/png");
      });
    });

    svr.Get(R"(/scenes/([^/]+)/views/(-?\d+)/overlay)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        const int vid = parse_int(rq.matches[2], "view id");
        const RenderedView* v = s->run.find_view(vid);
        if (!v) throw HttpError(404, "view_not_found", "unknown view " + std::to_string(vid));
        const auto snap = s->snapshot();
        int pid = snap->latest_pass;
        if (rq.has_param("pass")) pid = parse_int(rq.get_param_value("pass"), "pass id");
        Raster<Rgb> img = v->rgb;
        if (pid != 0) {
          auto it = snap->pass_logs.find(pid);
          if (it == snap->pass_logs.end()) {
            throw HttpError(404, "pass_not_found", "no completed pass " + std::to_string(pid) + " on this scene");
          }
          for (const auto& e : it->second->entries) {
            if (e.view_id != vid) continue;
            for (const auto& m : e.instances) tint(img, m);
          }
        }
        rs.set_content(encode_png(img), "image/png");
      });
    });

    svr.Post(R"(/scenes/([^/]+)/passes)", [this](const httplib::Request& req, httplib::Response& res) {
      mutating(req, res, [this](const httplib::Request& rq, httplib::Response& rs) { start_pass(rq, rs); });
    });

    svr.Get(R"(/passes/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const int pid = parse_int(rq.matches[1], "pass id");
        std::optional<PassRecord> rec;
        {
          std::lock_guard lock(mu);
          if (auto it = passes.find(pid); it != passes.end()) rec = it->second;
        }
        if (!rec) throw HttpError(404, "pass_not_found", "unknown pass " + std::to_string(pid));
        send_pass(rs, *rec);
      });
    });

    svr.Post(R"(/scenes/([^/]+)/candidates/(\d+)/review)", [this](const httplib::Request& req, httplib::Response& res) {
      mutating(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        const int cid = parse_int(rq.matches[2], "candidate id");
        const json body = parse_body(rq);
        if (!body.contains("verdict") || !body["verdict"].is_string()) {
          throw HttpError(400, "bad_verdict", "body needs a 'verdict' string");
        }
        const Verdict verdict = parse_verdict(body["verdict"]);
        std::lock_guard w(s->writer);
        const std::size_t before = s->journal.size();
        json out = apply_review(*s, cid, verdict, false);
        if (s->journal.size() != before) {
          save_journal(*s);
          publish(*s);
        }
        send_json(rs, 200, out);
      });
    });

    svr.Get(R"(/scenes/([^/]+)/export)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        const auto snap = s->snapshot();
        if (!snap->export_ply) throw HttpError(409, "no_pass", "no detection pass has completed on this scene");
        rs.set_header("Content-Disposition", "attachment; filename=\"" + s->id + ".ply\"");
        rs.set_content(*snap->export_ply, "application/octet-stream");
      });
    });

    svr.Get(R"(/scenes/([^/]+)/metrics)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        const auto snap = s->snapshot();
        if (!snap->has_labels) throw HttpError(409, "no_pass", "no detection pass has completed on this scene");
        if (snap->metrics.is_null()) throw HttpError(404, "no_ground_truth", "the scene has no ground-truth labels");
        send_json(rs, 200, snap->metrics);
      });
    });

    svr.Get(R"(/scenes/([^/]+)/cloud)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(req, res, [this](const httplib::Request& rq, httplib::Response& rs) {
        const auto s = session(rq.matches[1]);
        int stride = 1;
        if (rq.has_param("stride")) stride = parse_int(rq.get_param_value("stride"), "stride");
        if (stride < 1) throw HttpError(400, "bad_request", "stride must be >= 1");
        const auto snap = s->snapshot();
        const LabeledPointCloud& lc = *snap->labeled;
        json pos = json::array();
        json cls = json::array();
        json inst = json::array();
        for (std::size_t i = 0; i < lc.size(); i += static_cast<std::size_t>(stride)) {
          const auto& p = lc.cloud.positions[i];
          pos.push_back(p.x());
          pos.push_back(p.y());
          pos.push_back(p.z());
          cls.push_back(lc.class_id[i]);
          inst.push_back(lc.instance_id[i]);
        }
        send_json(rs, 200,
                  {{"stride", stride}, {"total", lc.size()}, {"count", cls.size()}, {"positions", pos},
                   {"class_id", cls}, {"instance_id", inst}});
      });
    });
  }

  static void tint(Raster<Rgb>& img, const MaskInstance2D& m) {
    const Rgb c = palette(m.detection.class_id);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (!m.mask.at(x, y)) continue;
        Rgb& p = img.at(x, y);
        p = Rgb{static_cast<std::uint8_t>((p.r + c.r) / 2), static_cast<std::uint8_t>((p.g + c.g) / 2),
                static_cast<std::uint8_t>((p.b + c.b) / 2)};
      }
    }
    const Box b = m.detection.box.clamped(img.width, img.height);
    for (int x = b.col_begin(); x < b.col_end(); ++x) {
      img.at(x, b.row_begin()) = c;
      img.at(x, b.row_end() - 1) = c;
    }
    for (int y = b.row_begin(); y < b.row_end(); ++y) {
      img.at(b.col_begin(), y) = c;
      img.at(b.col_end() - 1, y) = c;
    }
  }

  void start_pass(const httplib::Request& rq, httplib::Response& rs) {
    const auto s = session(rq.matches[1]);
    const json body = parse_body(rq);
    for (const auto& [key, value] : body.items()) {
      if (key != "prompts" && key != "views") throw HttpError(400, "bad_request", "unknown key '" + key + "'");
    }
    if (!body.contains("prompts")) throw HttpError(400, "empty_prompts", "a pass needs at least one prompt");
    PromptSpec prompts = prompts_from_json(body["prompts"]);
    if (prompts.empty()) throw HttpError(400, "empty_prompts", "a pass needs at least one prompt");
    prompts.validate();
    std::vector<int> views;
    if (body.contains("views")) {
      try {
        views = body["views"].get<std::vector<int>>();
      } catch (const json::exception&) {
        throw HttpError(400, "bad_request", "views must be a list of view ids");
      }
      for (int v : views) {
        if (!s->run.find_view(v)) throw HttpError(400, "unknown_view", "unknown view " + std::to_string(v));
      }
    } else {
      for (const auto& v : s->run.views) views.push_back(v.view_id);
    }

    PassRecord rec;
    rec.scene_id = s->id;
    rec.prompts = prompts;
    rec.view_ids = views;
    {
      std::lock_guard lock(mu);
      rec.id = next_pass++;
      passes[rec.id] = rec;
    }
    const int pid = rec.id;

    auto work = [this, s, pid] {
      std::lock_guard w(s->writer);
      try {
        s->pass_ids.push_back(pid);
        auto backend = backend_for(*s);
        execute_pass(*s, pid, *backend, false);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        auto& p = passes[pid];
        p.status = "failed";
        p.error_code = dynamic_cast<const BackendUnavailable*>(&e) ? "backend_unavailable" : "error";
        p.error_message = e.what();
      }
      try {
        save_journal(*s);
      } catch (const std::exception& e) {
        spdlog::error("scene {}: cannot save journal: {}", s->id, e.what());
      }
      publish(*s);
    };

    if (is_async(*s)) {
      std::lock_guard lock(workers_mu);
      workers.emplace_back(work);
      send_json(rs, 202, {{"pass_id", pid}, {"scene_id", s->id}, {"status", "running"}});
      return;
    }
    work();
    send_pass(rs, pass_copy(pid));
  }
};

// ---------------------------------------------------------------------------

AnnotationService::AnnotationService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
  std::filesystem::create_directories(impl_->cfg.data_root / "scenes");
  impl_->restore();
  impl_->routes();
}

AnnotationService::~AnnotationService() { stop(); }

int AnnotationService::bind() {
  if (impl_->bound_port >= 0) return impl_->bound_port;
  auto& svr = impl_->svr;
  if (impl_->cfg.port == 0) {
    impl_->bound_port = svr.bind_to_any_port(impl_->cfg.host);
  } else if (svr.bind_to_port(impl_->cfg.host, impl_->cfg.port)) {
    impl_->bound_port = impl_->cfg.port;
  }
  if (impl_->bound_port < 0) {
    throw IoError("cannot listen on " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
  }
  return impl_->bound_port;
}

void AnnotationService::serve() {
  bind();
  spdlog::info("listening on {}:{}", impl_->cfg.host, impl_->bound_port);
  impl_->svr.listen_after_bind();
}

int AnnotationService::start() {
  const int p = bind();
  impl_->server_thread = std::thread([this] { impl_->svr.listen_after_bind(); });
  impl_->svr.wait_until_ready();
  return p;
}

void AnnotationService::stop() {
  if (impl_->svr.is_running() || impl_->server_thread.joinable()) impl_->svr.stop();
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->workers_mu);
    workers.swap(impl_->workers);
  }
  for (auto& t : workers) t.join();
}

int AnnotationService::port() const { return impl_->bound_port; }

std::uint64_t AnnotationService::state_hash() const {
  std::vector<std::shared_ptr<Session>> all;
  std::string passes_text;
  {
    std::lock_guard lock(impl_->mu);
    for (const auto& [id, s] : impl_->sessions) all.push_back(s);
    for (const auto& [id, p] : impl_->passes) passes_text += std::to_string(id) + p.status + ";";
  }
  std::uint64_t h = std::hash<std::string>{}(passes_text);
  auto mix = [&h](const std::string& text) { h = h * 1099511628211ull ^ std::hash<std::string>{}(text); };
  for (const auto& s : all) {
    const auto snap = s->snapshot();
    mix(snap->info.dump());
    if (snap->export_ply) mix(*snap->export_ply);
    mix(snap->metrics.dump());
    std::lock_guard w(s->writer);
    mix(s->journal.dump());
  }
  return h;
}

}  // namespace ovhr3d
