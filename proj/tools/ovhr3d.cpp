// Command-line front end: synthetic scenes, rendering, the batch pipeline,
// evaluation, response-log replay and the annotation service.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <filesystem>
#include <algorithm>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include "ovhr3d/config.hpp"
#include "ovhr3d/error.hpp"
#include "ovhr3d/io.hpp"
#include "ovhr3d/pipeline.hpp"
#include "ovhr3d/service.hpp"
#include "ovhr3d/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ovhr3d;

namespace {

// Flags shared by every subcommand that builds a PipelineConfig.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> backend;
  std::optional<std::string> url;
  std::optional<int> views;
  std::optional<std::string> view_mode;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<std::uint64_t> seed;
  bool no_postprocess = false;
  std::optional<double> jitter;
  std::optional<double> drop;
  std::optional<double> fp;
  std::optional<int> morph;
  std::optional<std::uint64_t> noise_seed;
  std::optional<double> eps;
  std::optional<std::size_t> min_pts;
  std::optional<double> nms_threshold;
  std::optional<int> threads;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "Pipeline config JSON");
    app->add_option("--backend", backend, "Perception backend")->check(CLI::IsMember({"oracle", "remote"}));
    app->add_option("--url", url, "Model server URL for the remote backend");
    app->add_option("--views", views, "Number of planned views");
    app->add_option("--view-mode", view_mode, "View planning mode")->check(CLI::IsMember({"orbit", "grid"}));
    app->add_option("--width", width, "Image width in pixels");
    app->add_option("--height", height, "Image height in pixels");
    app->add_option("--seed", seed, "Run seed");
    app->add_flag("--no-postprocess", no_postprocess, "Skip DBSCAN filtering and merge-NMS");
    app->add_option("--noise-jitter", jitter, "Oracle box jitter in pixels");
    app->add_option("--noise-drop", drop, "Oracle detection drop rate");
    app->add_option("--noise-fp", fp, "Oracle false positives per view");
    app->add_option("--noise-morph", morph, "Oracle mask erode/dilate radius in pixels");
    app->add_option("--noise-seed", noise_seed, "Oracle noise seed");
    app->add_option("--eps", eps, "DBSCAN neighborhood radius in meters");
    app->add_option("--min-pts", min_pts, "DBSCAN core point threshold");
    app->add_option("--nms-threshold", nms_threshold, "Merge-NMS point IoU threshold");
    app->add_option("--threads", threads, "Worker threads (0 = all cores)");
  }

  // base <- --config file <- flags
  PipelineConfig resolve(PipelineConfig base) const {
    PipelineConfig c = config_path.empty() ? std::move(base) : load_config(config_path);
    if (backend) c.backend.kind = *backend == "remote" ? BackendKind::kRemote : BackendKind::kOracle;
    if (url) c.backend.remote.url = *url;
    if (views) c.views.count = *views;
    if (view_mode) c.views.mode = *view_mode == "grid" ? ViewPlanMode::kGrid : ViewPlanMode::kOrbit;
    if (width) c.views.image.width = *width;
    if (height) c.views.image.height = *height;
    if (seed) c.seed = *seed;
    if (no_postprocess) c.postprocess = false;
    if (jitter) c.backend.noise.box_jitter_px = *jitter;
    if (drop) c.backend.noise.drop_rate = *drop;
    if (fp) c.backend.noise.false_positive_rate = *fp;
    if (morph) c.backend.noise.mask_erode_dilate_px = *morph;
    if (noise_seed) c.backend.noise.seed = *noise_seed;
    if (eps) c.dbscan.eps = *eps;
    if (min_pts) c.dbscan.min_pts = *min_pts;
    if (nms_threshold) c.nms.overlap_threshold = *nms_threshold;
    if (threads) c.threads = *threads;
    c.validate();
    return c;
  }
};

struct Inputs {
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const PointCloud> cloud;
  PipelineConfig base;
};

// Mesh and cloud from flags, or from a `synth` manifest on stdin.
Inputs load_inputs(const std::string& mesh_path, const std::string& cloud_path, std::uint64_t sample_seed) {
  Inputs in;
  fs::path mesh_file = mesh_path;
  fs::path cloud_file = cloud_path;
  if (mesh_file.empty()) {
    const std::string text(std::istreambuf_iterator<char>(std::cin), {});
    const json manifest = json::parse(text, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object() || !manifest.contains("mesh")) {
      throw std::invalid_argument("no --mesh given and stdin is not a synth manifest");
    }
    mesh_file = manifest.at("mesh").get<std::string>();
    if (cloud_file.empty() && manifest.contains("cloud")) cloud_file = manifest.at("cloud").get<std::string>();
    if (manifest.contains("config")) in.base = load_config(manifest.at("config").get<std::string>());
  }
  in.mesh = std::make_shared<const TriangleMesh>(load_mesh(mesh_file));
  if (cloud_file.empty()) {
    in.cloud = std::make_shared<const PointCloud>(sample_surface(*in.mesh, 400.0, sample_seed));
  } else {
    in.cloud = std::make_shared<const PointCloud>(load_point_cloud(cloud_file));
  }
  return in;
}

std::map<ClassId, std::string> class_names(const PromptSpec& prompts) {
  std::map<ClassId, std::string> names;
  for (const auto& e : prompts.entries) names[e.class_id] = e.phrase;
  return names;
}

// Writes labeled.ply, metrics.json (with ground truth), timing.json and
// responses.json; returns the summary printed to stdout.
json write_outputs(const PipelineRun& run, const ResponseLog& log, const fs::path& out) {
  json summary = {{"points", run.cloud->size()}, {"views", run.views.size()}, {"candidates", run.candidates.size()}};
  save_labeled_cloud(*run.labeled, out / "labeled.ply");
  summary["labeled"] = (out / "labeled.ply").string();
  if (auto m = evaluate(run)) {
    const json mj = to_json(*m, class_names(run.config.prompts));
    write_file(out / "metrics.json", mj.dump(2) + "\n");
    summary["metrics"] = mj;
    summary["metrics_file"] = (out / "metrics.json").string();
  }
  const json tj = to_json(run.timing);
  write_file(out / "timing.json", tj.dump(2) + "\n");
  write_file(out / "responses.json", to_json(log).dump() + "\n");
  summary["timing"] = tj;
  return summary;
}

void print_summary(const json& summary, bool as_json, const PipelineRun& run) {
  if (as_json) {
    std::cout << summary.dump(2) << "\n";
    return;
  }
  std::cout << "points " << summary["points"] << ", views " << summary["views"] << ", candidates "
            << summary["candidates"] << "\n";
  if (auto m = evaluate(run)) std::cout << format_table("run", *m, class_names(run.config.prompts));
  const auto& t = summary["timing"];
  std::cout << "timing (s): render " << t["render_s"] << ", detect+segment " << t["detect_segment_s"]
            << ", backproject " << t["backproject_s"] << ", postprocess " << t["postprocess_s"] << ", total "
            << t["total_s"] << "\n";
}

int cmd_synth(const SyntheticSceneParams& params, const fs::path& out, bool as_json) {
  const SyntheticScene scene = generate_synthetic_scene(params);
  fs::create_directories(out);
  const fs::path mesh = fs::absolute(out / "mesh.ply");
  const fs::path cloud = fs::absolute(out / "cloud.ply");
  const fs::path config = fs::absolute(out / "config.json");
  save_mesh_ply(scene.mesh, mesh);
  // The reference labels double as class_id so that `eval` can compare against this file.
  LabeledPointCloud reference = LabeledPointCloud::unlabeled(scene.cloud);
  reference.class_id = scene.cloud.gt_class;
  reference.instance_id = scene.cloud.gt_instance;
  std::fill(reference.confidence.begin(), reference.confidence.end(), 1.0f);
  save_labeled_cloud(reference, cloud);
  write_file(config, config_to_json(scene.config).dump(2) + "\n");
  const json manifest = {{"mesh", mesh.string()},
                         {"cloud", cloud.string()},
                         {"config", config.string()},
                         {"points", scene.cloud.size()},
                         {"faces", scene.mesh.faces.size()},
                         {"objects", params.object_count},
                         {"seed", params.seed}};
  (void)as_json;
  std::cout << manifest.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ovhr3d"));
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"Open-vocabulary 3D point cloud labeling"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");
  app.add_flag("-q,--quiet", quiet, "Log errors only");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled scene and print its manifest");
  SyntheticSceneParams synth_params;
  std::string synth_out;
  bool synth_json = false;
  synth->add_option("--seed", synth_params.seed, "Scene seed");
  synth->add_option("--objects", synth_params.object_count, "Number of objects");
  synth->add_option("--density", synth_params.point_density, "Points per square meter");
  synth->add_option("--ground-size", synth_params.ground_size, "Ground side in meters");
  synth->add_option("--out", synth_out, "Output directory (default synth-<seed>)");
  synth->add_flag("--json", synth_json, "JSON output (the manifest is always JSON)");

  // render
  auto* render = app.add_subcommand("render", "Render views of a mesh to a directory");
  ConfigFlags render_flags;
  render_flags.add(render);
  std::string render_mesh;
  std::string render_out = "views";
  bool render_json = false;
  render->add_option("--mesh", render_mesh, "Mesh file (OBJ or PLY)")->required();
  render->add_option("--out", render_out, "Output directory");
  render->add_flag("--json", render_json, "JSON output");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Run the full labeling pipeline");
  ConfigFlags pipe_flags;
  pipe_flags.add(pipeline);
  std::string pipe_mesh;
  std::string pipe_cloud;
  std::string pipe_out;
  bool pipe_json = false;
  pipeline->add_option("--mesh", pipe_mesh, "Mesh file; read a synth manifest from stdin when omitted");
  pipeline->add_option("--cloud", pipe_cloud, "Point cloud PLY; sampled from the mesh when omitted");
  pipeline->add_option("--out", pipe_out, "Output directory (default from config)");
  pipeline->add_flag("--json", pipe_json, "JSON output");

  // eval
  auto* eval = app.add_subcommand("eval", "Compare predicted labels against ground truth");
  std::string eval_pred;
  std::string eval_gt;
  bool eval_json = false;
  eval->add_option("prediction", eval_pred, "Labeled PLY with predictions")->required();
  eval->add_option("reference", eval_gt, "Labeled PLY whose class_id column is the reference")->required();
  eval->add_flag("--json", eval_json, "JSON output");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP annotation service");
  std::string serve_addr;
  std::string serve_data;
  std::string serve_backend;
  std::string serve_config;
  bool serve_json = false;
  serve->add_option("--addr", serve_addr, "Listen address host:port (env OVHR3D_ADDR)");
  serve->add_option("--data", serve_data, "Data root (env OVHR3D_DATA)");
  serve->add_option("--backend", serve_backend, "Remote backend URL (env OVHR3D_BACKEND)");
  serve->add_option("--config", serve_config, "Service config JSON with addr, data and backend keys");
  serve->add_flag("--json", serve_json, "Log the bound address as JSON");

  // record-replay
  auto* replay = app.add_subcommand("record-replay", "Re-run the pipeline from a recorded backend response log");
  ConfigFlags replay_flags;
  replay_flags.add(replay);
  std::string replay_log;
  std::string replay_mesh;
  std::string replay_cloud;
  std::string replay_out;
  bool replay_json = false;
  replay->add_option("--log", replay_log, "Response log (responses.json from a pipeline run)")->required();
  replay->add_option("--mesh", replay_mesh, "Mesh file; read a synth manifest from stdin when omitted");
  replay->add_option("--cloud", replay_cloud, "Point cloud PLY");
  replay->add_option("--out", replay_out, "Output directory");
  replay->add_flag("--json", replay_json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "ovhr3d: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  if (quiet) spdlog::set_level(spdlog::level::err);
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    if (*synth) {
      const fs::path out = synth_out.empty() ? fs::path("synth-" + std::to_string(synth_params.seed)) : fs::path(synth_out);
      return cmd_synth(synth_params, out, synth_json);
    }

    if (*render) {
      const PipelineConfig cfg = render_flags.resolve(PipelineConfig{});
      auto mesh = std::make_shared<const TriangleMesh>(load_mesh(render_mesh));
      auto cloud = std::make_shared<const PointCloud>(sample_surface(*mesh, 50.0, cfg.seed));
      const PipelineRun r = render_stage(cfg, mesh, cloud);
      r.throw_if_failed();
      for (const auto& v : r.views) save_view(v, render_out);
      if (render_json) {
        std::cout << json{{"views", r.views.size()}, {"dir", render_out}, {"render_s", r.timing.render_s}}.dump(2)
                  << "\n";
      } else {
        std::cout << "rendered " << r.views.size() << " views to " << render_out << "\n";
      }
      return 0;
    }

    if (*pipeline || *replay) {
      const bool is_replay = replay->parsed();
      const ConfigFlags& flags = is_replay ? replay_flags : pipe_flags;
      const Inputs in = load_inputs(is_replay ? replay_mesh : pipe_mesh, is_replay ? replay_cloud : pipe_cloud,
                                    flags.seed.value_or(7));
      const PipelineConfig cfg = flags.resolve(in.base);
      std::shared_ptr<PerceptionBackend> inner;
      if (is_replay) {
        inner = std::make_shared<ReplayBackend>(response_log_from_json(json::parse(read_file(replay_log))));
      } else {
        inner = make_backend(cfg, in.mesh);
      }
      RecordingBackend recorder(inner);
      const PipelineRun r = run(cfg, in.mesh, in.cloud, recorder);
      r.throw_if_failed();
      const std::string out_arg = is_replay ? replay_out : pipe_out;
      const fs::path out = out_arg.empty() ? cfg.output_dir : fs::path(out_arg);
      const json summary = write_outputs(r, recorder.log(), out);
      print_summary(summary, is_replay ? replay_json : pipe_json, r);
      return 0;
    }

    if (*eval) {
      const LabeledPointCloud pred = load_labeled_cloud(eval_pred);
      const LabeledPointCloud ref = load_labeled_cloud(eval_gt);
      if (ref.size() != pred.size()) {
        throw std::invalid_argument("point counts differ: " + std::to_string(pred.size()) + " vs " +
                                    std::to_string(ref.size()));
      }
      const auto m = metrics(confusion(pred.class_id, ref.class_id));
      if (eval_json) {
        std::cout << to_json(m).dump(2) << "\n";
      } else {
        std::cout << format_table(fs::path(eval_pred).filename().string(), m);
      }
      return 0;
    }

    if (*serve) {
      ServiceConfig sc;
      if (!serve_config.empty()) {
        const json j = json::parse(read_file(serve_config));
        for (const auto& [key, value] : j.items()) {
          if (key != "addr" && key != "data" && key != "backend" && key != "max_upload_bytes") {
            throw std::invalid_argument("service config: unknown key '" + key + "'");
          }
        }
        if (j.contains("data")) sc.data_root = j["data"].get<std::string>();
        if (j.contains("backend")) sc.backend_url = j["backend"].get<std::string>();
        if (j.contains("max_upload_bytes")) sc.max_upload_bytes = j["max_upload_bytes"].get<std::size_t>();
        if (j.contains("addr")) setenv("OVHR3D_ADDR", j["addr"].get<std::string>().c_str(), 0);
      }
      sc = service_config_from_env(sc);
      if (!serve_addr.empty()) {
        setenv("OVHR3D_ADDR", serve_addr.c_str(), 1);
        sc = service_config_from_env(sc);
      }
      if (!serve_data.empty()) sc.data_root = serve_data;
      if (!serve_backend.empty()) sc.backend_url = serve_backend;
      if (!verbose && !quiet) spdlog::set_level(spdlog::level::info);
      AnnotationService service(sc);
      const int port = service.bind();
      if (serve_json) {
        std::cout << json{{"host", sc.host}, {"port", port}, {"data", sc.data_root.string()}}.dump() << std::endl;
      } else {
        std::cout << "listening on http://" << sc.host << ":" << port << std::endl;
      }
      service.serve();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "ovhr3d: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
