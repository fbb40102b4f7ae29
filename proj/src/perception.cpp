#include "ovhr3d/perception.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

namespace ovhr3d {

void PromptSpec::validate() const {
  std::set<std::string> phrases_seen;
  std::set<ClassId> ids_seen;
  for (const auto& e : entries) {
    if (e.phrase.empty()) throw std::invalid_argument("prompt phrase must be non-empty");
    if (e.class_id < 1) throw std::invalid_argument("prompt class_id must be >= 1 (0 is reserved for unlabeled)");
    if (!phrases_seen.insert(e.phrase).second) throw std::invalid_argument("duplicate prompt phrase '" + e.phrase + "'");
    if (!ids_seen.insert(e.class_id).second) {
      throw std::invalid_argument("duplicate prompt class_id " + std::to_string(e.class_id));
    }
  }
}

bool PromptSpec::contains(ClassId id) const { return index_of(id).has_value(); }

std::optional<std::size_t> PromptSpec::index_of(ClassId id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].class_id == id) return i;
  }
  return std::nullopt;
}

std::vector<std::string> PromptSpec::phrases() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.phrase);
  return out;
}

int Box::col_begin() const { return static_cast<int>(std::floor(x0)); }
int Box::col_end() const { return static_cast<int>(std::ceil(x1)); }
int Box::row_begin() const { return static_cast<int>(std::floor(y0)); }
int Box::row_end() const { return static_cast<int>(std::ceil(y1)); }

Box Box::clamped(int width, int height) const {
  auto fix = [](double a, double b, int limit, double& lo, double& hi) {
    if (!std::isfinite(a)) a = 0;
    if (!std::isfinite(b)) b = limit;
    if (a > b) std::swap(a, b);
    lo = std::clamp(a, 0.0, static_cast<double>(limit));
    hi = std::clamp(b, 0.0, static_cast<double>(limit));
    if (hi - lo < 1.0) {
      if (lo + 1.0 <= limit) {
        hi = lo + 1.0;
      } else {
        lo = limit - 1.0;
        hi = limit;
      }
    }
  };
  Box out;
  fix(x0, x1, width, out.x0, out.x1);
  fix(y0, y1, height, out.y0, out.y1);
  return out;
}

bool Box::within(int width, int height) const {
  return x0 >= 0 && y0 >= 0 && x1 <= width && y1 <= height && x0 < x1 && y0 < y1;
}

std::size_t MaskInstance2D::pixel_count() const {
  return static_cast<std::size_t>(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{1}));
}

std::size_t clamp_mask_to_box(MaskInstance2D& inst) {
  std::size_t cleared = 0;
  for (int y = 0; y < inst.mask.height; ++y) {
    for (int x = 0; x < inst.mask.width; ++x) {
      auto& m = inst.mask.at(x, y);
      if (m && !inst.detection.box.contains_pixel(x, y)) {
        m = 0;
        ++cleared;
      }
    }
  }
  return cleared;
}

void NoiseConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(drop_rate) || !unit(false_positive_rate)) throw std::invalid_argument("noise rates must lie in [0,1]");
  if (!(box_jitter_px >= 0) || mask_erode_dilate_px < 0) throw std::invalid_argument("noise radii must be >= 0");
}

namespace {

struct VisibleInstance {
  InstanceId instance = 0;
  ClassId class_id = kUnlabeled;
  std::size_t pixels = 0;
  int min_x = 0, min_y = 0, max_x = -1, max_y = -1;
};

void require_face_ids(const RenderedView& view, const TriangleMesh& mesh) {
  if (!view.has_face_ids()) throw std::invalid_argument("oracle backend requires views with a face-id raster");
  if (!mesh.has_labels()) throw std::invalid_argument("oracle backend requires per-face class and instance labels");
}

std::map<InstanceId, VisibleInstance> visible_instances(const RenderedView& view, const TriangleMesh& mesh) {
  std::map<InstanceId, VisibleInstance> out;
  const auto& ids = view.face_id;
  for (int y = 0; y < ids.height; ++y) {
    for (int x = 0; x < ids.width; ++x) {
      const auto f = ids.at(x, y);
      if (f == kNoFace || f >= mesh.faces.size()) continue;
      const InstanceId inst = mesh.face_instance[f];
      auto [it, fresh] = out.try_emplace(inst);
      VisibleInstance& v = it->second;
      if (fresh) {
        v.instance = inst;
        v.class_id = mesh.face_class[f];
        v.min_x = v.max_x = x;
        v.min_y = v.max_y = y;
      }
      ++v.pixels;
      v.min_x = std::min(v.min_x, x);
      v.max_x = std::max(v.max_x, x);
      v.min_y = std::min(v.min_y, y);
      v.max_y = std::max(v.max_y, y);
    }
  }
  return out;
}

Mask instance_mask(const RenderedView& view, const TriangleMesh& mesh, InstanceId inst, const Box& box) {
  Mask mask(view.width(), view.height(), 0);
  const int x_end = std::min(box.col_end(), view.width());
  const int y_end = std::min(box.row_end(), view.height());
  for (int y = std::max(0, box.row_begin()); y < y_end; ++y) {
    for (int x = std::max(0, box.col_begin()); x < x_end; ++x) {
      const auto f = view.face_id.at(x, y);
      if (f != kNoFace && f < mesh.faces.size() && mesh.face_instance[f] == inst) mask.at(x, y) = 1;
    }
  }
  return mask;
}

Mask morph(const Mask& in, int radius, bool dilate) {
  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dx, dy);
    }
  }
  Mask out(in.width, in.height, 0);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      if (dilate) {
        if (!in.at(x, y)) continue;
        for (auto [dx, dy] : disk) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < in.width && ny < in.height) out.at(nx, ny) = 1;
        }
      } else {
        if (!in.at(x, y)) continue;
        bool keep = true;
        for (auto [dx, dy] : disk) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= in.width || ny >= in.height || !in.at(nx, ny)) {
            keep = false;
            break;
          }
        }
        out.at(x, y) = keep ? 1 : 0;
      }
    }
  }
  return out;
}

Box tight_box(const VisibleInstance& v) {
  return Box{static_cast<double>(v.min_x), static_cast<double>(v.min_y), static_cast<double>(v.max_x + 1),
             static_cast<double>(v.max_y + 1)};
}

}  // namespace

std::vector<MaskInstance2D> oracle_with_noise(const RenderedView& view, const TriangleMesh& mesh,
                                              const PromptSpec& prompts, const NoiseConfig& noise) {
  require_face_ids(view, mesh);
  prompts.validate();
  noise.validate();

  const int w = view.width();
  const int h = view.height();
  std::seed_seq seq{static_cast<std::uint32_t>(noise.seed), static_cast<std::uint32_t>(noise.seed >> 32),
                    static_cast<std::uint32_t>(view.view_id)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<MaskInstance2D> out;
  for (const auto& [inst, vis] : visible_instances(view, mesh)) {
    if (vis.pixels < kOracleMinVisiblePixels || !prompts.contains(vis.class_id)) continue;
    const double drop_draw = unit(rng);
    if (noise.drop_rate > 0 && drop_draw < noise.drop_rate) continue;

    Box box = tight_box(vis);
    if (noise.box_jitter_px > 0) {
      std::uniform_real_distribution<double> jitter(-noise.box_jitter_px, noise.box_jitter_px);
      box.x0 = std::round(box.x0 + jitter(rng));
      box.y0 = std::round(box.y0 + jitter(rng));
      box.x1 = std::round(box.x1 + jitter(rng));
      box.y1 = std::round(box.y1 + jitter(rng));
      box = box.clamped(w, h);
    }

    MaskInstance2D m{Detection{vis.class_id, box, 1.0}, instance_mask(view, mesh, inst, box)};
    if (noise.mask_erode_dilate_px > 0) {
      const bool dilate = unit(rng) < 0.5;
      m.mask = morph(m.mask, noise.mask_erode_dilate_px, dilate);
      clamp_mask_to_box(m);
    }
    out.push_back(std::move(m));
  }

  if (noise.false_positive_rate > 0 && !prompts.empty() && unit(rng) < noise.false_positive_rate) {
    std::uniform_int_distribution<std::size_t> pick_class(0, prompts.entries.size() - 1);
    const ClassId cls = prompts.entries[pick_class(rng)].class_id;
    std::uniform_int_distribution<int> pick_w(std::max(1, w / 16), std::max(1, w / 4));
    std::uniform_int_distribution<int> pick_h(std::max(1, h / 16), std::max(1, h / 4));
    const int bw = pick_w(rng);
    const int bh = pick_h(rng);
    std::uniform_int_distribution<int> pick_x(0, w - bw);
    std::uniform_int_distribution<int> pick_y(0, h - bh);
    const int x0 = pick_x(rng);
    const int y0 = pick_y(rng);
    std::uniform_real_distribution<double> pick_score(0.3, 0.7);
    MaskInstance2D m{Detection{cls, Box{double(x0), double(y0), double(x0 + bw), double(y0 + bh)}, pick_score(rng)},
                     Mask(w, h, 0)};
    for (int y = y0; y < y0 + bh; ++y) {
      for (int x = x0; x < x0 + bw; ++x) {
        if (view.face_id.at(x, y) != kNoFace) m.mask.at(x, y) = 1;
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

OracleBackend::OracleBackend(std::shared_ptr<const TriangleMesh> mesh, NoiseConfig noise)
    : mesh_(std::move(mesh)), noise_(noise) {
  if (!mesh_) throw std::invalid_argument("oracle backend needs a mesh");
  noise_.validate();
}

std::vector<Detection> OracleBackend::detect(const RenderedView& view, const PromptSpec& prompts) {
  std::vector<Detection> out;
  for (auto& m : oracle_with_noise(view, *mesh_, prompts, noise_)) out.push_back(m.detection);
  return out;
}

std::vector<MaskInstance2D> OracleBackend::segment(const RenderedView& view, std::span<const Detection> boxes) {
  require_face_ids(view, *mesh_);
  std::vector<MaskInstance2D> out;
  out.reserve(boxes.size());
  for (const Detection& det : boxes) {
    Detection d = det;
    d.box = det.box.clamped(view.width(), view.height());
    // Pick the instance of the detection's class with the most pixels in the
    // box, falling back to the most prominent instance of any class.
    std::map<InstanceId, std::pair<std::size_t, bool>> counts;
    for (int y = d.box.row_begin(); y < d.box.row_end(); ++y) {
      for (int x = d.box.col_begin(); x < d.box.col_end(); ++x) {
        const auto f = view.face_id.at(x, y);
        if (f == kNoFace || f >= mesh_->faces.size()) continue;
        auto& c = counts[mesh_->face_instance[f]];
        ++c.first;
        c.second = c.second || mesh_->face_class[f] == d.class_id;
      }
    }
    std::optional<InstanceId> best;
    std::pair<bool, std::size_t> best_key{false, 0};
    for (const auto& [inst, c] : counts) {
      const std::pair<bool, std::size_t> key{c.second, c.first};
      if (!best || key > best_key) {
        best = inst;
        best_key = key;
      }
    }
    MaskInstance2D m{d, best ? instance_mask(view, *mesh_, *best, d.box) : Mask(view.width(), view.height(), 0)};
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<MaskInstance2D> OracleBackend::detect_segment(const RenderedView& view, const PromptSpec& prompts) {
  return oracle_with_noise(view, *mesh_, prompts, noise_);
}

}  // namespace ovhr3d
