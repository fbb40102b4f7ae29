#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovhr3d/raster.hpp"
#include "ovhr3d/renderer.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

struct PromptEntry {
  std::string phrase;
  ClassId class_id = kUnlabeled;
  friend bool operator==(const PromptEntry&, const PromptEntry&) = default;
};

/// Ordered phrase -> class mapping sent to the detector.
struct PromptSpec {
  std::vector<PromptEntry> entries;

  /// Throws std::invalid_argument on empty/duplicate phrases or class ids < 1.
  void validate() const;
  bool contains(ClassId id) const;
  std::optional<std::size_t> index_of(ClassId id) const;
  std::vector<std::string> phrases() const;
  bool empty() const { return entries.empty(); }
  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

/// Axis-aligned pixel box. Covers pixel columns [floor(x0), ceil(x1)) and
/// rows [floor(y0), ceil(y1)); a tight box around pixels a..b is (a, b+1).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int col_begin() const;
  int col_end() const;
  int row_begin() const;
  int row_end() const;
  bool contains_pixel(int x, int y) const {
    return x >= col_begin() && x < col_end() && y >= row_begin() && y < row_end();
  }
  /// Clamped to [0,w]x[0,h] with at least one pixel of extent.
  Box clamped(int width, int height) const;
  bool within(int width, int height) const;
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  ClassId class_id = kUnlabeled;
  Box box;
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct MaskInstance2D {
  Detection detection;
  Mask mask;
  std::size_t pixel_count() const;
  friend bool operator==(const MaskInstance2D&, const MaskInstance2D&) = default;
};

/// Zeroes every mask pixel outside the box. Returns the number cleared.
std::size_t clamp_mask_to_box(MaskInstance2D& inst);

struct NoiseConfig {
  double box_jitter_px = 0.0;
  double drop_rate = 0.0;
  /// Probability of one spurious detection per view.
  double false_positive_rate = 0.0;
  int mask_erode_dilate_px = 0;
  std::uint64_t seed = 0;

  void validate() const;
  bool is_zero() const {
    return box_jitter_px == 0 && drop_rate == 0 && false_positive_rate == 0 && mask_erode_dilate_px == 0;
  }
};

/// Detector + promptable segmenter. Implementations must tolerate
/// concurrent calls for different views.
class PerceptionBackend {
 public:
  virtual ~PerceptionBackend() = default;

  virtual std::vector<Detection> detect(const RenderedView& view, const PromptSpec& prompts) = 0;
  /// One mask per detection, in input order.
  virtual std::vector<MaskInstance2D> segment(const RenderedView& view, std::span<const Detection> boxes) = 0;
  /// The per-view round trip the pipeline uses.
  virtual std::vector<MaskInstance2D> detect_segment(const RenderedView& view, const PromptSpec& prompts) {
    const auto dets = detect(view, prompts);
    return segment(view, dets);
  }
};

/// Objects with fewer visible pixels than this are not detected by the oracle.
inline constexpr std::size_t kOracleMinVisiblePixels = 10;

/// Ground-truth detections and masks read off the face-id raster, then
/// perturbed per `noise`. Deterministic in (view, mesh, prompts, noise).
std::vector<MaskInstance2D> oracle_with_noise(const RenderedView& view, const TriangleMesh& mesh,
                                              const PromptSpec& prompts, const NoiseConfig& noise);

/// Backend answering from the mesh's ground-truth face labels.
class OracleBackend final : public PerceptionBackend {
 public:
  explicit OracleBackend(std::shared_ptr<const TriangleMesh> mesh, NoiseConfig noise = {});

  std::vector<Detection> detect(const RenderedView& view, const PromptSpec& prompts) override;
  std::vector<MaskInstance2D> segment(const RenderedView& view, std::span<const Detection> boxes) override;
  std::vector<MaskInstance2D> detect_segment(const RenderedView& view, const PromptSpec& prompts) override;

 private:
  std::shared_ptr<const TriangleMesh> mesh_;
  NoiseConfig noise_;
};

}  // namespace ovhr3d
