#pragma once

// Deterministic occluded-hand samples: a posed low-poly hand rendered as a
// shaded palm-and-digits silhouette under a fixed orthographic camera, with
// opaque occluders composited over it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "handocc/hand_model.hpp"

namespace handocc::synth {

enum class Split : std::uint32_t { train = 0, test = 1 };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct DatasetConfig {
  std::uint64_t seed = 1;
  Split split = Split::train;
  std::size_t count = 100;
  std::size_t image_size = 64;
  std::size_t heatmap_stride = 8;  // feature-map stride the heatmaps are rendered at
  double heatmap_sigma = 2.0;      // in heatmap pixels
  double occlusion_lo = 0.1;
  double occlusion_hi = 0.5;
  double pose_range = 1.2;         // max finger flexion, radians
  double global_range = 0.5;       // max global rotation per axis, radians
  double shape_range = 1.0;        // beta ~ U(-r, r)

  void validate() const;
};

/// Orthographic camera: u = cx + s x, v = cy - s (y - y0), in image pixels.
struct Camera {
  double scale;
  double cx, cy;
  double y0;

  static Camera for_image(std::size_t image_size);
  /// joints [J x 3] mm -> [J x 2] pixel (u, v)
  Tensor project(const Tensor& points) const;
};

struct Sample {
  Tensor image;        // [H x W x 3] in [0, 1]
  Tensor theta;        // [pose_size]
  Tensor beta;         // [shape_count]
  Tensor mesh;         // [V x 3] mm
  Tensor joints3d;     // [J x 3] mm
  Tensor joints2d;     // [J x 2] image pixels (u, v)
  Tensor heatmaps;     // [J x h x w]
  Tensor mask;         // [H x W], 1 where the hand is drawn (before occluders)
  double occlusion = 0.0;
};

/// Renders one Gaussian per joint: value exp(-d^2 / (2 sigma^2)) at distance d
/// (in heatmap pixels) from the joint, so a joint on a pixel centre peaks at 1
/// there. joints2d is in heatmap pixel units with pixel centres at integers;
/// a joint that does not fall on any pixel's area produces an all-zero channel.
Tensor render_heatmaps(const Tensor& joints2d, std::size_t h, std::size_t w, double sigma);

class Generator {
 public:
  Generator(DatasetConfig config, hand::HandTemplate tmpl);

  /// Sample `index` of the configured split. Independent of call order.
  Sample sample(std::size_t index) const;
  std::vector<Sample> generate() const;

  const DatasetConfig& config() const noexcept { return config_; }
  const Camera& camera() const noexcept { return camera_; }

 private:
  DatasetConfig config_;
  hand::HandTemplate template_;
  Camera camera_;
};

/// Per-sample seed derived from (dataset seed, split, index).
std::uint64_t sample_seed(std::uint64_t seed, Split split, std::size_t index);

// ---- dataset files ----------------------------------------------------------
// <dir>/data.bin holds the OTNS records of every sample in field order;
// <dir>/index.json lists fields, generation settings and per-sample offsets.

void save_dataset(const std::filesystem::path& dir, const DatasetConfig& config, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);
/// Generation settings recorded in index.json.
DatasetConfig load_dataset_config(const std::filesystem::path& dir);

}  // namespace handocc::synth
