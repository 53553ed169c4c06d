#pragma once

// Convolutional parts of the estimator: a small strided backbone with one
// top-down merge, the necessity-map head, the primary/secondary feature split,
// and the two regressor heads (heatmaps and pose/shape parameters).
//
// Feature maps are [h x w x c]. Reshaping between that and [N x c] tokens is
// free, so heads move between the two views as convenient.

#include <array>
#include <vector>

#include "handocc/nn.hpp"

namespace handocc::net {

struct NetworkConfig {
  std::size_t image_size = 64;
  std::size_t feature_stride = 8;  // 8 (merged stage-3 resolution) or 16 (coarsest stage)
  std::size_t channels = 32;       // feature width c, also the token width d
  std::array<std::size_t, 4> stage_channels{8, 16, 32, 32};
  std::size_t necessity_hidden = 16;
  std::size_t heatmap_hidden = 32;
  std::size_t head_channels = 16;
  std::size_t head_blocks = 4;
  std::size_t joints = 11;
  std::size_t pose_size = 18;
  std::size_t shape_count = 4;

  std::size_t feature_size() const { return image_size / feature_stride; }
  std::size_t tokens() const { return feature_size() * feature_size(); }
  /// Throws ConfigError for unsupported strides, indivisible image sizes or zero widths.
  void validate() const;
};

struct Backbone {
  std::array<nn::Conv2d, 4> stages;
  nn::Conv2d lateral;  // 1x1 on stage 3 (stride 8 only)
  nn::Conv2d top;      // 1x1 on stage 4
  nn::Conv2d smooth;   // 3x3 after the merge
  std::size_t feature_stride = 8;

  static Backbone create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg);
  /// image [H x W x 3] -> F [H/s x W/s x c]
  ad::Var operator()(nn::Binding& b, ad::Var image) const;
};

/// conv3x3 -> ReLU -> conv3x3 -> ReLU -> conv1x1 -> sigmoid; output [h x w x 1].
struct NecessityHead {
  nn::Conv2d conv1, conv2, conv3;

  static NecessityHead create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg);
  ad::Var operator()(nn::Binding& b, ad::Var features) const;
};

struct FeatureSplit {
  ad::Var primary;    // F * M
  ad::Var secondary;  // F * (1 - M)
};

/// M [h x w x 1] broadcast over channels of F [h x w x c].
FeatureSplit split_features(ad::Var features, ad::Var necessity);

/// One encoder-decoder block with a skip connection. Output is the raw
/// [h x w x J] map; see heatmaps_from_map for the [J x h x w] view.
struct HeatmapHead {
  nn::Conv2d encode, inner, project;

  static HeatmapHead create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg);
  ad::Var operator()(nn::Binding& b, ad::Var features) const;
};

/// [h x w x J] -> [J x h x w]
ad::Var heatmaps_from_map(ad::Var map);

struct PoseShape {
  ad::Var theta;  // [pose_size]
  ad::Var beta;   // [shape_count]
};

/// concat(F, H) -> 1x1 conv -> residual blocks -> flatten -> parallel linear layers.
struct ParamHead {
  nn::Conv2d reduce;
  std::vector<nn::ResidualBlock> blocks;
  nn::Linear theta, beta;

  static ParamHead create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg);
  PoseShape operator()(nn::Binding& b, ad::Var features, ad::Var heatmap_map) const;
};

}  // namespace handocc::net
