#include "handocc/network.hpp"

#include <cmath>

#include "handocc/error.hpp"

namespace handocc::net {

void NetworkConfig::validate() const {
  if (feature_stride != 8 && feature_stride != 16) {
    throw ConfigError("feature_stride must be 8 or 16, got " + std::to_string(feature_stride));
  }
  if (image_size == 0 || image_size % 16 != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by the backbone stride 16");
  }
  if (feature_size() % 2 != 0) throw ConfigError("feature map side must be even for the heatmap head");
  for (std::size_t c : stage_channels) {
    if (c == 0) throw ConfigError("backbone stage width must be positive");
  }
  if (channels == 0 || necessity_hidden == 0 || heatmap_hidden == 0 || head_channels == 0 || joints == 0 ||
      pose_size == 0 || shape_count == 0) {
    throw ConfigError("network widths must be positive");
  }
}

Backbone Backbone::create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg) {
  cfg.validate();
  Backbone bb;
  std::size_t in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    bb.stages[i] = nn::Conv2d::create(params, init, "backbone.stage" + std::to_string(i + 1), in,
                                      cfg.stage_channels[i], 3, 2);
    in = cfg.stage_channels[i];
  }
  bb.feature_stride = cfg.feature_stride;
  if (cfg.feature_stride == 8) {
    bb.lateral = nn::Conv2d::create(params, init, "backbone.lateral", cfg.stage_channels[2], cfg.channels, 1);
  }
  bb.top = nn::Conv2d::create(params, init, "backbone.top", cfg.stage_channels[3], cfg.channels, 1);
  bb.smooth = nn::Conv2d::create(params, init, "backbone.smooth", cfg.channels, cfg.channels, 3);
  return bb;
}

ad::Var Backbone::operator()(nn::Binding& b, ad::Var image) const {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[2] != 3) throw DimensionError("backbone: image must be [H x W x 3], got " + shape_to_string(s));
  if (s[0] % 16 != 0 || s[1] % 16 != 0) {
    throw ConfigError("backbone: image " + shape_to_string(s) + " is not divisible by the total stride 16");
  }
  const ad::Var s1 = ad::relu(stages[0](b, image));
  const ad::Var s2 = ad::relu(stages[1](b, s1));
  const ad::Var s3 = ad::relu(stages[2](b, s2));
  const ad::Var s4 = ad::relu(stages[3](b, s3));
  ad::Var merged = top(b, s4);
  if (feature_stride == 8) merged = ad::add(lateral(b, s3), ad::upsample2(merged));
  return smooth(b, merged);
}

NecessityHead NecessityHead::create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg) {
  NecessityHead head{nn::Conv2d::create(params, init, "necessity.conv1", cfg.channels, cfg.necessity_hidden, 3),
                     nn::Conv2d::create(params, init, "necessity.conv2", cfg.necessity_hidden, cfg.necessity_hidden, 3),
                     nn::Conv2d::create(params, init, "necessity.conv3", cfg.necessity_hidden, 1, 1)};
  // Small logits so M starts near 0.5 and both halves of the split carry signal.
  params.value(head.conv3.weight) =
      init.normal("necessity.conv3.weight", {1, 1, cfg.necessity_hidden, 1}, 1e-2 / std::sqrt(double(cfg.necessity_hidden)));
  return head;
}

ad::Var NecessityHead::operator()(nn::Binding& b, ad::Var features) const {
  return ad::sigmoid(conv3(b, ad::relu(conv2(b, ad::relu(conv1(b, features))))));
}

FeatureSplit split_features(ad::Var features, ad::Var necessity) {
  const Shape& f = features.shape();
  const Shape& m = necessity.shape();
  if (f.size() != 3 || m.size() != 3 || m[0] != f[0] || m[1] != f[1] || m[2] != 1) {
    throw DimensionError("split_features: map " + shape_to_string(f) + " does not match necessity " +
                         shape_to_string(m));
  }
  const std::size_t n = f[0] * f[1];
  const ad::Var tokens = ad::reshape(features, {n, f[2]});
  const ad::Var keep = ad::reshape(necessity, {n, 1});
  return {ad::reshape(ad::scale_rows(tokens, keep), f),
          ad::reshape(ad::scale_rows(tokens, ad::affine(keep, -1.0, 1.0)), f)};
}

HeatmapHead HeatmapHead::create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg) {
  return {nn::Conv2d::create(params, init, "heatmap.encode", cfg.channels, cfg.heatmap_hidden, 3),
          nn::Conv2d::create(params, init, "heatmap.inner", cfg.heatmap_hidden, cfg.heatmap_hidden, 3),
          nn::Conv2d::create(params, init, "heatmap.project", cfg.heatmap_hidden, cfg.joints, 1)};
}

ad::Var HeatmapHead::operator()(nn::Binding& b, ad::Var features) const {
  const ad::Var skip = ad::relu(encode(b, features));
  const ad::Var low = ad::relu(inner(b, ad::avg_pool2(skip)));
  return project(b, ad::add(skip, ad::upsample2(low)));
}

ad::Var heatmaps_from_map(ad::Var map) {
  const Shape s = map.shape();
  const ad::Var flat = ad::transpose(ad::reshape(map, {s[0] * s[1], s[2]}));
  return ad::reshape(flat, {s[2], s[0], s[1]});
}

ParamHead ParamHead::create(nn::ParameterSet& params, const nn::Initializer& init, const NetworkConfig& cfg) {
  ParamHead head;
  head.reduce = nn::Conv2d::create(params, init, "regressor.reduce", cfg.channels + cfg.joints, cfg.head_channels, 1);
  for (std::size_t i = 0; i < cfg.head_blocks; ++i) {
    head.blocks.push_back(
        nn::ResidualBlock::create(params, init, "regressor.block" + std::to_string(i), cfg.head_channels));
  }
  const std::size_t flat = cfg.tokens() * cfg.head_channels;
  head.theta = nn::Linear::create(params, init, "regressor.theta", flat, cfg.pose_size);
  head.beta = nn::Linear::create(params, init, "regressor.beta", flat, cfg.shape_count);
  // Start near the rest pose and mean shape; a full-gain output layer poses the
  // hand at random and the first updates spend themselves undoing that.
  const double small = 1e-2 / std::sqrt(static_cast<double>(flat));
  params.value(head.theta.weight) = init.normal("regressor.theta.weight", {flat, cfg.pose_size}, small);
  params.value(head.beta.weight) = init.normal("regressor.beta.weight", {flat, cfg.shape_count}, small);
  return head;
}

PoseShape ParamHead::operator()(nn::Binding& b, ad::Var features, ad::Var heatmap_map) const {
  ad::Var x = ad::relu(reduce(b, ad::concat_last(features, heatmap_map)));
  for (const auto& block : blocks) x = block(b, x);
  const ad::Var flat = ad::reshape(x, {1, x.value().size()});
  const ad::Var th = theta(b, flat), be = beta(b, flat);
  return {ad::reshape(th, {th.value().size()}), ad::reshape(be, {be.value().size()})};
}

}  // namespace handocc::net
