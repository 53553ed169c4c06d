#include "handocc/model.hpp"

#include <charconv>
#include <ostream>

#include "handocc/error.hpp"

namespace handocc {

namespace {

net::NetworkConfig with_template_sizes(net::NetworkConfig cfg, const hand::HandTemplate& t) {
  cfg.joints = t.joint_count();
  cfg.pose_size = t.pose_size();
  cfg.shape_count = t.shape_count();
  cfg.validate();
  return cfg;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("setting " + key + " expects a nonnegative integer, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ConfigError("setting " + key + " expects a boolean, got '" + value + "'");
}

}  // namespace

HandOccNet::HandOccNet(ModelConfig config, hand::HandTemplate tmpl)
    : config_(std::move(config)), template_(std::move(tmpl)) {
  template_.validate();
  config_.net = with_template_sizes(config_.net, template_);
  const nn::Initializer init(config_.seed);
  backbone_ = net::Backbone::create(params_, init, config_.net);
  necessity_ = net::NecessityHead::create(params_, init, config_.net);
  enhancer_ = inj::Enhancer::create(params_, init, config_.variant, config_.net.channels, config_.gate_pooling);
  heatmap_head_ = net::HeatmapHead::create(params_, init, config_.net);
  param_head_ = net::ParamHead::create(params_, init, config_.net);
}

Prediction HandOccNet::forward(nn::Binding& b, ad::Var image) const {
  const Shape& s = image.shape();
  if (s != Shape{config_.net.image_size, config_.net.image_size, 3}) {
    throw DimensionError("model expects a " + std::to_string(config_.net.image_size) + "x" +
                         std::to_string(config_.net.image_size) + "x3 image, got " + shape_to_string(s));
  }
  Prediction p;
  p.features = backbone_(b, image);
  p.necessity = necessity_(b, p.features);
  p.split = net::split_features(p.features, p.necessity);
  p.enhanced = enhancer_(b, p.split.primary, p.split.secondary);
  p.heatmap_map = heatmap_head_(b, p.enhanced.features);
  p.heatmaps = net::heatmaps_from_map(p.heatmap_map);
  const net::PoseShape ps = param_head_(b, p.enhanced.features, p.heatmap_map);
  p.theta = ps.theta;
  p.beta = ps.beta;
  const hand::PosedHandVars posed = hand::forward_kinematics(template_, p.theta, p.beta);
  p.vertices = posed.vertices;
  p.joints = posed.joints;
  return p;
}

bool apply_model_setting(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "variant") {
    cfg.variant = inj::parse_variant(value);
  } else if (key == "gate_pooling") {
    cfg.gate_pooling = parse_bool(key, value);
  } else if (key == "model_seed") {
    cfg.seed = parse_size(key, value);
  } else if (key == "image_size") {
    cfg.net.image_size = parse_size(key, value);
  } else if (key == "feature_stride") {
    cfg.net.feature_stride = parse_size(key, value);
  } else if (key == "channels") {
    cfg.net.channels = parse_size(key, value);
  } else if (key == "necessity_hidden") {
    cfg.net.necessity_hidden = parse_size(key, value);
  } else if (key == "heatmap_hidden") {
    cfg.net.heatmap_hidden = parse_size(key, value);
  } else if (key == "head_channels") {
    cfg.net.head_channels = parse_size(key, value);
  } else if (key == "head_blocks") {
    cfg.net.head_blocks = parse_size(key, value);
  } else if (key.starts_with("stage") && key.size() == 6 && key[5] >= '1' && key[5] <= '4') {
    cfg.net.stage_channels[static_cast<std::size_t>(key[5] - '1')] = parse_size(key, value);
  } else {
    return false;
  }
  return true;
}

void write_model_settings(std::ostream& out, const ModelConfig& cfg) {
  out << "variant=" << inj::variant_name(cfg.variant) << '\n'
      << "gate_pooling=" << (cfg.gate_pooling ? "true" : "false") << '\n'
      << "model_seed=" << cfg.seed << '\n'
      << "image_size=" << cfg.net.image_size << '\n'
      << "feature_stride=" << cfg.net.feature_stride << '\n'
      << "channels=" << cfg.net.channels << '\n';
  for (std::size_t i = 0; i < 4; ++i) out << "stage" << i + 1 << '=' << cfg.net.stage_channels[i] << '\n';
  out << "necessity_hidden=" << cfg.net.necessity_hidden << '\n'
      << "heatmap_hidden=" << cfg.net.heatmap_hidden << '\n'
      << "head_channels=" << cfg.net.head_channels << '\n'
      << "head_blocks=" << cfg.net.head_blocks << '\n';
}

}  // namespace handocc
