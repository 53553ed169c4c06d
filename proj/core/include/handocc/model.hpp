#pragma once

// The complete estimator: backbone -> necessity split -> enhancer (FIT/SET or
// an ablation stand-in) -> heatmap and parameter heads -> hand model.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "handocc/hand_model.hpp"
#include "handocc/injection.hpp"
#include "handocc/network.hpp"

namespace handocc {

struct ModelConfig {
  net::NetworkConfig net;
  inj::Variant variant = inj::Variant::fit_set;
  bool gate_pooling = true;
  std::uint64_t seed = 7;
};

struct Prediction {
  ad::Var features;    // F
  ad::Var necessity;   // M
  net::FeatureSplit split;
  inj::EnhancerOutput enhanced;
  ad::Var heatmap_map; // [h x w x J]
  ad::Var heatmaps;    // [J x h x w]
  ad::Var theta;
  ad::Var beta;
  ad::Var vertices;    // [V x 3] mm
  ad::Var joints;      // [J x 3] mm
};

class HandOccNet {
 public:
  /// Builds and initializes every parameter. Network joint/pose/shape sizes
  /// are taken from the template.
  HandOccNet(ModelConfig config, hand::HandTemplate tmpl);

  Prediction forward(nn::Binding& b, ad::Var image) const;

  const ModelConfig& config() const noexcept { return config_; }
  const hand::HandTemplate& hand_template() const noexcept { return template_; }
  nn::ParameterSet& params() noexcept { return params_; }
  const nn::ParameterSet& params() const noexcept { return params_; }

 private:
  ModelConfig config_;
  hand::HandTemplate template_;
  nn::ParameterSet params_;
  net::Backbone backbone_;
  net::NecessityHead necessity_;
  inj::Enhancer enhancer_;
  net::HeatmapHead heatmap_head_;
  net::ParamHead param_head_;
};

// ---- key=value model settings (used by checkpoint manifests and configs) -----

/// Applies one recognised key; returns false for keys that are not model settings.
bool apply_model_setting(ModelConfig& cfg, const std::string& key, const std::string& value);
void write_model_settings(std::ostream& out, const ModelConfig& cfg);

}  // namespace handocc
