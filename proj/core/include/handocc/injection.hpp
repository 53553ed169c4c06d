#pragma once

// Cross-attention feature injection (FIT), the self-attention refinement block
// (SET), and the enhancer that wires either of them (or an ablation stand-in)
// between the feature split and the regressor.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "handocc/nn.hpp"

namespace handocc::inj {

// ---- attention building blocks, all on [N x d] token matrices ---------------

/// softmax(q k^T / sqrt(d_k)); rows sum to 1.
ad::Var softmax_attention(ad::Var q, ad::Var k);
/// Scaled logits q k^T / sqrt(d_k).
ad::Var scaled_logits(ad::Var q, ad::Var k);
/// sigmoid(row_mean(q k^T / sqrt(d_k))) as [N x 1]. With `pooled` false the
/// pooling is skipped and the full [N x N] sigmoid map is returned.
ad::Var sigmoid_gate(ad::Var q, ad::Var k, bool pooled = true);
/// Row i of c_soft scaled by gate[i]; an [N x N] gate multiplies elementwise.
ad::Var fuse(ad::Var c_soft, ad::Var gate);
/// R = C v, with no residual of any kind.
ad::Var inject(ad::Var c, ad::Var v);

enum class Correlation { gated, softmax_only, double_softmax };
enum class QueryResidual { none, q_soft, q_sig };

struct FitOptions {
  Correlation correlation = Correlation::gated;
  QueryResidual residual = QueryResidual::none;
  bool gate_pooling = true;  // false is a debug setting known to destabilize training
};

struct FitOutput {
  ad::Var f_fit;   // [h x w x d]
  ad::Var r_fit;   // [N x d]
  ad::Var c_soft;  // [N x N]
  ad::Var c_gate;  // [N x 1] sigmoid gate, [N x N] without pooling or second softmax; invalid for softmax_only
  ad::Var c;       // [N x N]
};

struct Fit {
  nn::Linear q_soft, k_soft, q_gate, k_gate, v;
  nn::LayerNorm norm;
  nn::Mlp mlp;
  FitOptions options;

  static Fit create(nn::ParameterSet& params, const nn::Initializer& init, const std::string& name, std::size_t d,
                    FitOptions options = {});
  /// primary, secondary: [h x w x d]. Queries come from the secondary map, keys and values from the primary.
  FitOutput operator()(nn::Binding& b, ad::Var primary, ad::Var secondary) const;
};

struct SetOutput {
  ad::Var f_set;  // [h x w x d]
  ad::Var r_set;  // [N x d]
  ad::Var c;      // [N x N]
};

struct Set {
  nn::Linear q, k, v;
  nn::LayerNorm norm;
  nn::Mlp mlp;

  static Set create(nn::ParameterSet& params, const nn::Initializer& init, const std::string& name, std::size_t d);
  SetOutput operator()(nn::Binding& b, ad::Var features) const;
};

// ---- ablation variants ------------------------------------------------------

enum class Variant {
  identity,
  residual_blocks,
  fit_only,
  set_only,
  fit_set,
  softmax_only,
  double_softmax,
  resconn_qsoft,
  resconn_qsig,
  set_identity,
  set_resblocks,
  set_two_transformers,
};

const std::vector<Variant>& all_variants();
std::string_view variant_name(Variant v);
/// Throws ConfigError for an unknown tag.
Variant parse_variant(std::string_view tag);

struct EnhancerOutput {
  ad::Var features;                 // map handed to the regressor
  std::optional<FitOutput> fit;
  std::vector<SetOutput> sets;
};

/// Everything between the feature split and the regressor heads.
class Enhancer {
 public:
  static Enhancer create(nn::ParameterSet& params, const nn::Initializer& init, Variant variant, std::size_t d,
                         bool gate_pooling = true);
  EnhancerOutput operator()(nn::Binding& b, ad::Var primary, ad::Var secondary) const;
  Variant variant() const noexcept { return variant_; }

 private:
  Variant variant_ = Variant::fit_set;
  std::optional<Fit> fit_;
  std::vector<Set> sets_;
  std::vector<nn::ResidualBlock> blocks_;
};

}  // namespace handocc::inj
