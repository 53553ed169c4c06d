#include "handocc/injection.hpp"

#include <array>
#include <cmath>

#include "handocc/error.hpp"

namespace handocc::inj {

namespace {

void require_tokens(ad::Var q, ad::Var k, const char* where) {
  const Shape& a = q.shape();
  const Shape& b = k.shape();
  if (a.size() != 2 || b.size() != 2 || a[1] != b[1]) {
    throw DimensionError(std::string(where) + ": query " + shape_to_string(a) + " and key " + shape_to_string(b) +
                         " are not token matrices of equal width");
  }
}

ad::Var tokens_of(ad::Var map) {
  const Shape& s = map.shape();
  if (s.size() != 3) throw DimensionError("expected an [h x w x d] map, got " + shape_to_string(s));
  return ad::reshape(map, {s[0] * s[1], s[2]});
}

// x + r + MLP(LN(r)), with r reshaped back onto the map.
ad::Var feed_forward(nn::Binding& b, const nn::LayerNorm& norm, const nn::Mlp& mlp, ad::Var base, ad::Var r) {
  const Shape shape = base.shape();
  const ad::Var refined = ad::add(r, mlp(b, norm(b, r)));
  return ad::add(base, ad::reshape(refined, shape));
}

}  // namespace

ad::Var scaled_logits(ad::Var q, ad::Var k) {
  require_tokens(q, k, "attention");
  return ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(k.shape()[1])));
}

ad::Var softmax_attention(ad::Var q, ad::Var k) { return ad::softmax_rows(scaled_logits(q, k)); }

ad::Var sigmoid_gate(ad::Var q, ad::Var k, bool pooled) {
  const ad::Var logits = scaled_logits(q, k);
  return ad::sigmoid(pooled ? ad::row_means(logits) : logits);
}

ad::Var fuse(ad::Var c_soft, ad::Var gate) {
  if (gate.shape() == c_soft.shape()) return ad::mul(c_soft, gate);
  return ad::scale_rows(c_soft, gate);
}

ad::Var inject(ad::Var c, ad::Var v) { return ad::matmul(c, v); }

namespace {

// The feed-forward branch starts switched off, so a freshly built block only
// adds the attention result to its input.
void zero_output_layer(nn::ParameterSet& params, const nn::Mlp& mlp) {
  Tensor& w = params.value(mlp.fc2.weight);
  w = Tensor(w.shape());
}

}  // namespace

Fit Fit::create(nn::ParameterSet& params, const nn::Initializer& init, const std::string& name, std::size_t d,
                FitOptions options) {
  Fit f;
  f.options = options;
  f.q_soft = nn::Linear::create(params, init, name + ".q_soft", d, d);
  // A key bias adds a per-row constant to the logits, which a row softmax
  // ignores, so keys feeding only a softmax carry no bias.
  f.k_soft = nn::Linear::create(params, init, name + ".k_soft", d, d, false);
  if (options.correlation != Correlation::softmax_only) {
    f.q_gate = nn::Linear::create(params, init, name + ".q_gate", d, d);
    f.k_gate = nn::Linear::create(params, init, name + ".k_gate", d, d, options.correlation == Correlation::gated);
  }
  f.v = nn::Linear::create(params, init, name + ".v", d, d);
  f.norm = nn::LayerNorm::create(params, name + ".norm", d);
  f.mlp = nn::Mlp::create(params, init, name + ".mlp", d, 4 * d);
  zero_output_layer(params, f.mlp);
  return f;
}

FitOutput Fit::operator()(nn::Binding& b, ad::Var primary, ad::Var secondary) const {
  if (primary.shape() != secondary.shape()) {
    throw DimensionError("FIT: primary " + shape_to_string(primary.shape()) + " and secondary " +
                         shape_to_string(secondary.shape()) + " differ");
  }
  const ad::Var fp = tokens_of(primary), fs = tokens_of(secondary);
  FitOutput out;
  const ad::Var qs = q_soft(b, fs);
  out.c_soft = softmax_attention(qs, k_soft(b, fp));
  std::optional<ad::Var> qg;
  switch (options.correlation) {
    case Correlation::gated:
      qg = q_gate(b, fs);
      out.c_gate = sigmoid_gate(*qg, k_gate(b, fp), options.gate_pooling);
      out.c = fuse(out.c_soft, out.c_gate);
      break;
    case Correlation::double_softmax:
      qg = q_gate(b, fs);
      out.c_gate = softmax_attention(*qg, k_gate(b, fp));
      out.c = ad::mul(out.c_soft, out.c_gate);
      break;
    case Correlation::softmax_only:
      out.c = out.c_soft;
      break;
  }
  out.r_fit = inject(out.c, v(b, fp));
  if (options.residual == QueryResidual::q_soft) {
    out.r_fit = ad::add(out.r_fit, qs);
  } else if (options.residual == QueryResidual::q_sig) {
    if (!qg) throw ConfigError("FIT: a gate-query residual needs the gate projections");
    out.r_fit = ad::add(out.r_fit, *qg);
  }
  out.f_fit = feed_forward(b, norm, mlp, primary, out.r_fit);
  return out;
}

Set Set::create(nn::ParameterSet& params, const nn::Initializer& init, const std::string& name, std::size_t d) {
  Set s;
  s.q = nn::Linear::create(params, init, name + ".q", d, d);
  s.k = nn::Linear::create(params, init, name + ".k", d, d, false);
  s.v = nn::Linear::create(params, init, name + ".v", d, d);
  s.norm = nn::LayerNorm::create(params, name + ".norm", d);
  s.mlp = nn::Mlp::create(params, init, name + ".mlp", d, 4 * d);
  zero_output_layer(params, s.mlp);
  return s;
}

SetOutput Set::operator()(nn::Binding& b, ad::Var features) const {
  const ad::Var x = tokens_of(features);
  const ad::Var qx = q(b, x);
  SetOutput out;
  out.c = softmax_attention(qx, k(b, x));
  out.r_set = ad::add(qx, ad::matmul(out.c, v(b, x)));
  out.f_set = feed_forward(b, norm, mlp, features, out.r_set);
  return out;
}

// ---- variants ---------------------------------------------------------------

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 12> kVariantNames{{
    {Variant::identity, "identity"},
    {Variant::residual_blocks, "residual_blocks"},
    {Variant::fit_only, "fit_only"},
    {Variant::set_only, "set_only"},
    {Variant::fit_set, "fit_set"},
    {Variant::softmax_only, "softmax_only"},
    {Variant::double_softmax, "double_softmax"},
    {Variant::resconn_qsoft, "resconn_qsoft"},
    {Variant::resconn_qsig, "resconn_qsig"},
    {Variant::set_identity, "set_identity"},
    {Variant::set_resblocks, "set_resblocks"},
    {Variant::set_two_transformers, "set_two_transformers"},
}};

}  // namespace

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> v;
    for (const auto& [variant, name] : kVariantNames) v.push_back(variant);
    return v;
  }();
  return all;
}

std::string_view variant_name(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  return "unknown";
}

Variant parse_variant(std::string_view tag) {
  for (const auto& [variant, name] : kVariantNames) {
    if (name == tag) return variant;
  }
  std::string known;
  for (const auto& entry : kVariantNames) known += (known.empty() ? "" : ", ") + std::string(entry.second);
  throw ConfigError("unknown variant '" + std::string(tag) + "' (known: " + known + ")");
}

Enhancer Enhancer::create(nn::ParameterSet& params, const nn::Initializer& init, Variant variant, std::size_t d,
                          bool gate_pooling) {
  Enhancer e;
  e.variant_ = variant;
  FitOptions opt;
  opt.gate_pooling = gate_pooling;
  std::size_t set_count = 0, block_count = 0;
  bool with_fit = true;
  switch (variant) {
    case Variant::identity: with_fit = false; break;
    case Variant::residual_blocks: with_fit = false; block_count = 6; break;
    case Variant::fit_only:
    case Variant::set_identity: break;
    case Variant::set_only: with_fit = false; set_count = 1; break;
    case Variant::fit_set: set_count = 1; break;
    case Variant::softmax_only: opt.correlation = Correlation::softmax_only; set_count = 1; break;
    case Variant::double_softmax: opt.correlation = Correlation::double_softmax; set_count = 1; break;
    case Variant::resconn_qsoft: opt.residual = QueryResidual::q_soft; set_count = 1; break;
    case Variant::resconn_qsig: opt.residual = QueryResidual::q_sig; set_count = 1; break;
    case Variant::set_resblocks: block_count = 3; break;
    case Variant::set_two_transformers: set_count = 2; break;
  }
  if (with_fit) e.fit_ = Fit::create(params, init, "fit", d, opt);
  for (std::size_t i = 0; i < set_count; ++i) e.sets_.push_back(Set::create(params, init, "set" + std::to_string(i), d));
  for (std::size_t i = 0; i < block_count; ++i) {
    e.blocks_.push_back(nn::ResidualBlock::create(params, init, "enhance.block" + std::to_string(i), d));
  }
  return e;
}

EnhancerOutput Enhancer::operator()(nn::Binding& b, ad::Var primary, ad::Var secondary) const {
  EnhancerOutput out;
  ad::Var x = primary;
  if (fit_) {
    out.fit = (*fit_)(b, primary, secondary);
    x = out.fit->f_fit;
  }
  for (const auto& block : blocks_) x = block(b, x);
  for (const auto& set : sets_) {
    out.sets.push_back(set(b, x));
    x = out.sets.back().f_set;
  }
  out.features = x;
  return out;
}

}  // namespace handocc::inj
