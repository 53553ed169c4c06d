#include "handocc/nn.hpp"

#include <cmath>
#include <random>

#include "handocc/error.hpp"

namespace handocc::nn {

ParamId ParameterSet::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
  const ParamId id = entries_.size();
  index_.emplace(name, id);
  entries_.push_back({std::move(name), std::move(init)});
  return id;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::optional<ParamId> ParameterSet::find(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<NamedTensor> ParameterSet::to_table() const {
  std::vector<NamedTensor> table;
  table.reserve(entries_.size());
  for (const auto& e : entries_) table.push_back({e.name, e.value});
  return table;
}

void ParameterSet::load_table(const std::vector<NamedTensor>& table) {
  if (table.size() != entries_.size()) {
    throw IoError("checkpoint holds " + std::to_string(table.size()) + " tensors, model expects " +
                  std::to_string(entries_.size()));
  }
  for (const auto& [name, value] : table) {
    const auto id = find(name);
    if (!id) throw IoError("checkpoint tensor " + name + " is not a model parameter");
    if (entries_[*id].value.shape() != value.shape()) {
      throw IoError("checkpoint tensor " + name + " has shape " + shape_to_string(value.shape()) + ", expected " +
                    shape_to_string(entries_[*id].value.shape()));
    }
    entries_[*id].value = value;
  }
}

bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor Initializer::normal(const std::string& name, Shape shape, double stddev) const {
  std::mt19937_64 rng(mix_seed(seed_, fnv1a(name)));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor Initializer::kaiming(const std::string& name, Shape shape, std::size_t fan_in) const {
  return normal(name, std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Binding::Binding(ad::Tape& tape, const ParameterSet& params, bool requires_grad)
    : tape_(&tape), params_(&params), requires_grad_(requires_grad), vars_(params.size()) {}

Binding::Binding(ad::Tape& tape, const ParameterSet& params, std::span<const ad::Var> overrides)
    : tape_(&tape), params_(&params), requires_grad_(true), vars_(overrides.begin(), overrides.end()) {
  if (overrides.size() != params.size()) throw UsageError("binding overrides must cover every parameter");
}

ad::Var Binding::operator[](ParamId id) {
  ad::Var& v = vars_.at(id);
  if (!v.valid()) v = tape_->parameter(params_->value(id), requires_grad_);
  return v;
}

std::vector<Tensor> Binding::gradients() const {
  std::vector<Tensor> grads;
  grads.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    grads.push_back(vars_[i].valid() ? tape_->grad(vars_[i]) : Tensor(params_->value(i).shape()));
  }
  return grads;
}

Conv2d Conv2d::create(ParameterSet& params, const Initializer& init, const std::string& name, std::size_t in,
                      std::size_t out, std::size_t kernel, std::size_t stride) {
  Conv2d c;
  c.weight = params.add(name + ".weight", init.kaiming(name + ".weight", {kernel, kernel, in, out}, kernel * kernel * in));
  c.bias = params.add(name + ".bias", Tensor({out}));
  c.stride = stride;
  return c;
}

ad::Var Conv2d::operator()(Binding& b, ad::Var x) const { return ad::conv2d(x, b[weight], b[bias], stride); }

Linear Linear::create(ParameterSet& params, const Initializer& init, const std::string& name, std::size_t in,
                      std::size_t out, bool with_bias) {
  Linear l;
  l.weight = params.add(name + ".weight", init.kaiming(name + ".weight", {in, out}, in));
  if (with_bias) l.bias = params.add(name + ".bias", Tensor({out}));
  return l;
}

ad::Var Linear::operator()(Binding& b, ad::Var x) const {
  const ad::Var y = ad::matmul(x, b[weight]);
  return bias ? ad::add_bias(y, b[*bias]) : y;
}

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& name, std::size_t width, double eps) {
  LayerNorm ln;
  ln.gamma = params.add(name + ".gamma", Tensor({width}, 1.0));
  ln.beta = params.add(name + ".beta", Tensor({width}));
  ln.eps = eps;
  return ln;
}

ad::Var LayerNorm::operator()(Binding& b, ad::Var x) const { return ad::layer_norm(x, b[gamma], b[beta], eps); }

Mlp Mlp::create(ParameterSet& params, const Initializer& init, const std::string& name, std::size_t width,
                std::size_t hidden) {
  return {Linear::create(params, init, name + ".fc1", width, hidden),
          Linear::create(params, init, name + ".fc2", hidden, width)};
}

ad::Var Mlp::operator()(Binding& b, ad::Var x) const { return fc2(b, ad::relu(fc1(b, x))); }

ResidualBlock ResidualBlock::create(ParameterSet& params, const Initializer& init, const std::string& name,
                                    std::size_t channels) {
  ResidualBlock block{Conv2d::create(params, init, name + ".conv1", channels, channels, 3),
                      Conv2d::create(params, init, name + ".conv2", channels, channels, 3)};
  // Zero last convolution: the block starts as relu(x), so stacking blocks
  // does not compound the activation scale.
  Tensor& w = params.value(block.conv2.weight);
  w = Tensor(w.shape());
  return block;
}

ad::Var ResidualBlock::operator()(Binding& b, ad::Var x) const {
  return ad::relu(ad::add(x, conv2(b, ad::relu(conv1(b, x)))));
}

}  // namespace handocc::nn
