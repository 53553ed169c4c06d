#pragma once

// Trainable parameter storage and the layer types shared by every network
// component. Layers hold parameter ids only; a Binding maps those ids onto a
// tape for one forward pass.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "handocc/autodiff.hpp"
#include "handocc/serialize.hpp"

namespace handocc::nn {

using ParamId = std::size_t;

class ParameterSet {
 public:
  ParamId add(std::string name, Tensor init);

  std::size_t size() const noexcept { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t scalar_count() const noexcept;

  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  Tensor& value(ParamId id) { return entries_.at(id).value; }
  const Tensor& value(ParamId id) const { return entries_.at(id).value; }
  std::optional<ParamId> find(std::string_view name) const;

  std::vector<NamedTensor> to_table() const;
  /// Replaces values from a table; names and shapes must match exactly.
  void load_table(const std::vector<NamedTensor>& table);

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);

 private:
  struct Entry {
    std::string name;
    Tensor value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, ParamId> index_;
};

/// Deterministic weight initialization. Each tensor draws from its own stream
/// seeded by (seed, name), so identically named layers get identical initial
/// values regardless of what else the model contains.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : seed_(seed) {}

  /// He/Kaiming normal: N(0, 2 / fan_in).
  Tensor kaiming(const std::string& name, Shape shape, std::size_t fan_in) const;
  Tensor normal(const std::string& name, Shape shape, double stddev) const;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

/// 64-bit FNV-1a, used for stream derivation.
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 0xcbf29ce484222325ULL);
/// SplitMix64 finalizer for combining seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

class Binding {
 public:
  /// Binds every parameter as a gradient-receiving leaf (or as a constant when
  /// `requires_grad` is false).
  Binding(ad::Tape& tape, const ParameterSet& params, bool requires_grad = true);
  /// Uses caller-provided vars in parameter order, e.g. for finite differences.
  Binding(ad::Tape& tape, const ParameterSet& params, std::span<const ad::Var> overrides);

  ad::Var operator[](ParamId id);
  ad::Tape& tape() noexcept { return *tape_; }

  /// Parameter gradients after tape.backward(); unused parameters get zeros.
  std::vector<Tensor> gradients() const;

 private:
  ad::Tape* tape_;
  const ParameterSet* params_;
  bool requires_grad_;
  std::vector<ad::Var> vars_;
};

// ---- layers -----------------------------------------------------------------

struct Conv2d {
  ParamId weight = 0;
  ParamId bias = 0;
  std::size_t stride = 1;

  static Conv2d create(ParameterSet& params, const Initializer& init, const std::string& name, std::size_t in,
                       std::size_t out, std::size_t kernel, std::size_t stride = 1);
  ad::Var operator()(Binding& b, ad::Var x) const;
};

/// y = x W + b over token rows; x: [N x in].
struct Linear {
  ParamId weight = 0;
  std::optional<ParamId> bias;

  static Linear create(ParameterSet& params, const Initializer& init, const std::string& name, std::size_t in,
                       std::size_t out, bool with_bias = true);
  ad::Var operator()(Binding& b, ad::Var x) const;
};

struct LayerNorm {
  ParamId gamma = 0;
  ParamId beta = 0;
  double eps = 1e-5;

  static LayerNorm create(ParameterSet& params, const std::string& name, std::size_t width, double eps = 1e-5);
  ad::Var operator()(Binding& b, ad::Var x) const;
};

/// Two-layer MLP with ReLU: Linear(d, hidden) -> ReLU -> Linear(hidden, d).
struct Mlp {
  Linear fc1;
  Linear fc2;

  static Mlp create(ParameterSet& params, const Initializer& init, const std::string& name, std::size_t width,
                    std::size_t hidden);
  ad::Var operator()(Binding& b, ad::Var x) const;
};

/// relu(x + conv(relu(conv(x)))) with two 3x3 convolutions.
struct ResidualBlock {
  Conv2d conv1;
  Conv2d conv2;

  static ResidualBlock create(ParameterSet& params, const Initializer& init, const std::string& name,
                              std::size_t channels);
  ad::Var operator()(Binding& b, ad::Var x) const;
};

}  // namespace handocc::nn
