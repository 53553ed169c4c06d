#pragma once

// Reverse-mode differentiation over a single-use tape.
//
// A Tape records every value produced during one forward pass together with a
// closure that maps the output gradient to input gradients. `backward()` runs
// the closures in reverse order once and then releases them; values and leaf
// gradients stay readable until the tape is destroyed. A tape is confined to
// one thread.

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "handocc/tensor.hpp"

namespace handocc::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  /// Receives the node's output value and its gradient; accumulates into inputs.
  using Backward = std::function<void(Tape&, const Tensor& value, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient.
  Var variable(Tensor value);
  /// Leaf backed by external storage that must outlive the tape.
  Var parameter(const Tensor& value, bool requires_grad = true);

  /// Records an interior node. If no input requires a gradient, `fn` is dropped.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  /// Adds `g` to the gradient of `target`; ignored when target is constant.
  void accumulate(Var target, Tensor g);

  /// Seeds d(out)/d(out) = 1 and propagates. `out` must hold one element.
  void backward(Var out);

  /// Gradient of a leaf or node after backward(); zeros if it was unreached.
  Tensor grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;

    const Tensor& value() const { return external ? *external : owned; }
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // deque: value() references stay valid as the tape grows
  bool consumed_ = false;
};

// ---- differentiable operations ---------------------------------------------
// Each mirrors the kernel of the same name in handocc::ops.

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var affine(Var x, double a, double b);
Var add_bias(Var x, Var bias);
Var scale_rows(Var x, Var s);
Var row_means(Var x);

Var sigmoid(Var x);
Var relu(Var x);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gamma, Var beta, double eps);

Var conv2d(Var x, Var weight, Var bias, std::size_t stride);
Var avg_pool2(Var x);
Var upsample2(Var x);
Var concat_last(Var a, Var b);

/// Free reshape; the reshaping function between [N x d] tokens and [h x w x d] maps.
Var reshape(Var x, Shape shape);

/// Rows [begin, begin + count) of a matrix.
Var rows(Var x, std::size_t begin, std::size_t count);
/// Stack matrices with equal column counts vertically.
Var concat_rows(std::span<const Var> parts);

Var sum(Var x);
Var sum_squares(Var x);
/// mean((pred - target)^2) over all elements.
Var mean_squared_error(Var pred, const Tensor& target);

/// Axis-angle [3] (or [1 x 3]) to a 3x3 rotation matrix via Rodrigues' formula.
/// Below an angle of `small_angle` the second-order expansion
/// I + K + K^2 / 2 is used so that gradients stay finite at zero.
Var rodrigues(Var axis_angle, double small_angle = 1e-8);

/// Per-row affine transform of points. transforms: [V x 12] holding a
/// row-major 3x3 linear part followed by a translation; points: [V x 3].
/// Output row v = A_v * p_v + t_v.
Var transform_points(Var transforms, Var points);

}  // namespace handocc::ad
