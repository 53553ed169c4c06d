#include "handocc/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "handocc/error.hpp"
#include "handocc/ops.hpp"

namespace handocc::ad {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push(Node node) {
  if (consumed_) throw UsageError("tape already ran backward; record a new pass on a fresh tape");
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw UsageError("operand recorded on a different tape");
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id_).value(); }

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }

void Tape::accumulate(Var target, Tensor g) {
  Node& n = nodes_.at(target.id_);
  if (!n.requires_grad) return;
  if (g.shape() != n.value().shape()) {
    throw DimensionError("gradient shape " + shape_to_string(g.shape()) + " does not match value " +
                         shape_to_string(n.value().shape()));
  }
  if (n.grad.empty()) {
    n.grad = std::move(g);
  } else {
    ops::add_inplace(n.grad, g);
  }
}

void Tape::backward(Var out) {
  if (consumed_) throw UsageError("backward() may run once per tape");
  const Tensor& v = value(out);
  if (v.size() != 1) throw UsageError("backward() needs a scalar objective, got " + shape_to_string(v.shape()));
  consumed_ = true;
  if (!nodes_[out.id_].requires_grad) return;
  nodes_[out.id_].grad = Tensor(v.shape(), 1.0);
  for (std::size_t i = out.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) {
      Backward fn = std::move(n.backward);
      n.backward = nullptr;
      fn(*this, n.value(), n.grad);
    }
    n.backward = nullptr;
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id_);
  if (n.grad.empty()) return Tensor(n.value().shape());
  return n.grad;
}

// ---------------------------------------------------------------------------

namespace {

bool needs(Tape& t, Var v) { return t.requires_grad(v); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(ops::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (needs(t, a)) t.accumulate(a, ops::matmul_nt(g, b.value()));
    if (needs(t, b)) t.accumulate(b, ops::matmul_tn(a.value(), g));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(ops::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (needs(t, a)) t.accumulate(a, ops::matmul(g, b.value()));
    if (needs(t, b)) t.accumulate(b, ops::matmul_tn(g, a.value()));
  });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  return t.record(ops::transpose(a.value()), {a},
                  [a](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(a, ops::transpose(g)); });
}

Var add(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(ops::add(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(ops::sub(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g);
    if (needs(t, b)) t.accumulate(b, ops::scale(g, -1.0));
  });
}

Var mul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(ops::mul(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (needs(t, a)) t.accumulate(a, ops::mul(g, b.value()));
    if (needs(t, b)) t.accumulate(b, ops::mul(g, a.value()));
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  return t.record(ops::scale(a.value(), s), {a}, [a, s](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(a, ops::scale(g, s)); });
}

Var affine(Var x, double a, double b) {
  Tape& t = x.tape();
  return t.record(ops::affine(x.value(), a, b), {x},
                  [x, a](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, ops::scale(g, a)); });
}

Var add_bias(Var x, Var bias) {
  Tape& t = x.tape();
  return t.record(ops::add_bias(x.value(), bias.value()), {x, bias}, [x, bias](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(x, g);
    if (needs(t, bias)) t.accumulate(bias, ops::column_sums(g).reshaped(bias.shape()));
  });
}

Var scale_rows(Var x, Var s) {
  Tape& t = x.tape();
  return t.record(ops::scale_rows(x.value(), s.value()), {x, s}, [x, s](Tape& t, const Tensor&, const Tensor& g) {
    if (needs(t, x)) t.accumulate(x, ops::scale_rows(g, s.value()));
    if (needs(t, s)) t.accumulate(s, ops::row_dots(g, x.value()).reshaped(s.shape()));
  });
}

Var row_means(Var x) {
  Tape& t = x.tape();
  return t.record(ops::row_means(x.value()), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& xv = x.value();
    const std::size_t c = xv.shape().back();
    Tensor gx(xv.shape());
    const double inv = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i / c] * inv;
    t.accumulate(x, gx);
  });
}

Var sigmoid(Var x) {
  Tape& t = x.tape();
  return t.record(ops::sigmoid(x.value()), {x}, [x](Tape& t, const Tensor& y, const Tensor& g) {
    t.accumulate(x, ops::sigmoid_backward(y, g));
  });
}

Var relu(Var x) {
  Tape& t = x.tape();
  return t.record(ops::relu(x.value()), {x},
                  [x](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, ops::relu_backward(x.value(), g)); });
}

Var softmax_rows(Var x) {
  Tape& t = x.tape();
  return t.record(ops::softmax_rows(x.value()), {x}, [x](Tape& t, const Tensor& y, const Tensor& g) {
    t.accumulate(x, ops::softmax_rows_backward(y, g));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = x.tape();
  return t.record(ops::layer_norm(x.value(), gamma.value(), beta.value(), eps), {x, gamma, beta},
                  [x, gamma, beta, eps](Tape& t, const Tensor&, const Tensor& g) {
                    ops::LayerNormGrads lg = ops::layer_norm_backward(x.value(), gamma.value(), eps, g);
                    t.accumulate(x, lg.x);
                    t.accumulate(gamma, lg.gamma.reshaped(gamma.shape()));
                    t.accumulate(beta, lg.beta.reshaped(beta.shape()));
                  });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride) {
  Tape& t = x.tape();
  return t.record(ops::conv2d(x.value(), weight.value(), bias.value(), stride), {x, weight, bias},
                  [x, weight, bias, stride](Tape& t, const Tensor&, const Tensor& g) {
                    ops::Conv2dGrads cg = ops::conv2d_backward(x.value(), weight.value(), stride, g, needs(t, x));
                    if (needs(t, x)) t.accumulate(x, cg.x);
                    t.accumulate(weight, cg.weight);
                    t.accumulate(bias, cg.bias.reshaped(bias.shape()));
                  });
}

Var avg_pool2(Var x) {
  Tape& t = x.tape();
  return t.record(ops::avg_pool2(x.value()), {x},
                  [x](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, ops::avg_pool2_backward(g)); });
}

Var upsample2(Var x) {
  Tape& t = x.tape();
  return t.record(ops::upsample2(x.value()), {x},
                  [x](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, ops::upsample2_backward(g)); });
}

Var concat_last(Var a, Var b) {
  Tape& t = a.tape();
  const std::size_t ca = a.shape().back();
  return t.record(ops::concat_last(a.value(), b.value()), {a, b}, [a, b, ca](Tape& t, const Tensor&, const Tensor& g) {
    Tensor ga, gb;
    ops::split_last(g, ca, ga, gb);
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = x.tape();
  Shape original = x.shape();
  return t.record(x.value().reshaped(std::move(shape)), {x},
                  [x, original](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, g.reshaped(original)); });
}

Var rows(Var x, std::size_t begin, std::size_t count) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || count == 0 || begin + count > xv.dim(0)) {
    throw DimensionError("rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") invalid for " + shape_to_string(xv.shape()));
  }
  const std::size_t c = xv.dim(1);
  Tensor out({count, c});
  std::copy_n(xv.raw() + begin * c, count * c, out.raw());
  return t.record(std::move(out), {x}, [x, begin, count, c](Tape& t, const Tensor&, const Tensor& g) {
    Tensor gx(x.shape());
    std::copy_n(g.raw(), count * c, gx.raw() + begin * c);
    t.accumulate(x, gx);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  Tape& t = parts.front().tape();
  const std::size_t c = parts.front().shape().back();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.shape()[1] != c) throw DimensionError("concat_rows: column counts differ");
    total += p.shape()[0];
  }
  Tensor out({total, c});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().raw(), p.value().size(), out.raw() + offset);
    offset += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs](Tape& t, const Tensor&, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : inputs) {
      const std::size_t n = p.value().size();
      if (t.requires_grad(p)) {
        Tensor gp(p.shape());
        std::copy_n(g.raw() + off, n, gp.raw());
        t.accumulate(p, gp);
      }
      off += n;
    }
  });
}

Var sum(Var x) {
  Tape& t = x.tape();
  return t.record(Tensor::scalar(x.value().sum()), {x},
                  [x](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, Tensor(x.shape(), g[0])); });
}

Var sum_squares(Var x) {
  Tape& t = x.tape();
  double acc = 0.0;
  for (double v : x.value().data()) acc += v * v;
  return t.record(Tensor::scalar(acc), {x},
                  [x](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(x, ops::scale(x.value(), 2.0 * g[0])); });
}

Var mean_squared_error(Var pred, const Tensor& target) {
  Tape& t = pred.tape();
  if (pred.shape() != target.shape()) {
    throw DimensionError("mean_squared_error: " + shape_to_string(pred.shape()) + " vs " +
                         shape_to_string(target.shape()));
  }
  Tensor diff = ops::sub(pred.value(), target);
  double acc = 0.0;
  for (double v : diff.data()) acc += v * v;
  const double n = static_cast<double>(diff.size());
  return t.record(Tensor::scalar(acc / n), {pred}, [pred, diff = std::move(diff), n](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(pred, ops::scale(diff, 2.0 * g[0] / n));
  });
}

// ---- Rodrigues --------------------------------------------------------------

namespace {

using Mat3 = std::array<double, 9>;

Mat3 skew(double x, double y, double z) { return {0, -z, y, z, 0, -x, -y, x, 0}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

double frob_dot(const Mat3& a, const double* b) {
  double s = 0.0;
  for (int i = 0; i < 9; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Var rodrigues(Var axis_angle, double small_angle) {
  Tape& t = axis_angle.tape();
  const Tensor& w = axis_angle.value();
  if (w.size() != 3) throw DimensionError("rodrigues: expected 3 components, got " + shape_to_string(w.shape()));
  const double wx = w[0], wy = w[1], wz = w[2];
  const double theta = std::sqrt(wx * wx + wy * wy + wz * wz);
  const Mat3 k = skew(wx, wy, wz);
  const Mat3 k2 = mat_mul(k, k);

  // R = I + a K + b K^2
  double a, b, da, db;  // da, db: derivative of a, b w.r.t. theta, divided by theta
  if (theta < small_angle) {
    a = 1.0;
    b = 0.5;
    da = 0.0;
    db = 0.0;
  } else {
    const double s = std::sin(theta), c = std::cos(theta);
    a = s / theta;
    b = (1.0 - c) / (theta * theta);
    da = (theta * c - s) / (theta * theta * theta);
    db = (theta * s - 2.0 * (1.0 - c)) / (theta * theta * theta * theta);
  }
  Tensor r({3, 3});
  for (int i = 0; i < 9; ++i) r[i] = (i % 4 == 0 ? 1.0 : 0.0) + a * k[i] + b * k2[i];

  return t.record(std::move(r), {axis_angle}, [axis_angle, k, k2, a, b, da, db](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& w = axis_angle.value();
    Tensor gw(w.shape());
    for (int i = 0; i < 3; ++i) {
      const Mat3 e = skew(i == 0, i == 1, i == 2);
      const Mat3 ek = mat_mul(e, k);
      const Mat3 ke = mat_mul(k, e);
      Mat3 dr{};
      for (int m = 0; m < 9; ++m) dr[m] = da * w[i] * k[m] + a * e[m] + db * w[i] * k2[m] + b * (ek[m] + ke[m]);
      gw[i] = frob_dot(dr, g.raw());
    }
    t.accumulate(axis_angle, gw);
  });
}

Var transform_points(Var transforms, Var points) {
  Tape& t = transforms.tape();
  const Tensor& tr = transforms.value();
  const Tensor& p = points.value();
  if (tr.rank() != 2 || tr.dim(1) != 12 || p.rank() != 2 || p.dim(1) != 3 || p.dim(0) != tr.dim(0)) {
    throw DimensionError("transform_points: need [V x 12] and [V x 3], got " + shape_to_string(tr.shape()) + " and " +
                         shape_to_string(p.shape()));
  }
  const std::size_t n = p.dim(0);
  Tensor out({n, 3});
  for (std::size_t v = 0; v < n; ++v) {
    const double* m = tr.raw() + v * 12;
    const double* x = p.raw() + v * 3;
    for (int i = 0; i < 3; ++i) out[v * 3 + i] = m[i * 3] * x[0] + m[i * 3 + 1] * x[1] + m[i * 3 + 2] * x[2] + m[9 + i];
  }
  return t.record(std::move(out), {transforms, points}, [transforms, points, n](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& tr = transforms.value();
    const Tensor& p = points.value();
    if (t.requires_grad(transforms)) {
      Tensor gt({n, 12});
      for (std::size_t v = 0; v < n; ++v) {
        for (int i = 0; i < 3; ++i) {
          const double gi = g[v * 3 + i];
          for (int j = 0; j < 3; ++j) gt[v * 12 + i * 3 + j] = gi * p[v * 3 + j];
          gt[v * 12 + 9 + i] = gi;
        }
      }
      t.accumulate(transforms, gt);
    }
    if (t.requires_grad(points)) {
      Tensor gp({n, 3});
      for (std::size_t v = 0; v < n; ++v) {
        const double* m = tr.raw() + v * 12;
        for (int j = 0; j < 3; ++j) {
          gp[v * 3 + j] = m[j] * g[v * 3] + m[3 + j] * g[v * 3 + 1] + m[6 + j] * g[v * 3 + 2];
        }
      }
      t.accumulate(points, gp);
    }
  });
}

}  // namespace handocc::ad
