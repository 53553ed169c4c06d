#include "handocc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "handocc/error.hpp"

namespace handocc::ops {

namespace {

thread_local Precision tl_precision = Precision::f64;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapD = Eigen::Map<RowMat<double>>;
using CMapD = Eigen::Map<const RowMat<double>>;

// C = op(A) * op(B) where A is stored [a_rows x a_cols], B [b_rows x b_cols].
void gemm(const double* a, std::size_t a_rows, std::size_t a_cols, bool trans_a, const double* b, std::size_t b_rows,
          std::size_t b_cols, bool trans_b, double* c) {
  const auto ar = static_cast<Eigen::Index>(a_rows), ac = static_cast<Eigen::Index>(a_cols);
  const auto br = static_cast<Eigen::Index>(b_rows), bc = static_cast<Eigen::Index>(b_cols);
  const Eigen::Index m = trans_a ? ac : ar;
  const Eigen::Index n = trans_b ? br : bc;
  CMapD A(a, ar, ac);
  CMapD B(b, br, bc);
  MapD C(c, m, n);
  if (tl_precision == Precision::f32) {
    const RowMat<float> af = A.cast<float>();
    const RowMat<float> bf = B.cast<float>();
    RowMat<float> cf;
    if (trans_a && trans_b) cf.noalias() = af.transpose() * bf.transpose();
    else if (trans_a) cf.noalias() = af.transpose() * bf;
    else if (trans_b) cf.noalias() = af * bf.transpose();
    else cf.noalias() = af * bf;
    C = cf.cast<double>();
    return;
  }
  if (trans_a && trans_b) C.noalias() = A.transpose() * B.transpose();
  else if (trans_a) C.noalias() = A.transpose() * B;
  else if (trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A * B;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

std::size_t last_dim(const Tensor& x) { return x.shape().back(); }

std::size_t leading(const Tensor& x) { return x.size() / last_dim(x); }

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

void require_map(const Tensor& x, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected [H x W x C], got " + shape_to_string(x.shape()));
}

}  // namespace

Precision gemm_precision() noexcept { return tl_precision; }
void set_gemm_precision(Precision p) noexcept { tl_precision = p; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  gemm(a.raw(), a.dim(0), a.dim(1), false, b.raw(), b.dim(0), b.dim(1), false, out.raw());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()) + "^T");
  }
  Tensor out({a.dim(0), b.dim(0)});
  gemm(a.raw(), a.dim(0), a.dim(1), false, b.raw(), b.dim(0), b.dim(1), true, out.raw());
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: inner dimensions differ " + shape_to_string(a.shape()) + "^T x " +
                         shape_to_string(b.shape()));
  }
  Tensor out({a.dim(1), b.dim(1)});
  gemm(a.raw(), a.dim(0), a.dim(1), true, b.raw(), b.dim(0), b.dim(1), false, out.raw());
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", std::plus<>()); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", std::minus<>()); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", std::multiplies<>()); }
Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double v) { return v * s; });
}
Tensor affine(const Tensor& x, double a, double b) {
  return map(x, [a, b](double v) { return a * v + b; });
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same(a, b, "add_inplace");
  double* pa = a.raw();
  const double* pb = b.raw();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t c = last_dim(x);
  if (bias.size() != c) {
    throw DimensionError("add_bias: bias of " + shape_to_string(bias.shape()) + " for " + shape_to_string(x.shape()));
  }
  Tensor out = x;
  const std::size_t rows = leading(x);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bias[j];
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const std::size_t c = last_dim(x);
  const std::size_t rows = leading(x);
  if (s.size() != rows) {
    throw DimensionError("scale_rows: " + shape_to_string(s.shape()) + " cannot scale rows of " +
                         shape_to_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x[r * c + j] * s[r];
  return out;
}

Tensor row_sums(const Tensor& x) {
  const std::size_t c = last_dim(x);
  const std::size_t rows = leading(x);
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += x[r * c + j];
    out[r] = acc;
  }
  return out;
}

Tensor row_means(const Tensor& x) { return scale(row_sums(x), 1.0 / static_cast<double>(last_dim(x))); }

Tensor column_sums(const Tensor& x) {
  const std::size_t c = last_dim(x);
  const std::size_t rows = leading(x);
  Tensor out({c});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[r * c + j];
  return out;
}

Tensor row_dots(const Tensor& a, const Tensor& b) {
  require_same(a, b, "row_dots");
  const std::size_t c = last_dim(a);
  const std::size_t rows = leading(a);
  Tensor out({rows, 1});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += a[r * c + j] * b[r * c + j];
    out[r] = acc;
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return map(x, [lo, hi](double v) {
    if (std::isnan(v)) return v;
    const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::clamp(y, lo, hi);
  });
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_y) {
  return zip(y, grad_y, "sigmoid_backward", [](double s, double g) { return g * s * (1.0 - s); });
}

Tensor relu(const Tensor& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_y) {
  return zip(x, grad_y, "relu_backward", [](double v, double g) { return v > 0.0 ? g : 0.0; });
}

Tensor softmax_rows(const Tensor& x) {
  x.check_finite("softmax_rows");
  const std::size_t c = last_dim(x);
  const std::size_t rows = leading(x);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.raw() + r * c;
    double* o = out.raw() + r * c;
    const double m = *std::max_element(in, in + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - m);
      total += o[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
  }
  return out;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad_y) {
  require_same(y, grad_y, "softmax_rows_backward");
  const std::size_t c = last_dim(y);
  const std::size_t rows = leading(y);
  Tensor out(y.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = y.raw() + r * c;
    const double* gr = grad_y.raw() + r * c;
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = yr[j] * (gr[j] - dot);
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = last_dim(x);
  if (gamma.size() != d || beta.size() != d) throw DimensionError("layer_norm: affine width does not match input");
  const std::size_t rows = leading(x);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.raw() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (in[j] - mean) * inv_std * gamma[j] + beta[j];
  }
  return out;
}

LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, double eps, const Tensor& grad_y) {
  require_same(x, grad_y, "layer_norm_backward");
  const std::size_t d = last_dim(x);
  const std::size_t rows = leading(x);
  const auto dd = static_cast<double>(d);
  LayerNormGrads g{Tensor(x.shape()), Tensor({d}), Tensor({d})};
  std::vector<double> xhat(d), gxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.raw() + r * d;
    const double* gy = grad_y.raw() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= dd;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= dd;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (in[j] - mean) * inv_std;
      gxhat[j] = gy[j] * gamma[j];
      g.gamma[j] += gy[j] * xhat[j];
      g.beta[j] += gy[j];
      mean_g += gxhat[j];
      mean_gx += gxhat[j] * xhat[j];
    }
    mean_g /= dd;
    mean_gx /= dd;
    for (std::size_t j = 0; j < d; ++j) g.x[r * d + j] = inv_std * (gxhat[j] - mean_g - xhat[j] * mean_gx);
  }
  return g;
}

namespace {

struct ConvGeometry {
  std::size_t h, w, cin, k, cout, stride, pad, ho, wo;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, std::size_t stride) {
  require_map(x, "conv2d");
  if (weight.rank() != 4 || weight.dim(0) != weight.dim(1) || weight.dim(0) % 2 == 0) {
    throw DimensionError("conv2d: weight must be [k x k x Cin x Cout] with odd k, got " +
                         shape_to_string(weight.shape()));
  }
  if (weight.dim(2) != x.dim(2)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(2)) + " channels, weight expects " +
                         std::to_string(weight.dim(2)));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), weight.dim(3), stride, weight.dim(0) / 2, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
  return g;
}

// cols: [ho*wo x k*k*cin], column order (ky, kx, ci) to match the weight layout.
std::vector<double> im2col(const Tensor& x, const ConvGeometry& g) {
  const std::size_t width = g.k * g.k * g.cin;
  std::vector<double> cols(g.ho * g.wo * width, 0.0);
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      double* dst = cols.data() + (oy * g.wo + ox) * width;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const double* src = x.raw() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          std::copy(src, src + g.cin, dst + (ky * g.k + kx) * g.cin);
        }
      }
    }
  }
  return cols;
}

void col2im(const std::vector<double>& cols, const ConvGeometry& g, Tensor& dx) {
  const std::size_t width = g.k * g.k * g.cin;
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const double* src = cols.data() + (oy * g.wo + ox) * width;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          double* dst = dx.raw() + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const double* s = src + (ky * g.k + kx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += s[c];
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1; }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  const ConvGeometry g = conv_geometry(x, weight, stride);
  if (bias.size() != g.cout) throw DimensionError("conv2d: bias width does not match output channels");
  const std::size_t width = g.k * g.k * g.cin;
  Tensor out({g.ho, g.wo, g.cout});
  if (is_pointwise(g)) {
    gemm(x.raw(), g.h * g.w, g.cin, false, weight.raw(), g.cin, g.cout, false, out.raw());
  } else {
    const std::vector<double> cols = im2col(x, g);
    gemm(cols.data(), g.ho * g.wo, width, false, weight.raw(), width, g.cout, false, out.raw());
  }
  const std::size_t n = g.ho * g.wo;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < g.cout; ++c) out[p * g.cout + c] += bias[c];
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, std::size_t stride, const Tensor& grad_y,
                            bool need_input_grad) {
  const ConvGeometry g = conv_geometry(x, weight, stride);
  if (grad_y.shape() != Shape{g.ho, g.wo, g.cout}) throw DimensionError("conv2d_backward: gradient shape mismatch");
  const std::size_t width = g.k * g.k * g.cin;
  const std::size_t n = g.ho * g.wo;
  Conv2dGrads grads{Tensor(), Tensor(weight.shape()), column_sums(grad_y)};
  if (is_pointwise(g)) {
    gemm(x.raw(), n, g.cin, true, grad_y.raw(), n, g.cout, false, grads.weight.raw());
    if (need_input_grad) {
      grads.x = Tensor(x.shape());
      gemm(grad_y.raw(), n, g.cout, false, weight.raw(), g.cin, g.cout, true, grads.x.raw());
    }
    return grads;
  }
  const std::vector<double> cols = im2col(x, g);
  gemm(cols.data(), n, width, true, grad_y.raw(), n, g.cout, false, grads.weight.raw());
  if (need_input_grad) {
    std::vector<double> dcols(n * width);
    gemm(grad_y.raw(), n, g.cout, false, weight.raw(), width, g.cout, true, dcols.data());
    grads.x = Tensor(x.shape());
    col2im(dcols, g, grads.x);
  }
  return grads;
}

Tensor avg_pool2(const Tensor& x) {
  require_map(x, "avg_pool2");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h % 2 || w % 2) throw DimensionError("avg_pool2: spatial dims must be even, got " + shape_to_string(x.shape()));
  Tensor out({h / 2, w / 2, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t k = 0; k < c; ++k) out.at(y / 2, xx / 2, k) += 0.25 * x.at(y, xx, k);
  return out;
}

Tensor avg_pool2_backward(const Tensor& grad_y) {
  require_map(grad_y, "avg_pool2_backward");
  const std::size_t h = grad_y.dim(0) * 2, w = grad_y.dim(1) * 2, c = grad_y.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t k = 0; k < c; ++k) out.at(y, xx, k) = 0.25 * grad_y.at(y / 2, xx / 2, k);
  return out;
}

Tensor upsample2(const Tensor& x) {
  require_map(x, "upsample2");
  const std::size_t h = x.dim(0) * 2, w = x.dim(1) * 2, c = x.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t k = 0; k < c; ++k) out.at(y, xx, k) = x.at(y / 2, xx / 2, k);
  return out;
}

Tensor upsample2_backward(const Tensor& grad_y) {
  require_map(grad_y, "upsample2_backward");
  const std::size_t h = grad_y.dim(0), w = grad_y.dim(1), c = grad_y.dim(2);
  if (h % 2 || w % 2) throw DimensionError("upsample2_backward: spatial dims must be even");
  Tensor out({h / 2, w / 2, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t k = 0; k < c; ++k) out.at(y / 2, xx / 2, k) += grad_y.at(y, xx, k);
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_last: leading dims differ " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  const std::size_t ca = last_dim(a), cb = last_dim(b), rows = leading(a);
  Shape shape = a.shape();
  shape.back() = ca + cb;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.raw() + r * ca, ca, out.raw() + r * (ca + cb));
    std::copy_n(b.raw() + r * cb, cb, out.raw() + r * (ca + cb) + ca);
  }
  return out;
}

void split_last(const Tensor& x, std::size_t first_width, Tensor& first, Tensor& second) {
  const std::size_t c = last_dim(x), rows = leading(x);
  if (first_width == 0 || first_width >= c) throw DimensionError("split_last: split point out of range");
  Shape sa = x.shape(), sb = x.shape();
  sa.back() = first_width;
  sb.back() = c - first_width;
  first = Tensor(sa);
  second = Tensor(sb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.raw() + r * c, first_width, first.raw() + r * first_width);
    std::copy_n(x.raw() + r * c + first_width, c - first_width, second.raw() + r * (c - first_width));
  }
}

}  // namespace handocc::ops
