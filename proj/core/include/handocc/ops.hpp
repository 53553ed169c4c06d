#pragma once

// Pure tensor kernels and their analytic backward passes.
//
// Feature maps are stored channel-last, [H x W x C], so flattening the spatial
// axes to an [N x C] token matrix is a free reshape.

#include <cstddef>

#include "handocc/tensor.hpp"

namespace handocc::ops {

/// Arithmetic precision used inside matrix products. Storage is always f64.
enum class Precision { f64, f32 };

Precision gemm_precision() noexcept;
void set_gemm_precision(Precision p) noexcept;

/// Sets the calling thread's GEMM precision for the lifetime of the scope.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) noexcept : saved_(gemm_precision()) { set_gemm_precision(p); }
  ~PrecisionScope() { set_gemm_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

// ---- products -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [M x K] . [K x N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M x K] . [N x K]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [K x M]^T . [K x N]
Tensor transpose(const Tensor& a);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a * x + b, elementwise.
Tensor affine(const Tensor& x, double a, double b);
/// In-place a += b.
void add_inplace(Tensor& a, const Tensor& b);

/// x[r, c] + bias[c]; x viewed as [rows x C] where C is the last dimension.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[r, c] * s[r]; x viewed as [rows x C], s has `rows` elements.
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// Per-row mean over the last dimension; result [rows x 1].
Tensor row_means(const Tensor& x);
/// Per-row sum over the last dimension; result [rows x 1].
Tensor row_sums(const Tensor& x);
/// Column sums of x viewed as [rows x C]; result [C].
Tensor column_sums(const Tensor& x);
/// Per-row dot product of a and b viewed as [rows x C]; result [rows x 1].
Tensor row_dots(const Tensor& a, const Tensor& b);

// ---- activations ----------------------------------------------------------

/// Logistic function. Output is clamped into the open interval (0, 1) so that
/// saturated inputs never round to exactly 0 or 1.
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_y);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& grad_y);

/// Row-wise softmax over the last dimension, stabilized by max subtraction.
/// Throws NumericError on non-finite input.
Tensor softmax_rows(const Tensor& x);
Tensor softmax_rows_backward(const Tensor& y, const Tensor& grad_y);

// ---- normalization --------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

struct LayerNormGrads {
  Tensor x;
  Tensor gamma;
  Tensor beta;
};
LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma, double eps, const Tensor& grad_y);

// ---- spatial --------------------------------------------------------------

/// 2-D convolution with "same" zero padding (pad = k / 2).
/// x: [H x W x Cin], weight: [k x k x Cin x Cout], bias: [Cout].
/// Output: [ceil(H / stride) x ceil(W / stride) x Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

struct Conv2dGrads {
  Tensor x;  // empty when not requested
  Tensor weight;
  Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, std::size_t stride, const Tensor& grad_y,
                            bool need_input_grad);

/// 2x2 average pooling with stride 2; H and W must be even.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_y);

/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& grad_y);

/// Concatenate along the last axis; leading dimensions must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Split along the last axis at `first_width`.
void split_last(const Tensor& x, std::size_t first_width, Tensor& first, Tensor& second);

}  // namespace handocc::ops
