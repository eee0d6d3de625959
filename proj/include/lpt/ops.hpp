#pragma once

#include "lpt/tensor.hpp"

namespace lpt::ops {

enum class Act { relu, gelu };

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a*x + b, elementwise with scalar coefficients
Tensor affine(const Tensor& x, double a, double b);
inline Tensor scale(const Tensor& x, double a) { return affine(x, a, 0.0); }

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x (MxN) + row-broadcast bias (N)
Tensor add_bias(const Tensor& x, const Tensor& b);

/// numerically stable softmax along `axis` (1-d: axis 0; 2-d: axis 0 or 1)
Tensor softmax(const Tensor& x, std::size_t axis);

/// per-row layer norm over the last axis, then affine by gain/bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// elementwise nonlinearity; gelu is the tanh approximation
/// 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
Tensor activation(const Tensor& x, Act kind);

/// ln(max(x, floor)); gradient is 1/x where x > floor, 0 in the clamped region
Tensor log_clamped(const Tensor& x, double floor = 1e-12);

/// x^p with constant exponent; p = 0 yields a constant 1 with zero gradient
Tensor pow_const(const Tensor& x, double p);

/// same values under a new shape of equal element count; gradient passes through
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);

/// scaled cosine-similarity logits: s_i = sigma * <w_i, c> / (|w_i| |c|),
/// norms floored at 1e-12
Tensor cosine_scores(const Tensor& weights, const Tensor& feature, double sigma);

/// <a, b> / (|a| |b|) as a scalar tensor, norms floored at 1e-12
Tensor cosine_sim(const Tensor& a, const Tensor& b);

}  // namespace lpt::ops
