#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spectradiff/gradcore/graph.hpp"
#include "spectradiff/gradcore/tensor.hpp"

/// Differentiable ops over Tensor. Every op records itself on the given Graph
/// when any input requires grad; in Graph::Mode::inference nothing is recorded.
///
/// Broadcasting is limited to what the denoiser and classifier use: bias
/// rows (add_bias), and the explicit expand_* ops.
namespace spectradiff::ops {

/// a[..., k] x b[k, n] -> [..., n]. Leading extents of `a` are flattened.
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
/// x[..., n] + bias[n], broadcast over rows.
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);
/// matmul followed by add_bias; `bias` may be undefined.
Tensor linear(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Batched a[n, m, k] x b[n, k, p] -> [n, m, p].
Tensor bmm(Graph& g, const Tensor& a, const Tensor& b);
/// Batched a[n, m, k] x b[n, p, k]^T -> [n, m, p].
Tensor bmm_nt(Graph& g, const Tensor& a, const Tensor& b);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double factor);
Tensor add_scalar(Graph& g, const Tensor& x, double value);

Tensor exp(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor relu(Graph& g, const Tensor& x);

/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline constexpr double kGeluCubic = 0.044715;
inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
Tensor gelu(Graph& g, const Tensor& x);

/// Softmax over the last axis, max-subtracted.
Tensor softmax(Graph& g, const Tensor& x);

/// Normalize each last-axis row to zero mean and unit variance,
/// (x - mean) / sqrt(var + eps), then apply gain and bias when defined.
Tensor layernorm(Graph& g, const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-6);

/// Rows of table[V, d] gathered by index -> [n, d].
Tensor embedding(Graph& g, const Tensor& table, std::span<const std::size_t> indices);

Tensor sum(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);
/// Reduce the last axis: [..., d] -> [...] (rank-1 input gives shape {1}).
Tensor sum_last(Graph& g, const Tensor& x);
Tensor mean_last(Graph& g, const Tensor& x);
/// mean((a - b)^2) over all elements.
Tensor mse(Graph& g, const Tensor& a, const Tensor& b);

Tensor reshape(Graph& g, const Tensor& x, Shape shape);
/// out.shape[i] = x.shape[perm[i]].
Tensor permute(Graph& g, const Tensor& x, const std::vector<std::size_t>& perm);
/// x[..., start:start+length].
Tensor slice_last(Graph& g, const Tensor& x, std::size_t start, std::size_t length);
/// [d...] -> [n, d...], repeating x.
Tensor expand_batch(Graph& g, const Tensor& x, std::size_t n);
/// [b, h] -> [b, n, h], repeating each row n times.
Tensor expand_middle(Graph& g, const Tensor& x, std::size_t n);

/// Stride-1 "same" convolution: x[N, C, L], weight[O, C, K], bias[O] -> [N, O, L].
/// Left padding is (K-1)/2, the rest goes right.
Tensor conv1d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Mean softmax cross-entropy of logits[N, C] against integer labels.
Tensor cross_entropy(Graph& g, const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace spectradiff::ops
