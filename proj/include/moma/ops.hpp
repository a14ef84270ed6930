#pragma once

#include <cstdint>
#include <vector>

#include "moma/autograd.hpp"
#include "moma/tensor.hpp"

namespace moma::ops {

// Matmul flops (2*m*n*k per GEMM) executed on this thread since reset.
// The masking-efficiency checks compare encoder costs through this counter.
uint64_t flop_count();
void reset_flop_count();

// ---- elementwise, broadcasting by trailing-dimension alignment ----
template <typename S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> add_scalar(const TensorT<S>& a, S c);
template <typename S> TensorT<S> mul_scalar(const TensorT<S>& a, S c);

// GELU, tanh approximation.
template <typename S> TensorT<S> gelu(const TensorT<S>& x);

// ---- linear algebra ----
// a: [..., m, k], b: [..., k, n]; batch dims broadcast.
template <typename S> TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);
// Swap two axes (materialized).
template <typename S> TensorT<S> transpose(const TensorT<S>& x, int64_t axis_a, int64_t axis_b);
template <typename S> TensorT<S> reshape(const TensorT<S>& x, Shape shape);

// ---- normalization / activation over an axis ----
template <typename S> TensorT<S> softmax(const TensorT<S>& x, int64_t axis);
// Normalizes the last dimension; gamma/beta have that width.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-6));
// Rows (last dim) scaled to unit L2 norm.
template <typename S> TensorT<S> l2_normalize(const TensorT<S>& x, S eps = S(1e-12));

// ---- reductions ----
template <typename S> TensorT<S> sum(const TensorT<S>& x);
template <typename S> TensorT<S> mean(const TensorT<S>& x);
template <typename S> TensorT<S> sum_axis(const TensorT<S>& x, int64_t axis);
template <typename S> TensorT<S> mean_axis(const TensorT<S>& x, int64_t axis);

// ---- shape surgery ----
template <typename S>
TensorT<S> slice(const TensorT<S>& x, int64_t axis, int64_t start, int64_t length);
template <typename S> TensorT<S> concat(const TensorT<S>& a, const TensorT<S>& b, int64_t axis);

// ---- token selection (the mask machinery) ----
// x: [B, N, D]; indices[b] lists rows kept for sample b, all of equal length V.
// Backward scatters gradients to the selected rows and zero elsewhere.
template <typename S>
TensorT<S> gather_tokens(const TensorT<S>& x, const std::vector<std::vector<int64_t>>& indices);
// Embedding lookup: rows of table [N, D] selected per sample -> [B, V, D].
template <typename S>
TensorT<S> embed_rows(const TensorT<S>& table, const std::vector<std::vector<int64_t>>& indices);
// Inverse of gather_tokens: visible rows [B, V, D] placed at their indices in
// a [B, token_count, D] output, fill [D] elsewhere (the learned mask token).
template <typename S>
TensorT<S> scatter_tokens(const TensorT<S>& visible, const TensorT<S>& fill,
                          const std::vector<std::vector<int64_t>>& indices, int64_t token_count);
// token [D] -> [B, 1, D]; backward sums over the batch.
template <typename S> TensorT<S> broadcast_token(const TensorT<S>& token, int64_t batch);

// ---- losses with fused backward ----
// Mean over elements of the Huber-style piecewise loss; gradient flows to
// pred only (target treated as constant).
template <typename S>
TensorT<S> smooth_l1(const TensorT<S>& pred, const TensorT<S>& target, S beta = S(1));
// Mean softmax cross-entropy of logits [B, C] against integer labels [B].
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int64_t>& labels);

}  // namespace moma::ops
