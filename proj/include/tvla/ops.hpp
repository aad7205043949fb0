#pragma once

#include <span>
#include <vector>

#include "tvla/autodiff.hpp"

// Differentiable operations. Sequence-shaped activations are stored as
// [batch*tokens x channels] matrices; ops that need the sample boundary take
// the batch size (or tokens per sample) explicitly.
namespace tvla::ops {

Var constant(Tensor value);

Var matmul(const Var& a, const Var& b);
// x[n x in] * w[out x in]^T + b[out]; pass an empty Var for no bias.
Var linear(const Var& x, const Var& w, const Var& b = Var());

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// Adds a length-c row to every row of x[n x c].
Var add_bias(const Var& x, const Var& bias);
// Adds p[T x c] to every consecutive block of T rows in x[B*T x c].
Var add_tiled(const Var& x, const Var& p);

// tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(const Var& x);

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Row r of sample b becomes r * (1 + gamma[b]) + beta[b]; gamma and beta are
// [B x c] and x is [B*T x c].
Var film(const Var& x, const Var& gamma, const Var& beta);

// Scaled dot-product attention over q, k, v of shape [B*T x c] split into
// `heads` heads of width c/heads. causal masks keys after the query.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t tokens, bool causal);

Var concat_cols(const Var& a, const Var& b);
// Per-sample concatenation along the token axis: part i is [B*T_i x c].
Var concat_seq(const std::vector<Var>& parts, std::size_t batch);
Var slice_cols(const Var& x, std::size_t start, std::size_t count);
// Mean over the tokens of each sample: [B*T x c] -> [B x c].
Var mean_pool(const Var& x, std::size_t batch);
Var embedding(const Var& table, std::span<const int> ids);
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

// Mean negative log-likelihood of integer targets under row-wise softmax.
Var softmax_cross_entropy(const Var& logits, std::span<const int> targets);

Var sum(const Var& x);

}  // namespace tvla::ops
