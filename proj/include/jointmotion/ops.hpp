#pragma once

// Differentiable operations over Var. Shapes are (rows x cols); "row" means
// a 1 x n Var broadcast over rows. Each op validates shapes and throws
// std::invalid_argument on mismatch.

#include "jointmotion/autograd.hpp"

#include <cstdint>
#include <vector>

namespace jm::ops {

Var constant(Tensor value);

Var matmul(const Var& a, const Var& b);
// x (n x in) * w (in x out) + b (1 x out); b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& x, const Var& row);

Var relu(const Var& x);
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

struct AttentionOptions {
    int heads = 1;
    // allowed[i * nk + j] != 0 when query i may attend key j; empty = all allowed.
    std::vector<uint8_t> allowed;
    // When both are set, q and k rows are rotated by these integer positions
    // before the dot product (rotary embedding).
    std::vector<int> q_positions;
    std::vector<int> k_positions;
};

// Multi-head scaled dot-product attention over already projected q, k, v.
// Query rows with no allowed key produce zero rows.
Var attention(const Var& q, const Var& k, const Var& v, const AttentionOptions& options);

Var concat_rows(const std::vector<Var>& parts, int cols);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& x, int begin, int count);
Var gather_rows(const Var& x, const std::vector<int>& indices);
Var transpose(const Var& x);
Var reshape(const Var& x, int rows, int cols);

// Zeroes rows where keep[i] == 0.
Var mask_rows(const Var& x, const std::vector<uint8_t>& keep);
// Rows where replace[i] != 0 become the single row `row`.
Var replace_rows(const Var& x, const std::vector<uint8_t>& replace, const Var& row);
// Mean over rows with include[i] != 0 (all rows when include is empty), 1 x cols.
Var mean_rows(const Var& x, const std::vector<uint8_t>& include = {});

Var sum(const Var& x);
// Sum of x elementwise-weighted by a constant tensor; 1 x 1.
Var weighted_sum(const Var& x, const Tensor& weights);
Var element(const Var& x, int r, int c);
Var log_softmax_rows(const Var& x);

// Per-column standardization across rows: (z - mean) / sqrt(var + eps^2),
// population variance.
Var standardize_columns(const Var& z, double eps);

// sum_i (1 - C_ii)^2 + lambda_red * sum_{i != j} C_ij^2, 1 x 1.
Var cme_loss(const Var& c, double lambda_red);

double huber(double residual, double delta);
// Mean elementwise Huber over selected rows (rows[i] != 0), all columns.
// Returns a constant zero when no row is selected.
Var huber_mean(const Var& pred, const Tensor& target, const std::vector<uint8_t>& rows, double delta);

} // namespace jm::ops
