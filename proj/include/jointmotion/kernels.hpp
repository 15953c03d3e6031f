#pragma once

// Numeric kernels behind the differentiable ops. Two implementations share one
// signature set:
//   parallel::   OpenMP data-parallel loops, used by the library
//   reference::  plain serial loops, kept as the correctness oracle for tests
//                and as the baseline in bench/
// Every parallel kernel partitions work so that each output element is written
// by exactly one thread in a fixed summation order; results do not depend on
// the thread count.

#include <cstdint>

namespace jm::kernels {

struct AttentionShape {
    int nq = 0;
    int nk = 0;
    int heads = 1;
    int head_dim = 0;
    int width() const { return heads * head_dim; }
};

#define JM_KERNEL_DECLS                                                                                         \
    /* C (m x n) = A (m x k) * B (k x n), or += when accumulate */                                              \
    void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);           \
    /* C (m x n) = A (m x k) * B^T, B is (n x k) */                                                             \
    void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);           \
    /* C (m x n) = A^T * B, A is (k x m), B is (k x n) */                                                       \
    void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);           \
    /* Multi-head scaled dot-product attention. allowed is nq x nk (nullptr = all allowed). */                  \
    /* probs (heads x nq x nk) receives the softmax weights; rows with no allowed key are all zero. */          \
    void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,         \
                           const uint8_t* allowed, double* probs, double* out);                                 \
    /* Accumulates into dq, dk, dv. scratch must hold heads x nq x nk doubles. */                               \
    void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,        \
                            const double* probs, const double* dout, double* dq, double* dk, double* dv,        \
                            double* scratch);                                                                   \
    /* In-place rotary rotation of n rows of width heads*head_dim, pairs (2p, 2p+1) within each head. */        \
    void rotary(int n, int heads, int head_dim, const int* positions, double* x, bool inverse);                \
    /* Row-wise layer normalization; stores normalized rows and reciprocal std for backward. */                  \
    void layer_norm_forward(int n, int d, const double* x, const double* gain, const double* bias, double eps, \
                            double* y, double* xhat, double* rstd);                                             \
    /* Accumulates into dx, dgain, dbias. */                                                                    \
    void layer_norm_backward(int n, int d, const double* dy, const double* xhat, const double* rstd,           \
                             const double* gain, double* dx, double* dgain, double* dbias);

namespace reference {
JM_KERNEL_DECLS
}

namespace parallel {
JM_KERNEL_DECLS
}

#undef JM_KERNEL_DECLS

// Frequency of rotary pair p for a head of width head_dim (base 10000).
double rotary_inv_freq(int p, int head_dim);

} // namespace jm::kernels
