#include "jointmotion/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace jm::kernels::parallel {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;
}

void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    const bool go_parallel = static_cast<long>(m) * n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + static_cast<size_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    const bool go_parallel = static_cast<long>(m) * n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + acc : acc;
        }
    }
}

void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    const bool go_parallel = static_cast<long>(m) * n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int i = 0; i < m; ++i) {
        double* ci = c + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double api = a[static_cast<size_t>(p) * m + i];
            if (api == 0.0) continue;
            const double* bp = b + static_cast<size_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,
                       const uint8_t* allowed, double* probs, double* out) {
    const int d = s.width();
    const int hd = s.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int rows = s.heads * s.nq;
    const bool go_parallel = static_cast<long>(rows) * s.nk * hd > kParallelWork;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int r = 0; r < rows; ++r) {
        const int h = r / s.nq;
        const int i = r % s.nq;
        const int off = h * hd;
        const double* qi = q + static_cast<size_t>(i) * d + off;
        const uint8_t* mask = allowed ? allowed + static_cast<size_t>(i) * s.nk : nullptr;
        double* p = probs + static_cast<size_t>(r) * s.nk;
        double* oi = out + static_cast<size_t>(i) * d + off;
        for (int c = 0; c < hd; ++c) oi[c] = 0.0;

        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < s.nk; ++j) {
            if (mask && !mask[j]) {
                p[j] = 0.0;
                continue;
            }
            const double* kj = k + static_cast<size_t>(j) * d + off;
            double dot = 0.0;
#pragma omp simd reduction(+ : dot)
            for (int c = 0; c < hd; ++c) dot += qi[c] * kj[c];
            p[j] = dot * scale;
            best = p[j] > best ? p[j] : best;
        }
        if (best == -std::numeric_limits<double>::infinity()) continue;
        double total = 0.0;
        for (int j = 0; j < s.nk; ++j) {
            if (mask && !mask[j]) continue;
            p[j] = std::exp(p[j] - best);
            total += p[j];
        }
        const double inv = 1.0 / total;
        for (int j = 0; j < s.nk; ++j) {
            if (p[j] == 0.0) continue;
            p[j] *= inv;
            const double pj = p[j];
            const double* vj = v + static_cast<size_t>(j) * d + off;
#pragma omp simd
            for (int c = 0; c < hd; ++c) oi[c] += pj * vj[c];
        }
    }
}

void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv,
                        double* scratch) {
    const int d = s.width();
    const int hd = s.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int qrows = s.heads * s.nq;
    const int krows = s.heads * s.nk;
    const bool go_parallel = static_cast<long>(qrows) * s.nk * hd > kParallelWork;

    // Pass 1, per (head, query): score gradients and dq.
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int r = 0; r < qrows; ++r) {
        const int h = r / s.nq;
        const int i = r % s.nq;
        const int off = h * hd;
        const double* p = probs + static_cast<size_t>(r) * s.nk;
        double* ds = scratch + static_cast<size_t>(r) * s.nk;
        const double* gi = dout + static_cast<size_t>(i) * d + off;
        double weighted = 0.0;
        for (int j = 0; j < s.nk; ++j) {
            if (p[j] == 0.0) {
                ds[j] = 0.0;
                continue;
            }
            const double* vj = v + static_cast<size_t>(j) * d + off;
            double dp = 0.0;
#pragma omp simd reduction(+ : dp)
            for (int c = 0; c < hd; ++c) dp += gi[c] * vj[c];
            ds[j] = dp;
            weighted += p[j] * dp;
        }
        double* dqi = dq + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < s.nk; ++j) {
            if (p[j] == 0.0) continue;
            ds[j] = p[j] * (ds[j] - weighted);
            const double w = scale * ds[j];
            const double* kj = k + static_cast<size_t>(j) * d + off;
#pragma omp simd
            for (int c = 0; c < hd; ++c) dqi[c] += w * kj[c];
        }
    }

    // Pass 2, per (head, key): dk and dv.
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int r = 0; r < krows; ++r) {
        const int h = r / s.nk;
        const int j = r % s.nk;
        const int off = h * hd;
        double* dkj = dk + static_cast<size_t>(j) * d + off;
        double* dvj = dv + static_cast<size_t>(j) * d + off;
        for (int i = 0; i < s.nq; ++i) {
            const size_t idx = (static_cast<size_t>(h) * s.nq + i) * s.nk + j;
            const double pij = probs[idx];
            if (pij == 0.0) continue;
            const double w = scale * scratch[idx];
            const double* qi = q + static_cast<size_t>(i) * d + off;
            const double* gi = dout + static_cast<size_t>(i) * d + off;
#pragma omp simd
            for (int c = 0; c < hd; ++c) {
                dkj[c] += w * qi[c];
                dvj[c] += pij * gi[c];
            }
        }
    }
}

void rotary(int n, int heads, int head_dim, const int* positions, double* x, bool inverse) {
    const int d = heads * head_dim;
    const int pairs = head_dim / 2;
    std::vector<double> freq(pairs);
    for (int p = 0; p < pairs; ++p) freq[p] = rotary_inv_freq(p, head_dim);
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * d > kParallelWork)
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < pairs; ++p) {
            const double angle = positions[i] * freq[p];
            const double c = std::cos(angle);
            const double sn = inverse ? -std::sin(angle) : std::sin(angle);
            for (int h = 0; h < heads; ++h) {
                double* pair = x + static_cast<size_t>(i) * d + h * head_dim + 2 * p;
                const double a = pair[0], b = pair[1];
                pair[0] = a * c - b * sn;
                pair[1] = a * sn + b * c;
            }
        }
    }
}

void layer_norm_forward(int n, int d, const double* x, const double* gain, const double* bias, double eps,
                        double* y, double* xhat, double* rstd) {
#pragma omp parallel for schedule(static) if (static_cast<long>(n) * d > kParallelWork)
    for (int i = 0; i < n; ++i) {
        const double* xi = x + static_cast<size_t>(i) * d;
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += xi[c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xi[c] - mean) * (xi[c] - mean);
        var /= d;
        const double r = 1.0 / std::sqrt(var + eps);
        rstd[i] = r;
        double* hi = xhat + static_cast<size_t>(i) * d;
        double* yi = y + static_cast<size_t>(i) * d;
        for (int c = 0; c < d; ++c) {
            hi[c] = (xi[c] - mean) * r;
            yi[c] = hi[c] * gain[c] + bias[c];
        }
    }
}

void layer_norm_backward(int n, int d, const double* dy, const double* xhat, const double* rstd,
                         const double* gain, double* dx, double* dgain, double* dbias) {
    const bool go_parallel = static_cast<long>(n) * d > kParallelWork;
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int i = 0; i < n; ++i) {
        const double* gi = dy + static_cast<size_t>(i) * d;
        const double* hi = xhat + static_cast<size_t>(i) * d;
        double mean_g = 0.0, mean_gx = 0.0;
        for (int c = 0; c < d; ++c) {
            const double g = gi[c] * gain[c];
            mean_g += g;
            mean_gx += g * hi[c];
        }
        mean_g /= d;
        mean_gx /= d;
        double* dxi = dx + static_cast<size_t>(i) * d;
        for (int c = 0; c < d; ++c) dxi[c] += rstd[i] * (gi[c] * gain[c] - mean_g - hi[c] * mean_gx);
    }
    // Column reductions: one thread per column keeps the row order fixed.
#pragma omp parallel for schedule(static) if (go_parallel)
    for (int c = 0; c < d; ++c) {
        double sg = 0.0, sb = 0.0;
        for (int i = 0; i < n; ++i) {
            sg += dy[static_cast<size_t>(i) * d + c] * xhat[static_cast<size_t>(i) * d + c];
            sb += dy[static_cast<size_t>(i) * d + c];
        }
        dgain[c] += sg;
        dbias[c] += sb;
    }
}

} // namespace jm::kernels::parallel
