#include "jointmotion/kernels.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace jm::kernels {

double rotary_inv_freq(int p, int head_dim) {
    return std::pow(10000.0, -2.0 * p / static_cast<double>(head_dim));
}

namespace reference {

void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
}

void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
}

void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
}

void attention_forward(const AttentionShape& s, const double* q, const double* k, const double* v,
                       const uint8_t* allowed, double* probs, double* out) {
    const int d = s.width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    for (int i = 0; i < s.nq * d; ++i) out[i] = 0.0;
    for (int h = 0; h < s.heads; ++h) {
        const int off = h * s.head_dim;
        for (int i = 0; i < s.nq; ++i) {
            double* p = probs + (static_cast<size_t>(h) * s.nq + i) * s.nk;
            double best = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < s.nk; ++j) {
                if (allowed && !allowed[static_cast<size_t>(i) * s.nk + j]) {
                    p[j] = 0.0;
                    continue;
                }
                double dot = 0.0;
                for (int c = 0; c < s.head_dim; ++c) dot += q[i * d + off + c] * k[j * d + off + c];
                p[j] = dot * scale;
                if (p[j] > best) best = p[j];
            }
            if (best == -std::numeric_limits<double>::infinity()) continue;
            double total = 0.0;
            for (int j = 0; j < s.nk; ++j) {
                if (allowed && !allowed[static_cast<size_t>(i) * s.nk + j]) continue;
                p[j] = std::exp(p[j] - best);
                total += p[j];
            }
            for (int j = 0; j < s.nk; ++j) p[j] /= total;
            for (int j = 0; j < s.nk; ++j)
                for (int c = 0; c < s.head_dim; ++c) out[i * d + off + c] += p[j] * v[j * d + off + c];
        }
    }
}

void attention_backward(const AttentionShape& s, const double* q, const double* k, const double* v,
                        const double* probs, const double* dout, double* dq, double* dk, double* dv,
                        double* scratch) {
    const int d = s.width();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
    for (int h = 0; h < s.heads; ++h) {
        const int off = h * s.head_dim;
        for (int i = 0; i < s.nq; ++i) {
            const double* p = probs + (static_cast<size_t>(h) * s.nq + i) * s.nk;
            double* ds = scratch + (static_cast<size_t>(h) * s.nq + i) * s.nk;
            double weighted = 0.0;
            for (int j = 0; j < s.nk; ++j) {
                double dp = 0.0;
                for (int c = 0; c < s.head_dim; ++c) dp += dout[i * d + off + c] * v[j * d + off + c];
                ds[j] = dp;
                weighted += p[j] * dp;
            }
            for (int j = 0; j < s.nk; ++j) ds[j] = p[j] * (ds[j] - weighted);
            for (int j = 0; j < s.nk; ++j)
                for (int c = 0; c < s.head_dim; ++c) {
                    dq[i * d + off + c] += scale * ds[j] * k[j * d + off + c];
                    dk[j * d + off + c] += scale * ds[j] * q[i * d + off + c];
                    dv[j * d + off + c] += p[j] * dout[i * d + off + c];
                }
        }
    }
}

void rotary(int n, int heads, int head_dim, const int* positions, double* x, bool inverse) {
    const int d = heads * head_dim;
    for (int i = 0; i < n; ++i)
        for (int h = 0; h < heads; ++h)
            for (int p = 0; p < head_dim / 2; ++p) {
                const double angle = positions[i] * rotary_inv_freq(p, head_dim);
                const double c = std::cos(angle);
                const double sn = inverse ? -std::sin(angle) : std::sin(angle);
                double* pair = x + i * d + h * head_dim + 2 * p;
                const double a = pair[0], b = pair[1];
                pair[0] = a * c - b * sn;
                pair[1] = a * sn + b * c;
            }
}

void layer_norm_forward(int n, int d, const double* x, const double* gain, const double* bias, double eps,
                        double* y, double* xhat, double* rstd) {
    for (int i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int c = 0; c < d; ++c) mean += x[i * d + c];
        mean /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (x[i * d + c] - mean) * (x[i * d + c] - mean);
        var /= d;
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < d; ++c) {
            xhat[i * d + c] = (x[i * d + c] - mean) * rstd[i];
            y[i * d + c] = xhat[i * d + c] * gain[c] + bias[c];
        }
    }
}

void layer_norm_backward(int n, int d, const double* dy, const double* xhat, const double* rstd,
                         const double* gain, double* dx, double* dgain, double* dbias) {
    for (int i = 0; i < n; ++i) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (int c = 0; c < d; ++c) {
            const double g = dy[i * d + c] * gain[c];
            mean_g += g;
            mean_gx += g * xhat[i * d + c];
        }
        mean_g /= d;
        mean_gx /= d;
        for (int c = 0; c < d; ++c) {
            const double g = dy[i * d + c] * gain[c];
            dx[i * d + c] += rstd[i] * (g - mean_g - xhat[i * d + c] * mean_gx);
            dgain[c] += dy[i * d + c] * xhat[i * d + c];
            dbias[c] += dy[i * d + c];
        }
    }
}

} // namespace reference
} // namespace jm::kernels
