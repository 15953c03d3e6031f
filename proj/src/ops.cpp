#include "jointmotion/ops.hpp"

#include "jointmotion/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace jm::ops {

namespace kp = kernels::parallel;

namespace {

#define require(ok, what)                                      \
    do {                                                       \
        if (!(ok)) throw std::invalid_argument(what);          \
    } while (0)

std::string shapes(const Var& a, const Var& b) { return a.value().shape_string() + " vs " + b.value().shape_string(); }

Node* parent_if_grad(Node& n, size_t i) {
    Node* p = n.parents[i].get();
    return p->requires_grad ? p : nullptr;
}

void add_into(Tensor& dst, const Tensor& src, double factor = 1.0) {
    double* d = dst.data();
    const double* s = src.data();
    for (size_t i = 0; i < dst.size(); ++i) d[i] += factor * s[i];
}

} // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimension mismatch " + shapes(a, b));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out(m, n);
    kp::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data(), false);
    return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Tensor& g = self.grad;
        if (Node* pa = parent_if_grad(self, 0))
            kp::gemm_nt(m, k, n, g.data(), self.parents[1]->value.data(), pa->grad_buffer().data(), true);
        if (Node* pb = parent_if_grad(self, 1))
            kp::gemm_tn(k, n, m, self.parents[0]->value.data(), g.data(), pb->grad_buffer().data(), true);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require(x.cols() == w.rows(), "linear: input width mismatch " + shapes(x, w));
    const bool has_bias = b.defined();
    if (has_bias) require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias shape mismatch " + shapes(b, w));
    const int m = x.rows(), k = x.cols(), n = w.cols();
    Tensor out(m, n);
    kp::gemm_nn(m, n, k, x.value().data(), w.value().data(), out.data(), false);
    if (has_bias)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out(i, j) += b.value()(0, j);
    std::vector<Var> parents{x, w};
    if (has_bias) parents.push_back(b);
    return make_result(std::move(out), std::move(parents), [m, k, n, has_bias](Node& self) {
        const Tensor& g = self.grad;
        if (Node* px = parent_if_grad(self, 0))
            kp::gemm_nt(m, k, n, g.data(), self.parents[1]->value.data(), px->grad_buffer().data(), true);
        if (Node* pw = parent_if_grad(self, 1))
            kp::gemm_tn(k, n, m, self.parents[0]->value.data(), g.data(), pw->grad_buffer().data(), true);
        if (has_bias)
            if (Node* pb = parent_if_grad(self, 2)) {
                Tensor& gb = pb->grad_buffer();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb(0, j) += g(i, j);
            }
    });
}

Var add(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "add: shape mismatch " + shapes(a, b));
    Tensor out = a.value();
    add_into(out, b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (size_t i = 0; i < 2; ++i)
            if (Node* p = parent_if_grad(self, i)) add_into(p->grad_buffer(), self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "sub: shape mismatch " + shapes(a, b));
    Tensor out = a.value();
    add_into(out, b.value(), -1.0);
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) add_into(p->grad_buffer(), self.grad);
        if (Node* p = parent_if_grad(self, 1)) add_into(p->grad_buffer(), self.grad, -1.0);
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "mul: shape mismatch " + shapes(a, b));
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        const Tensor& g = self.grad;
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            const Tensor& other = self.parents[1]->value;
            for (size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i] * other.data()[i];
        }
        if (Node* p = parent_if_grad(self, 1)) {
            Tensor& dst = p->grad_buffer();
            const Tensor& other = self.parents[0]->value;
            for (size_t i = 0; i < g.size(); ++i) dst.data()[i] += g.data()[i] * other.data()[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.flat()) v *= s;
    return make_result(std::move(out), {a}, [s](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) add_into(p->grad_buffer(), self.grad, s);
    });
}

Var add_row(const Var& x, const Var& row) {
    require(row.rows() == 1 && row.cols() == x.cols(), "add_row: shape mismatch " + shapes(x, row));
    Tensor out = x.value();
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) += row.value()(0, j);
    return make_result(std::move(out), {x, row}, [](Node& self) {
        const Tensor& g = self.grad;
        if (Node* p = parent_if_grad(self, 0)) add_into(p->grad_buffer(), g);
        if (Node* p = parent_if_grad(self, 1)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) dst(0, j) += g(i, j);
        }
    });
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.flat()) v = v > 0.0 ? v : 0.0;
    return make_result(std::move(out), {x}, [](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (size_t i = 0; i < dst.size(); ++i)
                if (p->value.data()[i] > 0.0) dst.data()[i] += self.grad.data()[i];
        }
    });
}

Var gelu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.flat()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    return make_result(std::move(out), {x}, [](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            for (size_t i = 0; i < dst.size(); ++i) {
                const double v = p->value.data()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                dst.data()[i] += self.grad.data()[i] * (cdf + v * pdf);
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    const int n = x.rows(), d = x.cols();
    require(gain.rows() == 1 && gain.cols() == d && bias.value().same_shape(gain.value()),
            "layer_norm: parameter shape mismatch " + shapes(x, gain));
    Tensor out(n, d);
    auto saved = std::make_shared<std::pair<Tensor, Tensor>>(Tensor(n, d), Tensor(n, 1));
    kp::layer_norm_forward(n, d, x.value().data(), gain.value().data(), bias.value().data(), eps, out.data(),
                           saved->first.data(), saved->second.data());
    return make_result(std::move(out), {x, gain, bias}, [n, d, saved](Node& self) {
        Tensor dx_scratch, dg_scratch, db_scratch;
        Node* px = parent_if_grad(self, 0);
        Node* pg = parent_if_grad(self, 1);
        Node* pb = parent_if_grad(self, 2);
        if (!pg) dg_scratch = Tensor(1, d);
        if (!pb) db_scratch = Tensor(1, d);
        if (!px) dx_scratch = Tensor(n, d);
        kp::layer_norm_backward(n, d, self.grad.data(), saved->first.data(), saved->second.data(),
                                self.parents[1]->value.data(), px ? px->grad_buffer().data() : dx_scratch.data(),
                                pg ? pg->grad_buffer().data() : dg_scratch.data(),
                                pb ? pb->grad_buffer().data() : db_scratch.data());
    });
}

Var attention(const Var& q, const Var& k, const Var& v, const AttentionOptions& options) {
    const int nq = q.rows(), nk = k.rows(), d = q.cols();
    require(k.cols() == d && v.cols() == d && v.rows() == nk, "attention: q/k/v shape mismatch");
    require(options.heads >= 1 && d % options.heads == 0, "attention: width not divisible by heads");
    require(options.allowed.empty() || options.allowed.size() == static_cast<size_t>(nq) * nk,
            "attention: allowed mask size mismatch");
    const bool rotary = !options.q_positions.empty() || !options.k_positions.empty();
    const kernels::AttentionShape shape{nq, nk, options.heads, d / options.heads};
    if (rotary) {
        require(options.q_positions.size() == static_cast<size_t>(nq) &&
                    options.k_positions.size() == static_cast<size_t>(nk),
                "attention: rotary positions size mismatch");
        require(shape.head_dim % 2 == 0, "attention: rotary needs an even head width");
    }

    struct Saved {
        Tensor q, k; // rotated copies
        Tensor probs;
        std::vector<int> q_pos, k_pos;
    };
    auto saved = std::make_shared<Saved>();
    saved->q = q.value();
    saved->k = k.value();
    if (rotary) {
        saved->q_pos = options.q_positions;
        saved->k_pos = options.k_positions;
        kp::rotary(nq, shape.heads, shape.head_dim, saved->q_pos.data(), saved->q.data(), false);
        kp::rotary(nk, shape.heads, shape.head_dim, saved->k_pos.data(), saved->k.data(), false);
    }
    saved->probs = Tensor(shape.heads * nq, nk);
    Tensor out(nq, d);
    kp::attention_forward(shape, saved->q.data(), saved->k.data(), v.value().data(),
                          options.allowed.empty() ? nullptr : options.allowed.data(), saved->probs.data(), out.data());

    return make_result(std::move(out), {q, k, v}, [shape, rotary, saved](Node& self) {
        Tensor dq(shape.nq, shape.width()), dk(shape.nk, shape.width()), dv(shape.nk, shape.width());
        Tensor scratch(shape.heads * shape.nq, shape.nk);
        kp::attention_backward(shape, saved->q.data(), saved->k.data(), self.parents[2]->value.data(),
                               saved->probs.data(), self.grad.data(), dq.data(), dk.data(), dv.data(),
                               scratch.data());
        if (rotary) {
            kp::rotary(shape.nq, shape.heads, shape.head_dim, saved->q_pos.data(), dq.data(), true);
            kp::rotary(shape.nk, shape.heads, shape.head_dim, saved->k_pos.data(), dk.data(), true);
        }
        if (Node* p = parent_if_grad(self, 0)) add_into(p->grad_buffer(), dq);
        if (Node* p = parent_if_grad(self, 1)) add_into(p->grad_buffer(), dk);
        if (Node* p = parent_if_grad(self, 2)) add_into(p->grad_buffer(), dv);
    });
}

Var concat_rows(const std::vector<Var>& parts, int cols) {
    int rows = 0;
    for (const auto& p : parts) {
        require(p.cols() == cols || p.rows() == 0, "concat_rows: width mismatch");
        rows += p.rows();
    }
    Tensor out(rows, cols);
    std::vector<int> offsets;
    int r = 0;
    for (const auto& p : parts) {
        offsets.push_back(r);
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + static_cast<size_t>(r) * cols);
        r += p.rows();
    }
    return make_result(std::move(out), parts, [offsets, cols](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i)
            if (Node* p = parent_if_grad(self, i)) {
                if (p->value.empty()) continue;
                Tensor& dst = p->grad_buffer();
                const double* src = self.grad.data() + static_cast<size_t>(offsets[i]) * cols;
                for (size_t j = 0; j < dst.size(); ++j) dst.data()[j] += src[j];
            }
    });
}

Var concat_cols(const Var& a, const Var& b) {
    require(a.rows() == b.rows(), "concat_cols: row mismatch " + shapes(a, b));
    const int n = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor out(n, ca + cb);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < ca; ++j) out(i, j) = a.value()(i, j);
        for (int j = 0; j < cb; ++j) out(i, ca + j) = b.value()(i, j);
    }
    return make_result(std::move(out), {a, b}, [n, ca, cb](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < ca; ++j) dst(i, j) += self.grad(i, j);
        }
        if (Node* p = parent_if_grad(self, 1)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < cb; ++j) dst(i, j) += self.grad(i, ca + j);
        }
    });
}

Var slice_rows(const Var& x, int begin, int count) {
    require(begin >= 0 && count >= 0 && begin + count <= x.rows(), "slice_rows: range out of bounds");
    const int cols = x.cols();
    Tensor out(count, cols);
    std::copy(x.value().data() + static_cast<size_t>(begin) * cols,
              x.value().data() + static_cast<size_t>(begin + count) * cols, out.data());
    return make_result(std::move(out), {x}, [begin, cols](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            double* dst = p->grad_buffer().data() + static_cast<size_t>(begin) * cols;
            for (size_t j = 0; j < self.grad.size(); ++j) dst[j] += self.grad.data()[j];
        }
    });
}

Var gather_rows(const Var& x, const std::vector<int>& indices) {
    const int cols = x.cols();
    Tensor out(static_cast<int>(indices.size()), cols);
    for (size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] >= 0 && indices[i] < x.rows(), "gather_rows: index out of range");
        const auto src = x.value().row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
    }
    return make_result(std::move(out), {x}, [indices, cols](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (size_t i = 0; i < indices.size(); ++i)
                for (int j = 0; j < cols; ++j) dst(indices[i], j) += self.grad(static_cast<int>(i), j);
        }
    });
}

Var transpose(const Var& x) {
    const int n = x.rows(), m = x.cols();
    Tensor out(m, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out(j, i) = x.value()(i, j);
    return make_result(std::move(out), {x}, [n, m](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) dst(i, j) += self.grad(j, i);
        }
    });
}

Var reshape(const Var& x, int rows, int cols) {
    require(static_cast<size_t>(rows) * cols == x.value().size(), "reshape: element count mismatch");
    Tensor out(rows, cols, x.value().values());
    return make_result(std::move(out), {x}, [](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (size_t j = 0; j < dst.size(); ++j) dst.data()[j] += self.grad.data()[j];
        }
    });
}

Var mask_rows(const Var& x, const std::vector<uint8_t>& keep) {
    require(keep.size() == static_cast<size_t>(x.rows()), "mask_rows: mask size mismatch");
    Tensor out = x.value();
    for (int i = 0; i < out.rows(); ++i)
        if (!keep[i])
            for (auto& v : out.row(i)) v = 0.0;
    return make_result(std::move(out), {x}, [keep](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < dst.rows(); ++i)
                if (keep[i])
                    for (int j = 0; j < dst.cols(); ++j) dst(i, j) += self.grad(i, j);
        }
    });
}

Var replace_rows(const Var& x, const std::vector<uint8_t>& replace, const Var& row) {
    require(replace.size() == static_cast<size_t>(x.rows()), "replace_rows: mask size mismatch");
    require(row.rows() == 1 && row.cols() == x.cols(), "replace_rows: row shape mismatch " + shapes(x, row));
    Tensor out = x.value();
    for (int i = 0; i < out.rows(); ++i)
        if (replace[i])
            for (int j = 0; j < out.cols(); ++j) out(i, j) = row.value()(0, j);
    return make_result(std::move(out), {x, row}, [replace](Node& self) {
        const Tensor& g = self.grad;
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < g.rows(); ++i)
                if (!replace[i])
                    for (int j = 0; j < g.cols(); ++j) dst(i, j) += g(i, j);
        }
        if (Node* p = parent_if_grad(self, 1)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < g.rows(); ++i)
                if (replace[i])
                    for (int j = 0; j < g.cols(); ++j) dst(0, j) += g(i, j);
        }
    });
}

Var mean_rows(const Var& x, const std::vector<uint8_t>& include) {
    require(include.empty() || include.size() == static_cast<size_t>(x.rows()), "mean_rows: mask size mismatch");
    const int cols = x.cols();
    int count = 0;
    Tensor out(1, cols);
    for (int i = 0; i < x.rows(); ++i) {
        if (!include.empty() && !include[i]) continue;
        ++count;
        for (int j = 0; j < cols; ++j) out(0, j) += x.value()(i, j);
    }
    require(count > 0, "mean_rows: no rows selected");
    for (auto& v : out.flat()) v /= count;
    return make_result(std::move(out), {x}, [include, count, cols](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < dst.rows(); ++i) {
                if (!include.empty() && !include[i]) continue;
                for (int j = 0; j < cols; ++j) dst(i, j) += self.grad(0, j) / count;
            }
        }
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().flat()) s += v;
    return make_result(Tensor(1, 1, s), {x}, [](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            const double g = self.grad(0, 0);
            for (auto& v : p->grad_buffer().flat()) v += g;
        }
    });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    require(x.value().same_shape(weights), "weighted_sum: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) s += x.value().data()[i] * weights.data()[i];
    return make_result(Tensor(1, 1, s), {x}, [weights](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) add_into(p->grad_buffer(), weights, self.grad(0, 0));
    });
}

Var element(const Var& x, int r, int c) {
    require(r >= 0 && r < x.rows() && c >= 0 && c < x.cols(), "element: index out of range");
    return make_result(Tensor(1, 1, x.value()(r, c)), {x}, [r, c](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) p->grad_buffer()(r, c) += self.grad(0, 0);
    });
}

Var log_softmax_rows(const Var& x) {
    Tensor out = x.value();
    for (int i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        double best = row.empty() ? 0.0 : row[0];
        for (double v : row) best = std::max(best, v);
        double total = 0.0;
        for (double v : row) total += std::exp(v - best);
        const double lse = best + std::log(total);
        for (auto& v : row) v -= lse;
    }
    Tensor saved = out;
    return make_result(std::move(out), {x}, [saved](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            for (int i = 0; i < dst.rows(); ++i) {
                double gsum = 0.0;
                for (int j = 0; j < dst.cols(); ++j) gsum += self.grad(i, j);
                for (int j = 0; j < dst.cols(); ++j) dst(i, j) += self.grad(i, j) - std::exp(saved(i, j)) * gsum;
            }
        }
    });
}

Var standardize_columns(const Var& z, double eps) {
    const int b = z.rows(), d = z.cols();
    require(b >= 1, "standardize_columns: empty batch");
    Tensor out(b, d);
    Tensor inv_std(1, d);
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int i = 0; i < b; ++i) mean += z.value()(i, j);
        mean /= b;
        double var = 0.0;
        for (int i = 0; i < b; ++i) var += (z.value()(i, j) - mean) * (z.value()(i, j) - mean);
        var /= b;
        inv_std(0, j) = 1.0 / std::sqrt(var + eps * eps);
        for (int i = 0; i < b; ++i) out(i, j) = (z.value()(i, j) - mean) * inv_std(0, j);
    }
    Tensor y = out;
    return make_result(std::move(out), {z}, [b, d, y, inv_std](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            const Tensor& g = self.grad;
            for (int j = 0; j < d; ++j) {
                double mean_g = 0.0, mean_gy = 0.0;
                for (int i = 0; i < b; ++i) {
                    mean_g += g(i, j);
                    mean_gy += g(i, j) * y(i, j);
                }
                mean_g /= b;
                mean_gy /= b;
                for (int i = 0; i < b; ++i)
                    dst(i, j) += inv_std(0, j) * (g(i, j) - mean_g - y(i, j) * mean_gy);
            }
        }
    });
}

Var cme_loss(const Var& c, double lambda_red) {
    require(c.rows() == c.cols(), "cme_loss: matrix must be square, got " + c.value().shape_string());
    const int d = c.rows();
    double on = 0.0, off = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            const double v = c.value()(i, j);
            if (i == j)
                on += (1.0 - v) * (1.0 - v);
            else
                off += v * v;
        }
    return make_result(Tensor(1, 1, on + lambda_red * off), {c}, [d, lambda_red](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            const double g = self.grad(0, 0);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    const double v = p->value(i, j);
                    dst(i, j) += g * (i == j ? -2.0 * (1.0 - v) : 2.0 * lambda_red * v);
                }
        }
    });
}

double huber(double residual, double delta) {
    const double a = std::abs(residual);
    return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

Var huber_mean(const Var& pred, const Tensor& target, const std::vector<uint8_t>& rows, double delta) {
    require(pred.value().same_shape(target), "huber_mean: shape mismatch " + pred.value().shape_string() + " vs " +
                                                 target.shape_string());
    require(rows.size() == static_cast<size_t>(target.rows()), "huber_mean: row mask size mismatch");
    require(delta > 0.0, "huber_mean: delta must be positive");
    long count = 0;
    double total = 0.0;
    const int cols = target.cols();
    for (int i = 0; i < target.rows(); ++i) {
        if (!rows[i]) continue;
        for (int j = 0; j < cols; ++j) total += huber(pred.value()(i, j) - target(i, j), delta);
        count += cols;
    }
    if (count == 0) return constant(Tensor(1, 1, 0.0));
    return make_result(Tensor(1, 1, total / count), {pred}, [target, rows, delta, count, cols](Node& self) {
        if (Node* p = parent_if_grad(self, 0)) {
            Tensor& dst = p->grad_buffer();
            const double g = self.grad(0, 0) / count;
            for (int i = 0; i < target.rows(); ++i) {
                if (!rows[i]) continue;
                for (int j = 0; j < cols; ++j) {
                    const double r = p->value(i, j) - target(i, j);
                    dst(i, j) += g * std::clamp(r, -delta, delta);
                }
            }
        }
    });
}

} // namespace jm::ops
