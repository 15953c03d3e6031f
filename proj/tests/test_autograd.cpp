#include "jointmotion/ops.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace jm;
using jm::testing::gradient_error;
using jm::testing::random_tensor;
namespace o = jm::ops;

namespace {

// Reduces any tensor to a scalar with fixed pseudo-random weights so every
// output element contributes a distinct gradient.
Var probe(const Var& x) {
    Tensor w(x.rows(), x.cols());
    for (size_t i = 0; i < w.size(); ++i) w.data()[i] = std::sin(1.7 * static_cast<double>(i) + 0.3);
    return o::weighted_sum(x, w);
}

} // namespace

TEST_CASE("elementwise and matrix op gradients match finite differences") {
    Rng rng(1);
    const Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 5, rng), c = random_tensor(3, 4, rng);
    const Tensor bias = random_tensor(1, 5, rng), row = random_tensor(1, 4, rng);

    CHECK(gradient_error([](auto& v) { return probe(o::matmul(v[0], v[1])); }, {a, b}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::linear(v[0], v[1], v[2])); }, {a, b, bias}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::add(v[0], v[1])); }, {a, c}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::sub(v[0], v[1])); }, {a, c}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::mul(v[0], v[1])); }, {a, c}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::scale(v[0], -2.5)); }, {a}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::add_row(v[0], v[1])); }, {a, row}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::gelu(v[0])); }, {a}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::relu(v[0])); }, {a}) < 1e-6);
    CHECK(gradient_error([](auto& v) { return probe(o::transpose(v[0])); }, {a}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::reshape(v[0], 2, 6)); }, {a}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::log_softmax_rows(v[0])); }, {a}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return o::sum(v[0]); }, {a}) < 1e-7);
}

TEST_CASE("layer norm and standardization gradients") {
    Rng rng(2);
    const Tensor x = random_tensor(5, 6, rng), g = random_tensor(1, 6, rng), b = random_tensor(1, 6, rng);
    CHECK(gradient_error([](auto& v) { return probe(o::layer_norm(v[0], v[1], v[2])); }, {x, g, b}) < 1e-6);
    CHECK(gradient_error([](auto& v) { return probe(o::standardize_columns(v[0], 1e-5)); }, {x}) < 1e-6);
}

TEST_CASE("row manipulation gradients") {
    Rng rng(3);
    const Tensor x = random_tensor(5, 3, rng), y = random_tensor(2, 3, rng), r = random_tensor(1, 3, rng);
    const std::vector<uint8_t> keep{1, 0, 1, 1, 0};
    CHECK(gradient_error([](auto& v) { return probe(o::concat_rows({v[0], v[1]}, 3)); }, {x, y}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::concat_cols(v[0], v[1])); }, {x, random_tensor(5, 2, rng)}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::slice_rows(v[0], 1, 3)); }, {x}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return probe(o::gather_rows(v[0], {4, 0, 4, 2})); }, {x}) < 1e-7);
    CHECK(gradient_error([&](auto& v) { return probe(o::mask_rows(v[0], keep)); }, {x}) < 1e-7);
    CHECK(gradient_error([&](auto& v) { return probe(o::replace_rows(v[0], keep, v[1])); }, {x, r}) < 1e-7);
    CHECK(gradient_error([&](auto& v) { return probe(o::mean_rows(v[0], keep)); }, {x}) < 1e-7);
    CHECK(gradient_error([](auto& v) { return o::element(v[0], 2, 1); }, {x}) < 1e-7);
}

TEST_CASE("attention gradient with mask and rotary positions") {
    Rng rng(4);
    const int nq = 4, nk = 5, d = 8;
    o::AttentionOptions opt;
    opt.heads = 2;
    opt.allowed.assign(nq * nk, 1);
    opt.allowed[1 * nk + 3] = 0;
    for (int j = 0; j < nk; ++j) opt.allowed[3 * nk + j] = 0;
    opt.q_positions = {0, 3, 7, 2};
    opt.k_positions = {1, 4, 0, 9, 5};
    const Tensor q = random_tensor(nq, d, rng), k = random_tensor(nk, d, rng), v = random_tensor(nk, d, rng);
    CHECK(gradient_error([&](auto& x) { return probe(o::attention(x[0], x[1], x[2], opt)); }, {q, k, v}) < 1e-6);

    Var out = o::attention(Var(q), Var(k), Var(v), opt);
    for (int c = 0; c < d; ++c) CHECK(out.value()(3, c) == 0.0);
}

TEST_CASE("loss op gradients") {
    Rng rng(5);
    const Tensor c = random_tensor(4, 4, rng);
    CHECK(gradient_error([](auto& v) { return o::cme_loss(v[0], 0.005); }, {c}) < 1e-7);
    const Tensor pred = random_tensor(4, 3, rng, 3.0), target = random_tensor(4, 3, rng, 3.0);
    const std::vector<uint8_t> rows{1, 1, 0, 1};
    CHECK(gradient_error([&](auto& v) { return o::huber_mean(v[0], target, rows, 1.0); }, {pred}) < 1e-6);
}

TEST_CASE("huber definition") {
    CHECK(o::huber(0.5, 1.0) == 0.125);
    CHECK(o::huber(-3.0, 1.0) == 2.5);
    CHECK(o::huber(2.0, 0.5) == doctest::Approx(0.875));
}

TEST_CASE("gradients accumulate across backward calls and NoGradGuard stops recording") {
    Var x(Tensor(1, 1, 2.0), true);
    backward(o::mul(x, x));
    backward(o::mul(x, x));
    CHECK(x.grad()(0, 0) == 8.0);
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        const Var y = o::mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(grad_enabled());
}

TEST_CASE("shape errors are reported") {
    CHECK_THROWS_AS(o::matmul(Var(Tensor(2, 3)), Var(Tensor(2, 3))), std::invalid_argument);
    CHECK_THROWS_AS(o::add(Var(Tensor(2, 3)), Var(Tensor(3, 2))), std::invalid_argument);
}
