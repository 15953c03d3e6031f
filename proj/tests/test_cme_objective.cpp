#include "jointmotion/cme.hpp"
#include "jointmotion/errors.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>

using namespace jm;

namespace {

TokenSequence rows_as_tokens(const Tensor& t, std::vector<uint8_t> valid = {}) {
    TokenSequence s;
    s.tokens = Var(t);
    s.valid = valid.empty() ? std::vector<uint8_t>(t.rows(), 1) : std::move(valid);
    s.modality.assign(t.rows(), Modality::agent);
    s.polyline_id.assign(t.rows(), 0);
    s.within_index.assign(t.rows(), 0);
    s.positions_1d.assign(t.rows(), 0);
    return s;
}

// Straight loops over the definition: biased batch statistics, then Zm^T Ze / B.
Tensor correlation_oracle(const Tensor& zm, const Tensor& ze, double eps) {
    const int b = zm.rows(), d = zm.cols();
    auto standardize = [&](const Tensor& z) {
        Tensor out(b, d);
        for (int c = 0; c < d; ++c) {
            double mean = 0.0, var = 0.0;
            for (int r = 0; r < b; ++r) mean += z(r, c);
            mean /= b;
            for (int r = 0; r < b; ++r) var += (z(r, c) - mean) * (z(r, c) - mean);
            var /= b;
            for (int r = 0; r < b; ++r) out(r, c) = (z(r, c) - mean) / std::sqrt(var + eps * eps);
        }
        return out;
    };
    const Tensor a = standardize(zm), e = standardize(ze);
    Tensor c(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            for (int r = 0; r < b; ++r) c(i, j) += a(r, i) * e(r, j);
            c(i, j) /= b;
        }
    return c;
}

// Columns 1..4 of the order-8 Sylvester matrix: zero mean, unit variance, orthogonal.
Tensor hadamard_batch() {
    Tensor h(8, 4);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 4; ++c) h(r, c) = (std::popcount(static_cast<unsigned>(r & (c + 1))) % 2) ? -1.0 : 1.0;
    return h;
}

} // namespace

TEST_CASE("pooling takes the mean of valid tokens") {
    Tensor two(2, 3);
    two(0, 0) = 1.0;
    two(1, 1) = 1.0;
    const Tensor p = pool_motion(rows_as_tokens(two)).value();
    CHECK(p(0, 0) == 0.5);
    CHECK(p(0, 1) == 0.5);
    CHECK(p(0, 2) == 0.0);

    Rng rng(1);
    const Tensor t = jm::testing::random_tensor(5, 4, rng);
    Tensor doubled(10, 4);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 4; ++c) doubled(r, c) = t(r % 5, c);
    CHECK(max_abs_diff(pool_motion(rows_as_tokens(t)).value(), pool_motion(rows_as_tokens(doubled)).value()) < 1e-12);

    Tensor reversed(5, 4);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) reversed(r, c) = t(4 - r, c);
    CHECK(max_abs_diff(pool_motion(rows_as_tokens(t)).value(), pool_motion(rows_as_tokens(reversed)).value()) < 1e-9);

    // Invalid rows are ignored no matter what they hold.
    Tensor junk = t;
    for (int c = 0; c < 4; ++c) junk(2, c) = 1e6;
    const Tensor skip = pool_motion(rows_as_tokens(junk, {1, 1, 0, 1, 1})).value();
    for (int c = 0; c < 4; ++c) CHECK(skip(0, c) == doctest::Approx((t(0, c) + t(1, c) + t(3, c) + t(4, c)) / 4));

    CHECK_THROWS_AS(pool_motion(rows_as_tokens(t, {0, 0, 0, 0, 0})), DataError);
}

TEST_CASE("environment pooling spans lanes and lights together") {
    Tensor lanes(3, 2, 1.0), lights(1, 2, 5.0);
    const Tensor p = pool_environment(rows_as_tokens(lanes), rows_as_tokens(lights)).value();
    CHECK(p(0, 0) == 2.0);
    CHECK(p(0, 1) == 2.0);
    const Tensor no_lights = pool_environment(rows_as_tokens(lanes), rows_as_tokens(Tensor(0, 2))).value();
    CHECK(no_lights(0, 0) == 1.0);
    CHECK_THROWS_AS(pool_environment(rows_as_tokens(lanes, {0, 0, 0}), rows_as_tokens(Tensor(0, 2))), DataError);
}

TEST_CASE("projectors are independent and sized by config") {
    NoGradGuard guard;
    ParameterStore store;
    Rng rng(2);
    CmeProjectors p(store, ProjectorConfig{}, rng);
    CHECK(p.motion.output_width() == 256);
    CHECK(p.environment.output_width() == 256);
    for (const auto& name : store.names())
        CHECK((name.rfind("cme.proj_motion.", 0) == 0 || name.rfind("cme.proj_env.", 0) == 0));

    const Var x(jm::testing::random_tensor(1, 256, rng));
    CHECK(max_abs_diff(p.motion(x).value(), p.environment(x).value()) > 1e-3);

    Tensor same(3, 256);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 256; ++c) same(r, c) = x.value()(0, c);
    const Tensor out = p.motion(Var(same)).value();
    for (int c = 0; c < 256; ++c) {
        CHECK(out(0, c) == out(1, c));
        CHECK(out(0, c) == out(2, c));
    }
    CHECK_THROWS_AS(p.motion(Var(Tensor(1, 8))), std::invalid_argument);
}

TEST_CASE("cross-correlation agrees with a loop oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor zm = jm::testing::random_tensor(6, 5, rng, 3.0), ze = jm::testing::random_tensor(6, 5, rng);
        const Tensor c = cross_correlation({Var(zm), Var(ze)}, 1e-5).value();
        CHECK(max_abs_diff(c, correlation_oracle(zm, ze, 1e-5)) < 1e-12);
        for (double v : c.flat()) CHECK(std::abs(v) <= 1.0 + 1e-9);
    }
}

TEST_CASE("signed Hadamard columns give identity and permutation correlations") {
    const Tensor h = hadamard_batch();
    const Tensor c = cross_correlation({Var(h), Var(h)}, 1e-5).value();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(std::abs(c(i, j) - (i == j ? 1.0 : 0.0)) < 1e-6);

    const int perm[4] = {2, 0, 3, 1};
    Tensor hp(8, 4);
    for (int r = 0; r < 8; ++r)
        for (int j = 0; j < 4; ++j) hp(r, j) = h(r, perm[j]);
    const Tensor cp = cross_correlation({Var(h), Var(hp)}, 1e-5).value();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(std::abs(cp(i, j) - (perm[j] == i ? 1.0 : 0.0)) < 1e-6);
}

TEST_CASE("degenerate batches stay finite") {
    Rng rng(4);
    Tensor zm = jm::testing::random_tensor(4, 3, rng);
    for (int r = 0; r < 4; ++r) zm(r, 1) = 7.0;
    const Tensor c = cross_correlation({Var(zm), Var(jm::testing::random_tensor(4, 3, rng))}, 1e-5).value();
    for (int j = 0; j < 3; ++j) CHECK(std::abs(c(1, j)) < 1e-9);

    Tensor repeated(4, 3);
    for (int r = 0; r < 4; ++r)
        for (int col = 0; col < 3; ++col) repeated(r, col) = 0.1 * col;
    const Tensor z = cross_correlation({Var(repeated), Var(repeated)}, 1e-5).value();
    for (double v : z.flat()) CHECK(std::isfinite(v));
    CHECK(std::isfinite(cme_loss(Var(z), 0.005).item()));

    CHECK_THROWS_AS(cross_correlation({Var(Tensor(1, 3)), Var(Tensor(1, 3))}, 1e-5), std::invalid_argument);
    CHECK_THROWS_AS(cross_correlation({Var(Tensor(4, 3)), Var(Tensor(4, 2))}, 1e-5), std::invalid_argument);
    Tensor bad(4, 3);
    bad(2, 2) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(cross_correlation({Var(bad), Var(Tensor(4, 3))}, 1e-5), NumericError);
}

TEST_CASE("redundancy-reduction loss values") {
    Tensor eye(4, 4);
    for (int i = 0; i < 4; ++i) eye(i, i) = 1.0;
    CHECK(cme_loss(Var(eye), 0.005).item() == 0.0);
    CHECK(cme_loss(Var(Tensor(4, 4)), 0.005).item() == 4.0);
    CHECK(cme_loss(Var(Tensor(3, 3, 1.0)), 0.005).item() == doctest::Approx(0.03).epsilon(1e-12));
    CHECK_THROWS_AS(cme_loss(Var(Tensor(3, 4)), 0.005), std::invalid_argument);

    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor c = jm::testing::random_tensor(5, 5, rng);
        double off = 0.0;
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                if (i != j) off += c(i, j) * c(i, j);
        const double l1 = cme_loss(Var(c), 0.1).item(), l2 = cme_loss(Var(c), 0.3).item();
        CHECK(l1 >= 0.0);
        CHECK((l2 - l1) / 0.2 == doctest::Approx(off).epsilon(1e-9));
    }
}

TEST_CASE("projected correlation loss gradient matches finite differences") {
    ParameterStore store;
    Rng rng(6);
    CmeProjectors p(store, {8, 16, 8}, rng);
    auto f = [&](const std::vector<Var>& in) {
        const Var c = cross_correlation(p.project(in[0], in[1]), 1e-5);
        return cme_loss(c, 0.005);
    };
    const double err =
        jm::testing::gradient_error(f, {jm::testing::random_tensor(4, 8, rng), jm::testing::random_tensor(4, 8, rng)});
    CHECK(err < 1e-3);
}
