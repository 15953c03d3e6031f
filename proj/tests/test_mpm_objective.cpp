#include "jointmotion/errors.hpp"
#include "jointmotion/mpm.hpp"
#include "jointmotion/synthetic.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace jm;

namespace {

TransformerConfig tiny(int width = 8) { return {1, 2, 32, width, 16}; }

TokenSequence sequence(int n, int width, Modality m, int offset, Rng& rng) {
    TokenSequence s;
    s.tokens = Var(jm::testing::random_tensor(n, width, rng));
    s.modality.assign(n, m);
    s.valid.assign(n, 1);
    for (int i = 0; i < n; ++i) {
        s.polyline_id.push_back(i / 4);
        s.within_index.push_back(i % 4);
        s.positions_1d.push_back(offset + i);
    }
    return s;
}

std::array<std::vector<uint8_t>, 3> all_valid(int a, int l, int t) {
    return {std::vector<uint8_t>(a, 1), std::vector<uint8_t>(l, 1), std::vector<uint8_t>(t, 1)};
}

int ones(const std::vector<uint8_t>& v) {
    int n = 0;
    for (auto x : v) n += x != 0;
    return n;
}

} // namespace

TEST_CASE("mask counts are exact") {
    const MaskSpec s = sample_mask(all_valid(10, 10, 10), 0.6, 3);
    CHECK(s.count(Modality::agent) == 6);
    CHECK(s.count(Modality::lane) == 6);
    CHECK(s.count(Modality::light) == 6);
    const MaskSpec none = sample_mask(all_valid(10, 7, 3), 0.0, 3);
    for (int m = 0; m < 3; ++m) CHECK(ones(none.masked[m]) == 0);

    auto valid = all_valid(20, 9, 0);
    for (int i = 0; i < 20; i += 3) valid[0][i] = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        const MaskSpec s2 = sample_mask(valid, {0.6, 0.5, 0.6}, seed);
        CHECK(ones(s2.masked[0]) == static_cast<int>(std::floor(0.6 * 13)));
        CHECK(ones(s2.masked[1]) == 4);
        CHECK(s2.masked[2].empty());
        for (int i = 0; i < 20; ++i)
            if (s2.masked[0][i]) CHECK(valid[0][i]);
    }
}

TEST_CASE("masks are deterministic in the seed") {
    const auto valid = all_valid(100, 100, 100);
    const MaskSpec a = sample_mask(valid, 0.6, 11), b = sample_mask(valid, 0.6, 11), c = sample_mask(valid, 0.6, 12);
    CHECK(a.masked == b.masked);
    CHECK_FALSE(a.masked[0] == c.masked[0]);
    CHECK_FALSE(a.masked[0] == a.masked[1]);
}

TEST_CASE("apply_mask replaces rows and blocks attention one way") {
    Rng rng(1);
    const TokenSequence s = sequence(6, 4, Modality::lane, 0, rng);
    const Var token(Tensor(1, 4, 0.25));

    const MaskedSequence same = apply_mask(s, std::vector<uint8_t>(6, 0), token);
    CHECK(same.tokens.tokens.value() == s.tokens.value());
    for (auto a : same.attn_mask) CHECK(a == 1);

    const std::vector<uint8_t> masked{0, 1, 0, 0, 1, 0};
    const MaskedSequence m = apply_mask(s, masked, token);
    const Tensor& t = m.tokens.tokens.value();
    for (int c = 0; c < 4; ++c) {
        CHECK(t(1, c) == 0.25);
        CHECK(t(1, c) == t(4, c));
        CHECK(t(0, c) == s.tokens.value()(0, c));
    }
    CHECK(m.tokens.positions_1d == s.positions_1d);
    CHECK(m.tokens.polyline_id == s.polyline_id);
    CHECK(m.attn_mask[0 * 6 + 1] == 0);
    CHECK(m.attn_mask[0 * 6 + 2] == 1);
    CHECK(m.attn_mask[1 * 6 + 0] == 1);
    CHECK(m.attn_mask[1 * 6 + 4] == 1);

    // Perturbing a masked original changes nothing downstream.
    TokenSequence poked = s;
    Tensor raw = s.tokens.value();
    raw(4, 2) += 3.0;
    poked.tokens = Var(raw);
    CHECK(apply_mask(poked, masked, token).tokens.tokens.value() == t);

    CHECK_THROWS_AS(apply_mask(s, std::vector<uint8_t>(5, 0), token), std::invalid_argument);
}

TEST_CASE("late fusion decoder keeps row counts and carries cross-modal context") {
    ParameterStore store;
    Rng rng(2);
    LateFusionDecoder dec(store, tiny(), rng);
    MpmHeads heads(store, dialect_w(), 8, rng);

    LateFusionEmbeddings h;
    h.agents = sequence(6, 8, Modality::agent, 0, rng);
    h.lanes = sequence(5, 8, Modality::lane, 6, rng);
    h.lights = sequence(3, 8, Modality::light, 11, rng);
    h.lanes.tokens = Var(h.lanes.tokens.value(), true);
    const TokenSequence decoded = dec.decode(h);
    const Reconstruction r = heads.project(decoded.tokens, decoded.modality);
    CHECK(r[0].rows() == 6);
    CHECK(r[0].cols() == agent_feature_width(dialect_w()));
    CHECK(r[1].rows() == 5);
    CHECK(r[1].cols() == lane_feature_width(dialect_w()));
    CHECK(r[2].rows() == 3);

    backward(ops::sum(r[0]));
    double norm = 0.0;
    for (double g : h.lanes.tokens.grad().flat()) norm += g * g;
    CHECK(norm > 1e-12);

    NoGradGuard guard;
    LateFusionEmbeddings alone;
    alone.agents = h.agents;
    alone.lanes = sequence(0, 8, Modality::lane, 6, rng);
    alone.lights = sequence(0, 8, Modality::light, 6, rng);
    const TokenSequence d2 = dec.decode(alone);
    const Reconstruction r2 = heads.project(d2.tokens, d2.modality);
    CHECK(r2[0].rows() == 6);
    CHECK(r2[1].rows() == 0);
    CHECK(r2[2].rows() == 0);
}

TEST_CASE("early fusion decoder decompresses to one row per input") {
    NoGradGuard guard;
    ParameterStore store;
    Rng rng(3);
    EarlyFusionEncoder enc(store, {tiny(), 128, 1}, rng);
    EarlyFusionDecoder dec(store, tiny(), rng);
    for (int n : {300, 128, 1, 37}) {
        const TokenSequence in = sequence(n, 8, n % 2 ? Modality::agent : Modality::lane, 0, rng);
        const EarlyFusionLatent latent = enc.encode(in);
        CHECK(latent.latent.rows() == 128);
        const TokenSequence out = dec.decode(latent);
        CHECK(out.size() == n);
        CHECK(out.tokens.rows() == n);
        CHECK(dec.decode(latent).tokens.value() == out.tokens.value());
    }
    EarlyFusionLatent broken = enc.encode(sequence(10, 8, Modality::agent, 0, rng));
    broken.modality.pop_back();
    CHECK_THROWS_AS(dec.decode(broken), std::invalid_argument);
}

TEST_CASE("huber branches") {
    CHECK(ops::huber(0.0, 1.0) == 0.0);
    CHECK(ops::huber(0.5, 1.0) == 0.125);
    CHECK(ops::huber(2.0, 1.0) == 1.5);
    CHECK(ops::huber(-2.0, 1.0) == 1.5);
}

TEST_CASE("reconstruction loss composition") {
    const MpmConfig cfg;
    Rng rng(4);
    const ReconstructionTarget target{jm::testing::random_tensor(4, 3, rng), jm::testing::random_tensor(5, 2, rng),
                                      jm::testing::random_tensor(2, 2, rng)};
    const auto valid = all_valid(4, 5, 2);
    const MaskSpec spec = sample_mask(valid, 0.6, 9);
    const Reconstruction exact{Var(target[0]), Var(target[1]), Var(target[2])};
    const MpmLosses zero = mpm_loss(exact, target, spec, valid, cfg);
    CHECK(zero.total.item() == 0.0);
    for (const auto& v : zero.per_modality) CHECK(v.item() == 0.0);

    MaskSpec lanes_only;
    lanes_only.masked = {std::vector<uint8_t>(4, 0), std::vector<uint8_t>{1, 0, 1, 0, 0}, std::vector<uint8_t>(2, 0)};
    Reconstruction off{Var(target[0]), Var(Tensor(5, 2, 0.0)), Var(target[2])};
    MpmConfig no_lane = cfg;
    no_lane.lambda[1] = 0.0;
    const MpmLosses l = mpm_loss(off, target, lanes_only, valid, no_lane);
    CHECK(l.total.item() == 0.0);
    CHECK(l.per_modality[1].item() > 0.0);

    // Masked-only scope ignores unmasked rows entirely.
    ReconstructionTarget moved = target;
    moved[1](1, 0) += 10.0;
    moved[1](3, 1) -= 10.0;
    CHECK(mpm_loss(off, moved, lanes_only, valid, cfg).total.item() == mpm_loss(off, target, lanes_only, valid, cfg).total.item());
    MpmConfig everything = cfg;
    everything.scope = LossScope::all_valid;
    CHECK(mpm_loss(off, moved, lanes_only, valid, everything).total.item() >
          mpm_loss(off, target, lanes_only, valid, everything).total.item());

    // Doubling one weight doubles its contribution.
    const Reconstruction noisy{Var(jm::testing::random_tensor(4, 3, rng)), Var(jm::testing::random_tensor(5, 2, rng)),
                               Var(jm::testing::random_tensor(2, 2, rng))};
    MpmConfig heavy = cfg;
    heavy.lambda[0] = 2.0;
    const MpmLosses base = mpm_loss(noisy, target, spec, valid, cfg);
    const MpmLosses twice = mpm_loss(noisy, target, spec, valid, heavy);
    CHECK(twice.total.item() - base.total.item() == doctest::Approx(base.per_modality[0].item()).epsilon(1e-12));

    CHECK_THROWS_AS(mpm_loss({Var(Tensor(3, 3)), exact[1], exact[2]}, target, spec, valid, cfg), std::invalid_argument);
}

TEST_CASE("two-token loss matches a scalar loop") {
    // Agent token 0 masked, light token 1 masked, everything else visible.
    const Tensor ta(2, 2, std::vector<double>{0.0, 1.0, 2.0, 3.0});
    const Tensor ra(2, 2, std::vector<double>{0.3, -0.5, 9.0, 9.0});
    const Tensor tt(2, 1, std::vector<double>{1.0, -1.0});
    const Tensor rt(2, 1, std::vector<double>{5.0, 1.5});
    MaskSpec spec;
    spec.masked = {std::vector<uint8_t>{1, 0}, std::vector<uint8_t>{}, std::vector<uint8_t>{0, 1}};
    MpmConfig cfg;
    cfg.lambda = {1.0, 1.0, 0.5};
    const auto valid = all_valid(2, 0, 2);
    const MpmLosses l =
        mpm_loss({Var(ra), Var(Tensor(0, 1)), Var(rt)}, {ta, Tensor(0, 1), tt}, spec, valid, cfg);

    auto h = [](double r) { return std::abs(r) <= 1.0 ? 0.5 * r * r : std::abs(r) - 0.5; };
    const double la = (h(0.3 - 0.0) + h(-0.5 - 1.0)) / 2.0;
    const double lt = h(1.5 + 1.0);
    CHECK(std::abs(l.per_modality[0].item() - la) < 1e-12);
    CHECK(l.per_modality[1].item() == 0.0);
    CHECK(std::abs(l.per_modality[2].item() - lt) < 1e-12);
    CHECK(std::abs(l.total.item() - (la + 0.5 * lt)) < 1e-12);
}

TEST_CASE("reconstruction loss gradient matches finite differences") {
    Rng rng(5);
    const ReconstructionTarget target{jm::testing::random_tensor(3, 2, rng, 2.0), Tensor(0, 2),
                                      jm::testing::random_tensor(2, 2, rng, 2.0)};
    const auto valid = all_valid(3, 0, 2);
    MaskSpec spec;
    spec.masked = {std::vector<uint8_t>{1, 1, 0}, std::vector<uint8_t>{}, std::vector<uint8_t>{1, 0}};
    auto f = [&](const std::vector<Var>& in) {
        return mpm_loss({in[0], ops::constant(Tensor(0, 2)), in[1]}, target, spec, valid, MpmConfig{}).total;
    };
    CHECK(jm::testing::gradient_error(f, {jm::testing::random_tensor(3, 2, rng, 2.0),
                                          jm::testing::random_tensor(2, 2, rng, 2.0)}) < 1e-6);
}
