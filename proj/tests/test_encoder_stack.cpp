#include "jointmotion/encoder.hpp"
#include "jointmotion/errors.hpp"
#include "jointmotion/synthetic.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <numeric>

using namespace jm;

namespace {

TransformerConfig small(int depth = 2, int window = 4) { return {depth, 2, window, 16, 32}; }

TokenSequence random_sequence(int n, int width, Rng& rng) {
    TokenSequence s;
    s.tokens = Var(jm::testing::random_tensor(n, width, rng));
    s.modality.assign(n, Modality::agent);
    s.valid.assign(n, 1);
    for (int i = 0; i < n; ++i) {
        s.polyline_id.push_back(i / 5);
        s.within_index.push_back(i % 5);
        s.positions_1d.push_back(i);
    }
    return s;
}

} // namespace

TEST_CASE("feature widths and layout") {
    const DatasetDialect w = dialect_w(), a = dialect_a();
    CHECK(agent_feature_width(w) == 10 + 11 + 3);
    CHECK(lane_feature_width(w) == 2 + 4);
    CHECK(light_feature_width(w) == 2 + 11 + 3);
    CHECK(agent_feature_width(a) == 10 + 8 + 3);

    const TrafficScene s = generate_synthetic_scene(7, w, {4, 6, 2});
    const RawFeatures f = agent_features(s);
    CHECK(f.rows.rows() == 44);
    CHECK(f.rows.cols() == 24);
    const AgentStep& st = s.agents[1].steps[3];
    const int r = 1 * 11 + 3;
    CHECK(f.rows(r, 0) == st.position.x);
    CHECK(f.rows(r, 1) == st.position.y);
    CHECK(f.rows(r, 2) == st.dims[0]);
    CHECK(f.rows(r, 5) == st.accel.x);
    CHECK(f.rows(r, 7) == st.vel.x);
    CHECK(f.rows(r, 9) == st.yaw);
    CHECK(f.rows(r, 10 + 3) == 1.0);
    CHECK(f.polyline_id[r] == 1);
    CHECK(f.within_index[r] == 3);
    CHECK(lane_features(s).rows.rows() == 6 * 8);
    CHECK(light_features(s).rows.rows() == 2 * 11);
}

TEST_CASE("polyline embedding token counts and determinism") {
    ParameterStore store;
    Rng rng(1);
    PolylineEmbedding emb(store, dialect_w(), 16, rng);
    TrafficScene s = generate_synthetic_scene(7, dialect_w(), {4, 6, 2});
    const auto all = emb.embed_all(s);
    CHECK(all[0].size() == 44);
    CHECK(all[1].size() == 48);
    CHECK(all[2].size() == 22);
    // Canonical contiguous positions: agents, then lanes, then lights.
    CHECK(all[0].positions_1d.front() == 0);
    CHECK(all[1].positions_1d.front() == 44);
    CHECK(all[2].positions_1d.front() == 92);

    s.agents[1] = s.agents[0];
    s.agents[1].agent_id = 1;
    const TokenSequence agents = emb.embed_agents(s);
    for (int t = 0; t < 11; ++t)
        for (int c = 0; c < 16; ++c) CHECK(agents.tokens.value()(t, c) == agents.tokens.value()(11 + t, c));
    CHECK(emb.embed_agents(s).tokens.value() == agents.tokens.value());

    ParameterStore astore;
    PolylineEmbedding aemb(astore, dialect_a(), 16, rng);
    const TrafficScene as = generate_synthetic_scene(7, dialect_a(), {4, 6, 2});
    CHECK(aemb.embed_lights(as).size() == 0);
    CHECK(aemb.embed_agents(as).size() == 32);

    TrafficScene broken = s;
    broken.agents[0].steps[0].dims[0] = -1.0;
    CHECK_THROWS_AS(emb.embed_all(broken), DataError);
}

TEST_CASE("local transformer basics") {
    NoGradGuard guard;
    ParameterStore store;
    Rng rng(2);
    LocalTransformer enc(store, "t", small(), rng);
    TokenSequence s = random_sequence(20, 16, rng);
    CHECK(enc.encode(s).tokens.value() == enc.encode(s).tokens.value());

    TokenSequence dead = s;
    dead.valid.assign(20, 0);
    const Tensor zeros = enc.encode(dead).tokens.value();
    for (double v : zeros.flat()) CHECK(v == 0.0);

    TokenSequence moved = s;
    for (int& p : moved.positions_1d) p += 1000;
    CHECK(max_abs_diff(enc.encode(s).tokens.value(), enc.encode(moved).tokens.value()) < 1e-5);

    ParameterStore empty_store;
    LocalTransformer identity(empty_store, "z", small(0), rng);
    CHECK(identity.encode(s).tokens.value() == s.tokens.value());
    CHECK(empty_store.all().empty());
}

TEST_CASE("a masked token outside every window has no influence") {
    NoGradGuard guard;
    ParameterStore store;
    Rng rng(3);
    LocalTransformer enc(store, "t", small(2, 3), rng);
    const int n = 16, j = 9;
    TokenSequence s = random_sequence(n, 16, rng);
    // The dense mask hides j from everyone; j still attends its neighbours.
    std::vector<uint8_t> mask(n * n, 1);
    for (int i = 0; i < n; ++i)
        if (i != j) mask[i * n + j] = 0;
    TokenSequence poked = s;
    Tensor t = s.tokens.value();
    for (int c = 0; c < 16; ++c) t(j, c) += rng.uniform(-2.0, 2.0);
    poked.tokens = Var(t);
    const Tensor a = enc.encode(s, &mask).tokens.value(), b = enc.encode(poked, &mask).tokens.value();
    for (int i = 0; i < n; ++i)
        if (i != j)
            for (int c = 0; c < 16; ++c) CHECK(std::abs(a(i, c) - b(i, c)) < 1e-6);

    const auto m = local_attention_mask(s, 3, nullptr);
    CHECK(m[0 * n + 3] == 1);
    CHECK(m[0 * n + 4] == 0);
    CHECK(m[5 * n + 2] == 1);
}

TEST_CASE("late fusion keeps modalities isolated") {
    NoGradGuard guard;
    ParameterStore store;
    Rng rng(4);
    LateFusionEncoder enc(store, {small(), 1, 2, 1}, rng);
    PolylineEmbedding emb(store, dialect_w(), 16, rng);
    TrafficScene s = generate_synthetic_scene(9, dialect_w(), {3, 4, 2});
    auto tokens = emb.embed_all(s);
    const LateFusionEmbeddings h = enc.encode(tokens);
    CHECK(h.agents.size() == 33);
    CHECK(h.lanes.size() == 32);
    CHECK(h.lights.size() == 22);

    Tensor lanes = tokens[1].tokens.value();
    lanes(5, 3) += 1.0;
    tokens[1].tokens = Var(lanes);
    const LateFusionEmbeddings h2 = enc.encode(tokens);
    CHECK(h2.agents.tokens.value() == h.agents.tokens.value());
    CHECK_FALSE(h2.lanes.tokens.value() == h.lanes.tokens.value());
    CHECK(store.contains("enc.agent.block0.attn.q.weight"));
    CHECK(store.contains("enc.lane.block1.attn.q.weight"));
    CHECK_FALSE(store.contains("enc.lane.block2.attn.q.weight"));
}

TEST_CASE("early fusion latent shape and order independence") {
    NoGradGuard guard;
    ParameterStore store;
    Rng rng(5);
    EarlyFusionEncoder enc(store, {small(1, 32), 128, 1}, rng);
    for (int n : {10, 1000}) {
        const EarlyFusionLatent l = enc.encode(random_sequence(n, 16, rng));
        CHECK(l.latent.rows() == 128);
        CHECK(l.latent.cols() == 16);
        CHECK(l.input_count == n);
    }

    TokenSequence s = random_sequence(40, 16, rng);
    s.valid[7] = 0;
    std::vector<int> order(40);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    TokenSequence p = s;
    p.tokens = ops::gather_rows(s.tokens, order);
    for (int i = 0; i < 40; ++i) {
        p.valid[i] = s.valid[order[i]];
        p.positions_1d[i] = s.positions_1d[order[i]];
        p.polyline_id[i] = s.polyline_id[order[i]];
        p.within_index[i] = s.within_index[order[i]];
    }
    CHECK(max_abs_diff(enc.encode(s).latent.value(), enc.encode(p).latent.value()) < 1e-5);

    TokenSequence dead = s;
    dead.valid.assign(40, 0);
    CHECK_THROWS_AS(enc.encode(dead), DataError);
    std::vector<uint8_t> exclude_all(40, 1);
    CHECK_THROWS_AS(enc.encode(s, &exclude_all), DataError);
}

TEST_CASE("sinusoid encoding") {
    const Tensor e = sinusoid_encoding({0, 3}, 4);
    CHECK(e(0, 0) == 0.0);
    CHECK(e(0, 1) == 1.0);
    CHECK(e(1, 0) == doctest::Approx(std::sin(3.0)));
    CHECK(e(1, 1) == doctest::Approx(std::cos(3.0)));
}

TEST_CASE("token sequences concatenate with aligned bookkeeping") {
    Rng rng(6);
    TokenSequence a = random_sequence(3, 4, rng), b = random_sequence(2, 4, rng);
    b.modality.assign(2, Modality::lane);
    b.valid[1] = 0;
    const TokenSequence c = concat_sequences({&a, &b}, 4);
    CHECK(c.size() == 5);
    CHECK(c.valid_count() == 4);
    CHECK(c.modality[3] == Modality::lane);
    CHECK(c.tokens.value()(4, 2) == b.tokens.value()(1, 2));
    const TokenSequence e = concat_sequences({}, 4);
    CHECK(e.size() == 0);
}
