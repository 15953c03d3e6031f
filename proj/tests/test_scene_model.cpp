#include "jointmotion/errors.hpp"
#include "jointmotion/rng.hpp"
#include "jointmotion/scene_io.hpp"
#include "jointmotion/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include <unistd.h>

using namespace jm;
namespace fs = std::filesystem;

namespace {

TrafficScene sample_scene(uint64_t seed = 7) { return generate_synthetic_scene(seed, dialect_w(), {4, 6, 2}); }

bool mentions(const std::vector<std::string>& v, const std::string& what) {
    for (const auto& s : v)
        if (s.find(what) != std::string::npos) return true;
    return false;
}

TrafficScene point_agents(const std::vector<Vec2>& lasts, double yaw = 0.0) {
    TrafficScene s = sample_scene();
    s.agents.resize(lasts.size());
    s.futures.resize(lasts.size());
    for (size_t a = 0; a < lasts.size(); ++a) {
        auto& steps = s.agents[a].steps;
        for (auto& st : steps) st.valid = false;
        steps.back().valid = true;
        steps.back().position = lasts[a];
        steps.back().yaw = yaw;
    }
    return s;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("jm_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("generator is deterministic and its output validates") {
    const TrafficScene a = sample_scene(), b = sample_scene();
    CHECK(a == b);
    CHECK(serialize_scene(a) == serialize_scene(b));
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const TrafficScene s = generate_synthetic_scene(seed, seed % 2 ? dialect_a() : dialect_w(), {5, 4, 3});
        CHECK(validate_scene(s).empty());
        CHECK(kinematic_violations(s).empty());
    }
    CHECK_FALSE(sample_scene(7) == sample_scene(8));
}

TEST_CASE("generated shapes follow the dialect") {
    const TrafficScene w = sample_scene();
    CHECK(w.agents.size() == 4);
    CHECK(w.lanes.size() == 6);
    CHECK(w.lights.size() == 2);
    CHECK(w.agents[0].steps.size() == 11);
    CHECK(w.futures[0].positions.size() == 16);
    const TrafficScene a = generate_synthetic_scene(7, dialect_a(), {4, 6, 2});
    CHECK(a.lights.empty());
    CHECK(a.agents[0].steps.size() == 8);
    CHECK(a.futures[0].positions.size() == 12);
    CHECK_THROWS_AS(generate_synthetic_scene(1, dialect_w(), {0, 1, 0}), std::invalid_argument);
}

TEST_CASE("agent displacement equals the integral of its velocities") {
    const TrafficScene s = sample_scene(3);
    for (const auto& agent : s.agents) {
        double x = agent.steps[0].position.x, y = agent.steps[0].position.y;
        for (size_t t = 0; t + 1 < agent.steps.size(); ++t) {
            x += agent.steps[t].vel.x * s.dt;
            y += agent.steps[t].vel.y * s.dt;
        }
        CHECK(std::abs(x - agent.steps.back().position.x) < 1e-6);
        CHECK(std::abs(y - agent.steps.back().position.y) < 1e-6);
    }
}

TEST_CASE("validate_scene names each broken invariant") {
    TrafficScene s = sample_scene();
    s.agents[1].steps[4].dims = {0.0, 1.0, 1.0};
    auto v = validate_scene(s);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("agents[1].steps[4].dims") != std::string::npos);

    s = sample_scene();
    s.agents[0].steps[2].step_onehot = onehot(3, 11);
    v = validate_scene(s);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("temporal order") != std::string::npos);
    CHECK(v[0].find("agents[0].steps[2]") != std::string::npos);

    s = sample_scene();
    s.agents[2].class_onehot = {1.0, 1.0, 0.0};
    CHECK(mentions(validate_scene(s), "agents[2].class_onehot"));

    s = generate_synthetic_scene(7, dialect_a(), {2, 2, 0});
    s.lights = sample_scene().lights;
    CHECK(mentions(validate_scene(s), "no traffic lights"));
}

TEST_CASE("kinematic checks catch inconsistent tracks") {
    TrafficScene s = sample_scene();
    s.agents[0].steps[5].position.x += 0.1;
    CHECK_FALSE(kinematic_violations(s).empty());
}

TEST_CASE("scene-centric transform") {
    const TrafficScene one = to_scene_centric(point_agents({{10.0, 4.0}}));
    CHECK(one.agents[0].steps.back().position == Vec2{0.0, 0.0});

    const TrafficScene two = to_scene_centric(point_agents({{0.0, 0.0}, {2.0, 0.0}}));
    CHECK(two.agents[0].steps.back().position == Vec2{-1.0, 0.0});
    CHECK(two.agents[1].steps.back().position == Vec2{1.0, 0.0});

    const TrafficScene s = sample_scene(11);
    const TrafficScene c = to_scene_centric(s);
    const Vec2 centroid = last_position_centroid(c);
    CHECK(std::abs(centroid.x) < 1e-12);
    CHECK(std::abs(centroid.y) < 1e-12);
    std::vector<Vec2> before, after;
    for (size_t a = 0; a < s.agents.size(); ++a)
        for (size_t t = 0; t < s.agents[a].steps.size(); ++t) {
            before.push_back(s.agents[a].steps[t].position);
            after.push_back(c.agents[a].steps[t].position);
        }
    for (const auto& l : s.lanes) before.insert(before.end(), l.points.begin(), l.points.end());
    for (const auto& l : c.lanes) after.insert(after.end(), l.points.begin(), l.points.end());
    double worst = 0.0;
    for (size_t i = 0; i < before.size(); ++i)
        for (size_t j = 0; j < before.size(); ++j) {
            const double d0 = std::hypot(before[i].x - before[j].x, before[i].y - before[j].y);
            const double d1 = std::hypot(after[i].x - after[j].x, after[i].y - after[j].y);
            worst = std::max(worst, std::abs(d0 - d1));
        }
    CHECK(worst < 1e-9);
    CHECK(c.agents[0].steps[0].vel == s.agents[0].steps[0].vel);
}

TEST_CASE("agent-centric views") {
    TrafficScene s = point_agents({{3.0, 4.0}, {3.0, 5.0}}, std::numbers::pi / 2);
    const auto views = to_agent_centric_views(s, {s.agents[0].agent_id});
    REQUIRE(views.size() == 1);
    const auto& last = views[0].scene.agents[0].steps.back();
    CHECK(std::abs(last.position.x) < 1e-12);
    CHECK(std::abs(last.position.y) < 1e-12);
    CHECK(std::abs(last.yaw) < 1e-12);
    // Agent 1 is one meter ahead (along +y, the focal heading).
    const auto& ahead = views[0].scene.agents[1].steps.back().position;
    CHECK(ahead.x == doctest::Approx(1.0));
    CHECK(std::abs(ahead.y) < 1e-12);

    Rng rng(4);
    const Pose2 pose = views[0].pose;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec2 p{rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0)};
        const Vec2 back = pose.apply(pose.apply_inverse(p));
        worst = std::max({worst, std::abs(back.x - p.x), std::abs(back.y - p.y)});
    }
    CHECK(worst < 1e-6);
    CHECK_THROWS_AS(to_agent_centric_views(s, {999}), DataError);
}

TEST_CASE("angles and one-hot helpers") {
    CHECK(wrap_angle(3 * std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(0.25) == 0.25);
    CHECK(onehot(2, 4) == std::vector<double>{0, 0, 1, 0});
    CHECK(onehot_index({0, 1, 0}) == 1);
    CHECK(onehot_index({0, 1, 1}) == -1);
    CHECK(onehot_index({0, 0.5, 0}) == -1);
}

TEST_CASE("scene text round trip") {
    for (uint64_t seed : {1, 2, 3}) {
        for (const auto& d : {dialect_w(), dialect_a()}) {
            TrafficScene s = generate_synthetic_scene(seed, d, {3, 4, 2});
            s.agents[0].steps[1].valid = false;
            s.futures[1].valid[3] = 0;
            const std::string text = serialize_scene(s);
            const TrafficScene back = deserialize_scene(text);
            CHECK(back == s);
            CHECK(serialize_scene(back) == text);
        }
    }
}

TEST_CASE("scene decoding errors carry their kind") {
    const std::string text = serialize_scene(sample_scene());
    auto kind_of = [](const std::string& t) {
        try {
            deserialize_scene(t);
        } catch (const FormatError& e) {
            return static_cast<int>(e.kind());
        }
        return -1;
    };
    CHECK(kind_of(text.substr(0, text.size() / 2)) == static_cast<int>(FormatErrorKind::malformed_field));
    std::string v999 = text;
    v999.replace(v999.find("v1"), 2, "v999");
    CHECK(kind_of(v999) == static_cast<int>(FormatErrorKind::version_mismatch));
    std::string shape = text;
    shape.replace(shape.find("t_past=11"), 9, "t_past=12");
    CHECK(kind_of(shape) == static_cast<int>(FormatErrorKind::shape_mismatch));
    std::string junk = text;
    junk.replace(junk.find("yaw [11] ") + 9, 1, "x");
    CHECK(kind_of(junk) == static_cast<int>(FormatErrorKind::malformed_field));
}

TEST_CASE("corpus directory round trip and overwrite guard") {
    const fs::path dir = temp_dir("corpus");
    const auto scenes = generate_corpus(40, 5, dialect_a(), {2, 3, 2});
    write_corpus(dir, scenes, {40, 41, 42, 43, 44}, false);
    CHECK(fs::exists(dir / "manifest.txt"));
    CorpusManifest m;
    const auto back = read_corpus(dir, &m);
    CHECK(back == scenes);
    CHECK(m.entries.size() == 5);
    CHECK(m.entries[2].seed == 42);
    CHECK(m.dialect == dialect_a());
    CHECK(m.lights == 0);
    for (const auto& s : back) CHECK(s.lights.empty());
    CHECK_THROWS_AS(write_corpus(dir, scenes, {40, 41, 42, 43, 44}, false), DataError);
    CHECK_NOTHROW(write_corpus(dir, scenes, {40, 41, 42, 43, 44}, true));
    fs::remove_all(dir);
    CHECK_THROWS_AS(read_corpus(dir), DataError);
}

TEST_CASE("parallel corpus generation equals sequential generation") {
    const auto scenes = generate_corpus(100, 8, dialect_w(), {3, 3, 1});
    for (int i = 0; i < 8; ++i) CHECK(scenes[i] == generate_synthetic_scene(100 + i, dialect_w(), {3, 3, 1}));
}
