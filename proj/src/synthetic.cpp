#include "jointmotion/synthetic.hpp"

#include "jointmotion/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace jm {

namespace {

struct LaneGeometry {
    Vec2 start;
    double heading = 0.0;
    double curvature = 0.0;
    double length = 0.0;

    Vec2 point(double s) const {
        if (curvature == 0.0) return {start.x + s * std::cos(heading), start.y + s * std::sin(heading)};
        const double r = 1.0 / curvature;
        const double h = heading + curvature * s;
        return {start.x + r * (std::sin(h) - std::sin(heading)), start.y + r * (std::cos(heading) - std::cos(h))};
    }
    double heading_at(double s) const { return heading + curvature * s; }
};

constexpr int kGreenSteps = 40;
constexpr int kYellowSteps = 8;
constexpr int kRedSteps = 32;
constexpr int kLightPeriod = kGreenSteps + kYellowSteps + kRedSteps;

LightState light_state(int phase) {
    phase %= kLightPeriod;
    if (phase < kGreenSteps) return LightState::green;
    if (phase < kGreenSteps + kYellowSteps) return LightState::yellow;
    return LightState::red;
}

void check_arguments(const DatasetDialect& dialect, SceneCounts counts, const GeneratorOptions& options) {
    if (counts.agents < 1 || counts.lanes < 1 || counts.lights < 0)
        throw std::invalid_argument("generate_synthetic_scene: counts must be at least (1, 1, 0)");
    if (options.lane_points < 2) throw std::invalid_argument("generate_synthetic_scene: lane_points must be >= 2");
    if (!(options.dt > 0.0)) throw std::invalid_argument("generate_synthetic_scene: dt must be positive");
    if (dialect.t_past < 2 || dialect.t_future < 1 || dialect.lane_class_count < 1)
        throw std::invalid_argument("generate_synthetic_scene: invalid dialect " + dialect.name);
}

} // namespace

TrafficScene generate_synthetic_scene(uint64_t seed, const DatasetDialect& dialect, SceneCounts counts,
                                      const GeneratorOptions& options) {
    check_arguments(dialect, counts, options);

    Rng rng(derive_seed(seed, 0x5ce7e));
    TrafficScene scene;
    scene.dialect = dialect;
    scene.dt = options.dt;
    scene.scene_id = dialect.name + "-" + std::to_string(seed);

    std::vector<LaneGeometry> geometry;
    for (int l = 0; l < counts.lanes; ++l) {
        LaneGeometry g;
        g.start = {rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0)};
        g.heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
        if (rng.uniform() < 0.5) {
            const double magnitude = rng.uniform(0.01, 0.04);
            g.curvature = rng.uniform() < 0.5 ? -magnitude : magnitude;
        }
        g.length = rng.uniform(30.0, 50.0);
        geometry.push_back(g);

        LanePolyline lane;
        lane.lane_id = l;
        for (int p = 0; p < options.lane_points; ++p)
            lane.points.push_back(g.point(g.length * p / (options.lane_points - 1)));
        lane.class_onehot = onehot(static_cast<int>(rng.below(dialect.lane_class_count)), dialect.lane_class_count);
        scene.lanes.push_back(std::move(lane));
    }

    const int total_steps = dialect.t_past + dialect.t_future;
    const double dt = options.dt;
    for (int a = 0; a < counts.agents; ++a) {
        const LaneGeometry& lane = geometry[a % counts.lanes];
        const double u = rng.uniform();
        const AgentClass cls = u < 0.7 ? AgentClass::vehicle : (u < 0.85 ? AgentClass::cyclist : AgentClass::pedestrian);

        std::array<double, 3> dims{};
        double v0 = 0.0;
        switch (cls) {
        case AgentClass::vehicle:
            dims = {rng.uniform(4.0, 5.0), rng.uniform(1.7, 2.0), rng.uniform(1.4, 1.8)};
            v0 = rng.uniform(4.0, 12.0);
            break;
        case AgentClass::cyclist:
            dims = {rng.uniform(1.6, 1.9), rng.uniform(0.5, 0.7), rng.uniform(1.6, 1.8)};
            v0 = rng.uniform(2.0, 6.0);
            break;
        case AgentClass::pedestrian:
            dims = {rng.uniform(0.4, 0.7), rng.uniform(0.4, 0.7), rng.uniform(1.5, 1.9)};
            v0 = rng.uniform(0.8, 2.0);
            break;
        }
        const double trend = rng.uniform(-0.05, 0.05) * v0;   // m/s^2
        const double sway = rng.uniform(0.0, 0.1) * v0;       // m/s amplitude
        const double omega = rng.uniform(0.3, 1.0);           // rad/s
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double lateral = rng.uniform(-0.5, 0.5);

        // Speed and heading sampled on the lane; the track itself is the
        // Euler integral of the resulting velocity sequence.
        std::vector<Vec2> vel(total_steps + 1);
        double s = rng.uniform(0.0, 0.3 * lane.length);
        const Vec2 on_lane = lane.point(s);
        const double h0 = lane.heading_at(s);
        Vec2 pos{on_lane.x - std::sin(h0) * lateral, on_lane.y + std::cos(h0) * lateral};
        std::vector<Vec2> positions(total_steps + 1);
        for (int t = 0; t <= total_steps; ++t) {
            const double tau = t * dt;
            const double speed = std::max(0.5, v0 + trend * tau + sway * std::sin(omega * tau + phase));
            const double h = lane.heading_at(s);
            vel[t] = {speed * std::cos(h), speed * std::sin(h)};
            positions[t] = pos;
            pos = {pos.x + vel[t].x * dt, pos.y + vel[t].y * dt};
            s += speed * dt;
        }

        AgentTrack track;
        track.agent_id = a;
        track.class_onehot[static_cast<int>(cls)] = 1.0;
        for (int t = 0; t < dialect.t_past; ++t) {
            AgentStep st;
            st.position = positions[t];
            st.dims = dims;
            st.vel = vel[t];
            st.accel = {(vel[t + 1].x - vel[t].x) / dt, (vel[t + 1].y - vel[t].y) / dt};
            st.yaw = wrap_angle(std::atan2(vel[t].y, vel[t].x));
            st.step_onehot = onehot(t, dialect.t_past);
            st.valid = true;
            track.steps.push_back(std::move(st));
        }
        FutureTrack future;
        for (int t = dialect.t_past; t < total_steps; ++t) {
            future.positions.push_back(positions[t]);
            future.valid.push_back(1);
        }
        scene.agents.push_back(std::move(track));
        scene.futures.push_back(std::move(future));
    }

    if (dialect.has_traffic_lights) {
        for (int k = 0; k < counts.lights; ++k) {
            const LaneGeometry& lane = geometry[k % counts.lanes];
            TrafficLightSequence light;
            light.light_id = k;
            light.position = lane.point(lane.length);
            const int offset = static_cast<int>(rng.below(kLightPeriod));
            for (int t = 0; t < dialect.t_past; ++t) {
                LightStep st;
                st.state_onehot[static_cast<int>(light_state(offset + t))] = 1.0;
                st.step_onehot = onehot(t, dialect.t_past);
                light.steps.push_back(std::move(st));
            }
            scene.lights.push_back(std::move(light));
        }
    }
    return scene;
}

std::vector<TrafficScene> generate_corpus(uint64_t first_seed, int count, const DatasetDialect& dialect,
                                          SceneCounts counts, const GeneratorOptions& options) {
    check_arguments(dialect, counts, options);
    std::vector<TrafficScene> scenes(static_cast<size_t>(std::max(count, 0)));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) scenes[i] = generate_synthetic_scene(first_seed + i, dialect, counts, options);
    return scenes;
}

} // namespace jm
