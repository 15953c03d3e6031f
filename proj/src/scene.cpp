#include "jointmotion/scene.hpp"

#include "jointmotion/errors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace jm {

DatasetDialect dialect_w() { return {"dialect-W", 11, 16, true, 4}; }
DatasetDialect dialect_a() { return {"dialect-A", 8, 12, false, 4}; }

DatasetDialect dialect_by_name(const std::string& name) {
    if (name == "W" || name == "dialect-W") return dialect_w();
    if (name == "A" || name == "dialect-A") return dialect_a();
    throw std::invalid_argument("unknown dataset dialect '" + name + "'");
}

int AgentTrack::last_valid_step() const {
    for (int t = static_cast<int>(steps.size()) - 1; t >= 0; --t)
        if (steps[t].valid) return t;
    return -1;
}

int FutureTrack::last_valid_step() const {
    for (int t = static_cast<int>(valid.size()) - 1; t >= 0; --t)
        if (valid[t]) return t;
    return -1;
}

Vec2 Pose2::rotate(Vec2 v) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

Vec2 Pose2::rotate_inverse(Vec2 v) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {c * v.x + s * v.y, -s * v.x + c * v.y};
}

Vec2 Pose2::apply(Vec2 p) const {
    const Vec2 r = rotate(p);
    return {r.x + translation.x, r.y + translation.y};
}

Vec2 Pose2::apply_inverse(Vec2 p) const { return rotate_inverse({p.x - translation.x, p.y - translation.y}); }

double wrap_angle(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    if (a <= -std::numbers::pi) a += two_pi;
    if (a > std::numbers::pi) a -= two_pi;
    return a;
}

std::vector<double> onehot(int index, int size) {
    std::vector<double> v(size, 0.0);
    if (index >= 0 && index < size) v[index] = 1.0;
    return v;
}

int onehot_index(const std::vector<double>& v) {
    int found = -1;
    for (size_t i = 0; i < v.size(); ++i) {
        if (v[i] == 1.0) {
            if (found >= 0) return -1;
            found = static_cast<int>(i);
        } else if (v[i] != 0.0) {
            return -1;
        }
    }
    return found;
}

namespace {

template <size_t N>
int onehot_index(const std::array<double, N>& a) {
    return jm::onehot_index(std::vector<double>(a.begin(), a.end()));
}

std::string at(const std::string& field, size_t i) { return field + "[" + std::to_string(i) + "]"; }

} // namespace

std::vector<std::string> validate_scene(const TrafficScene& scene) {
    std::vector<std::string> out;
    const auto& d = scene.dialect;
    if (d.t_past < 2) out.push_back("dialect.t_past: must be >= 2");
    if (d.t_future < 1) out.push_back("dialect.t_future: must be >= 1");
    if (!(scene.dt > 0.0)) out.push_back("dt: must be positive");
    if (scene.agents.empty()) out.push_back("agents: scene needs at least one agent");
    if (!d.has_traffic_lights && !scene.lights.empty())
        out.push_back("lights: dialect " + d.name + " has no traffic lights but " + std::to_string(scene.lights.size()) +
                      " are present");

    for (size_t a = 0; a < scene.agents.size(); ++a) {
        const auto& agent = scene.agents[a];
        const std::string base = at("agents", a);
        if (onehot_index(agent.class_onehot) < 0) out.push_back(base + ".class_onehot: not one-hot");
        if (static_cast<int>(agent.steps.size()) != d.t_past)
            out.push_back(base + ".steps: expected " + std::to_string(d.t_past) + " steps, got " +
                          std::to_string(agent.steps.size()));
        for (size_t t = 0; t < agent.steps.size(); ++t) {
            const auto& s = agent.steps[t];
            const std::string sb = base + at(".steps", t);
            const int idx = onehot_index(s.step_onehot);
            if (static_cast<int>(s.step_onehot.size()) != d.t_past || idx < 0)
                out.push_back(sb + ".step_onehot: not a one-hot vector of width " + std::to_string(d.t_past));
            else if (idx != static_cast<int>(t))
                out.push_back(sb + ".step_onehot: temporal order index " + std::to_string(idx) + " at step " +
                              std::to_string(t));
            if (s.valid && !(s.dims[0] > 0.0 && s.dims[1] > 0.0 && s.dims[2] > 0.0))
                out.push_back(sb + ".dims: must be strictly positive on valid steps");
            if (s.valid && !(s.yaw > -std::numbers::pi && s.yaw <= std::numbers::pi))
                out.push_back(sb + ".yaw: outside (-pi, pi]");
        }
    }

    for (size_t l = 0; l < scene.lanes.size(); ++l) {
        const auto& lane = scene.lanes[l];
        const std::string base = at("lanes", l);
        if (lane.points.size() < 2) out.push_back(base + ".points: needs at least 2 points");
        for (size_t p = 1; p < lane.points.size(); ++p) {
            const double dx = lane.points[p].x - lane.points[p - 1].x;
            const double dy = lane.points[p].y - lane.points[p - 1].y;
            if (std::hypot(dx, dy) <= 1e-6) out.push_back(base + at(".points", p) + ": coincides with previous point");
        }
        if (static_cast<int>(lane.class_onehot.size()) != d.lane_class_count || onehot_index(lane.class_onehot) < 0)
            out.push_back(base + ".class_onehot: not a one-hot vector of width " + std::to_string(d.lane_class_count));
    }

    for (size_t k = 0; k < scene.lights.size(); ++k) {
        const auto& light = scene.lights[k];
        const std::string base = at("lights", k);
        if (static_cast<int>(light.steps.size()) != d.t_past)
            out.push_back(base + ".steps: expected " + std::to_string(d.t_past) + " steps");
        for (size_t t = 0; t < light.steps.size(); ++t) {
            const auto& s = light.steps[t];
            const std::string sb = base + at(".steps", t);
            if (onehot_index(s.state_onehot) < 0) out.push_back(sb + ".state_onehot: not one-hot");
            const int idx = onehot_index(s.step_onehot);
            if (static_cast<int>(s.step_onehot.size()) != d.t_past || idx < 0)
                out.push_back(sb + ".step_onehot: not a one-hot vector of width " + std::to_string(d.t_past));
            else if (idx != static_cast<int>(t))
                out.push_back(sb + ".step_onehot: temporal order index " + std::to_string(idx) + " at step " +
                              std::to_string(t));
        }
    }

    if (scene.futures.size() != scene.agents.size())
        out.push_back("futures: expected one track per agent (" + std::to_string(scene.agents.size()) + "), got " +
                      std::to_string(scene.futures.size()));
    for (size_t a = 0; a < scene.futures.size(); ++a) {
        const auto& f = scene.futures[a];
        if (static_cast<int>(f.positions.size()) != d.t_future || f.valid.size() != f.positions.size())
            out.push_back(at("futures", a) + ": expected " + std::to_string(d.t_future) + " positions and flags");
    }
    return out;
}

std::vector<std::string> kinematic_violations(const TrafficScene& scene, double tol) {
    std::vector<std::string> out;
    for (size_t a = 0; a < scene.agents.size(); ++a) {
        const auto& steps = scene.agents[a].steps;
        for (size_t t = 0; t + 1 < steps.size(); ++t) {
            if (!steps[t].valid || !steps[t + 1].valid) continue;
            const auto& s = steps[t];
            const auto& n = steps[t + 1];
            const double px = n.position.x - s.position.x - s.vel.x * scene.dt;
            const double py = n.position.y - s.position.y - s.vel.y * scene.dt;
            if (std::abs(px) > tol || std::abs(py) > tol)
                out.push_back(at("agents", a) + at(".steps", t) + ".position: increment disagrees with vel*dt");
            const double vx = n.vel.x - s.vel.x - s.accel.x * scene.dt;
            const double vy = n.vel.y - s.vel.y - s.accel.y * scene.dt;
            if (std::abs(vx) > tol || std::abs(vy) > tol)
                out.push_back(at("agents", a) + at(".steps", t) + ".vel: increment disagrees with accel*dt");
        }
        for (size_t t = 0; t < steps.size(); ++t) {
            const auto& s = steps[t];
            if (!s.valid || std::hypot(s.vel.x, s.vel.y) <= 0.1) continue;
            if (std::abs(wrap_angle(s.yaw - std::atan2(s.vel.y, s.vel.x))) > tol)
                out.push_back(at("agents", a) + at(".steps", t) + ".yaw: not aligned with velocity");
        }
    }
    return out;
}

Vec2 last_position_centroid(const TrafficScene& scene) {
    double sx = 0.0, sy = 0.0;
    int n = 0;
    for (const auto& agent : scene.agents) {
        const int t = agent.last_valid_step();
        if (t < 0) continue;
        sx += agent.steps[t].position.x;
        sy += agent.steps[t].position.y;
        ++n;
    }
    if (n == 0) throw DataError("scene " + scene.scene_id + " has no valid agent steps");
    return {sx / n, sy / n};
}

namespace {

// Applies `point` to every position and `vector` to every direction quantity.
template <typename PointFn, typename VecFn>
TrafficScene map_scene(const TrafficScene& scene, PointFn point, VecFn vector, double yaw_offset) {
    TrafficScene out = scene;
    for (auto& agent : out.agents)
        for (auto& s : agent.steps) {
            s.position = point(s.position);
            s.vel = vector(s.vel);
            s.accel = vector(s.accel);
            s.yaw = wrap_angle(s.yaw + yaw_offset);
        }
    for (auto& lane : out.lanes)
        for (auto& p : lane.points) p = point(p);
    for (auto& light : out.lights) light.position = point(light.position);
    for (auto& f : out.futures)
        for (auto& p : f.positions) p = point(p);
    return out;
}

} // namespace

TrafficScene translate_scene(const TrafficScene& scene, Vec2 offset) {
    return map_scene(
        scene, [offset](Vec2 p) { return Vec2{p.x + offset.x, p.y + offset.y}; }, [](Vec2 v) { return v; }, 0.0);
}

TrafficScene to_scene_centric(const TrafficScene& scene) {
    const Vec2 c = last_position_centroid(scene);
    TrafficScene out = scene;
    // Translation only: velocities, accelerations and yaws are unchanged.
    for (auto& agent : out.agents)
        for (auto& s : agent.steps) s.position = {s.position.x - c.x, s.position.y - c.y};
    for (auto& lane : out.lanes)
        for (auto& p : lane.points) p = {p.x - c.x, p.y - c.y};
    for (auto& light : out.lights) light.position = {light.position.x - c.x, light.position.y - c.y};
    for (auto& f : out.futures)
        for (auto& p : f.positions) p = {p.x - c.x, p.y - c.y};
    return out;
}

std::vector<AgentCentricView> to_agent_centric_views(const TrafficScene& scene, const std::vector<int>& focal_ids) {
    std::vector<AgentCentricView> views;
    views.reserve(focal_ids.size());
    for (int id : focal_ids) {
        int index = -1;
        for (size_t a = 0; a < scene.agents.size(); ++a)
            if (scene.agents[a].agent_id == id) index = static_cast<int>(a);
        if (index < 0) throw DataError("unknown focal agent id " + std::to_string(id));
        const auto& agent = scene.agents[index];
        const int t = agent.last_valid_step();
        if (t < 0) throw DataError("focal agent " + std::to_string(id) + " has no valid steps");

        AgentCentricView view;
        view.focal_index = index;
        view.focal_id = id;
        view.pose = {agent.steps[t].position, agent.steps[t].yaw};
        const Pose2 pose = view.pose;
        view.scene = map_scene(
            scene, [pose](Vec2 p) { return pose.apply_inverse(p); }, [pose](Vec2 v) { return pose.rotate_inverse(v); },
            -pose.rotation);
        views.push_back(std::move(view));
    }
    return views;
}

} // namespace jm
