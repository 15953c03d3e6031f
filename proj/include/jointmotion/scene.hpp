#pragma once

// Polyline scene representation: agent tracks (the motion set), lane
// polylines and traffic-light sequences (the environment set), plus the frame
// transforms used by the scene-centric and agent-centric encoders.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace jm {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

enum class AgentClass : int { vehicle = 0, cyclist = 1, pedestrian = 2 };
enum class LightState : int { green = 0, yellow = 1, red = 2 };

inline constexpr int kAgentClassCount = 3;
inline constexpr int kLightStateCount = 3;

struct DatasetDialect {
    std::string name;
    int t_past = 11;
    int t_future = 16;
    bool has_traffic_lights = true;
    int lane_class_count = 4;

    bool operator==(const DatasetDialect&) const = default;
};

// 11 past / 16 future steps with traffic lights.
DatasetDialect dialect_w();
// 8 past / 12 future steps, no traffic lights.
DatasetDialect dialect_a();
// Looks up "W"/"dialect-W" or "A"/"dialect-A"; throws std::invalid_argument.
DatasetDialect dialect_by_name(const std::string& name);

struct AgentStep {
    Vec2 position;
    std::array<double, 3> dims{}; // length, width, height
    Vec2 accel;
    Vec2 vel;
    double yaw = 0.0;
    std::vector<double> step_onehot;
    bool valid = true;

    bool operator==(const AgentStep&) const = default;
};

struct AgentTrack {
    int agent_id = 0;
    std::array<double, kAgentClassCount> class_onehot{};
    std::vector<AgentStep> steps; // t_past entries

    int last_valid_step() const; // -1 when no step is valid
    bool operator==(const AgentTrack&) const = default;
};

struct LanePolyline {
    int lane_id = 0;
    std::vector<Vec2> points;
    std::vector<double> class_onehot;

    bool operator==(const LanePolyline&) const = default;
};

struct LightStep {
    std::array<double, kLightStateCount> state_onehot{};
    std::vector<double> step_onehot;

    bool operator==(const LightStep&) const = default;
};

struct TrafficLightSequence {
    int light_id = 0;
    Vec2 position;
    std::vector<LightStep> steps; // t_past entries

    bool operator==(const TrafficLightSequence&) const = default;
};

struct FutureTrack {
    std::vector<Vec2> positions; // t_future entries
    std::vector<uint8_t> valid;

    int last_valid_step() const;
    bool operator==(const FutureTrack&) const = default;
};

struct TrafficScene {
    std::vector<AgentTrack> agents;
    std::vector<LanePolyline> lanes;
    std::vector<TrafficLightSequence> lights;
    std::vector<FutureTrack> futures; // one per agent
    double dt = 0.1;
    DatasetDialect dialect;
    std::string scene_id;

    bool operator==(const TrafficScene&) const = default;
};

// Rigid 2-D pose: scene = R(rotation) * view + translation.
struct Pose2 {
    Vec2 translation;
    double rotation = 0.0;

    Vec2 apply(Vec2 p) const;
    Vec2 apply_inverse(Vec2 p) const;
    Vec2 rotate(Vec2 v) const;
    Vec2 rotate_inverse(Vec2 v) const;
};

struct AgentCentricView {
    TrafficScene scene; // expressed in the focal agent's frame
    int focal_index = 0;
    int focal_id = 0;
    Pose2 pose; // maps view coordinates back to the source frame
};

// Every invariant violation, each naming the offending field and index.
// Never throws.
std::vector<std::string> validate_scene(const TrafficScene& scene);

// Discrete kinematic consistency of the past tracks (position/velocity/accel
// increments and yaw/velocity alignment) within tol. Generated scenes satisfy
// this; hand-edited scenes need not.
std::vector<std::string> kinematic_violations(const TrafficScene& scene, double tol = 1e-6);

// Centroid of all agents' last valid positions; throws DataError if none.
Vec2 last_position_centroid(const TrafficScene& scene);

// Translation-only transform putting last_position_centroid at the origin.
TrafficScene to_scene_centric(const TrafficScene& scene);
TrafficScene translate_scene(const TrafficScene& scene, Vec2 offset);

// One view per focal agent id; throws DataError for unknown ids or agents
// without valid steps.
std::vector<AgentCentricView> to_agent_centric_views(const TrafficScene& scene, const std::vector<int>& focal_ids);

double wrap_angle(double a); // into (-pi, pi]

std::vector<double> onehot(int index, int size);
int onehot_index(const std::vector<double>& v); // -1 when not exactly one-hot

} // namespace jm
