#pragma once

#include "jointmotion/scene.hpp"

#include <cstdint>
#include <vector>

namespace jm {

struct SceneCounts {
    int agents = 4;
    int lanes = 6;
    int lights = 2;
};

struct GeneratorOptions {
    int lane_points = 8;
    double dt = 0.1;
};

// Seeded lane-following scene. Lanes are straight segments or constant
// curvature arcs; each agent tracks one lane with a smooth speed profile
// integrated by forward Euler, so position/velocity/acceleration increments
// are exactly consistent. Futures continue the same kinematics. Lights sit at
// lane endpoints and cycle green -> yellow -> red. Pure function of its
// arguments. Throws std::invalid_argument for counts below (1, 1, 0).
TrafficScene generate_synthetic_scene(uint64_t seed, const DatasetDialect& dialect, SceneCounts counts,
                                      const GeneratorOptions& options = {});

// Scenes for seeds first_seed .. first_seed + count - 1, generated in
// parallel; identical to generating them one by one.
std::vector<TrafficScene> generate_corpus(uint64_t first_seed, int count, const DatasetDialect& dialect,
                                          SceneCounts counts, const GeneratorOptions& options = {});

} // namespace jm
