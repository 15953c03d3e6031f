#pragma once

// Joint prediction head: k learned anchors, one query per (mode, agent),
// global cross-attention to the encoder tokens, residual trajectory offsets
// and a softmax over modes.

#include "jointmotion/encoder.hpp"

namespace jm {

struct HeadConfig {
    int k = 6;
    double huber_delta = 1.0;
    double classification_weight = 1.0;
    double redundancy_threshold = 2.0; // meters
    double redundancy_penalty = 0.5;
};

struct JointPrediction {
    int k = 0;
    int agents = 0;
    int steps = 0;
    std::vector<double> positions; // k x agents x steps x 2, row-major
    std::vector<double> confidences;

    JointPrediction() = default;
    JointPrediction(int k, int agents, int steps);
    double& at(int m, int a, int t, int c) { return positions[((static_cast<size_t>(m) * agents + a) * steps + t) * 2 + c]; }
    double at(int m, int a, int t, int c) const {
        return positions[((static_cast<size_t>(m) * agents + a) * steps + t) * 2 + c];
    }
    bool operator==(const JointPrediction&) const = default;
};

// Differentiable view of a prediction: trajectories (k*agents) x (steps*2)
// with row m*agents + a, and 1 x k confidence log-probabilities.
struct JointPredictionVars {
    Var trajectories;
    Var log_conf;
    int k = 0;
    int agents = 0;
    int steps = 0;

    JointPrediction to_prediction() const;
};

// Per-agent conditioning for the decoder. Offsets are produced in each
// agent's own frame (identity pose for scene-centric models) and rotated
// into the scene frame before adding the last observed position.
struct AgentQueryInputs {
    Var summaries; // n_agents x D
    std::vector<Vec2> last_positions;
    std::vector<double> frame_rotation;
};

class JointHead {
public:
    JointHead() = default;
    JointHead(ParameterStore& store, const HeadConfig& config, int width, int heads, int ff_hidden, int t_future,
              Rng& rng);

    // context: encoder tokens (rows with context_valid == 0 are ignored).
    JointPredictionVars decode(const Var& context, const std::vector<uint8_t>& context_valid,
                               const AgentQueryInputs& agents) const;
    const HeadConfig& config() const { return config_; }

private:
    HeadConfig config_;
    int t_future_ = 0;
    Var anchors_;
    CrossAttentionBlock cross_;
    SelfAttentionBlock interact_;
    Linear traj_;
    Linear conf_;
};

struct HardAssignment {
    Var loss;
    Var regression;
    Var classification;
    int best_mode = 0;
    std::vector<double> mode_losses;
};

// Scene-wide best mode: argmin over modes of the mean Huber loss over every
// (agent, valid step, coordinate); lowest index wins ties. Loss is that
// mode's regression term plus weight * cross-entropy towards it. Throws
// DataError when the scene has no valid future step.
HardAssignment hard_assignment_loss(const JointPredictionVars& pred, const std::vector<FutureTrack>& futures,
                                    const HeadConfig& config);

// Modes ordered by confidence (stable); each mode is multiplied by penalty
// once for every higher-ranked mode whose mean final-position distance to it
// is below the threshold; then renormalized. Trajectories are untouched.
JointPrediction postprocess_confidences(const JointPrediction& pred, double threshold, double penalty);

} // namespace jm
