#pragma once

// Scene-level objective: pooled motion and environment embeddings, two
// independent projectors and the cross-correlation loss between them.

#include "jointmotion/encoder.hpp"

namespace jm {

struct ProjectorConfig {
    int input = 256;
    int hidden = 2048;
    int output = 256;
};

struct CmeConfig {
    double lambda_red = 0.005;
    double epsilon_std = 1e-5;
};

// Mean over valid agent tokens, 1 x D. Throws DataError when none is valid.
Var pool_motion(const TokenSequence& agents);
// Mean over the valid lane and light tokens taken together, 1 x D.
Var pool_environment(const TokenSequence& lanes, const TokenSequence& lights);

// Linear -> LayerNorm -> ReLU -> Linear.
class Projector {
public:
    Projector() = default;
    Projector(ParameterStore& store, const std::string& prefix, const ProjectorConfig& config, Rng& rng);
    Var operator()(const Var& pooled) const;
    int output_width() const { return second_.out(); }

private:
    Linear first_;
    LayerNorm norm_;
    Linear second_;
};

struct SceneEmbeddingPair {
    Var z_motion; // B x d
    Var z_env;    // B x d
};

// Both projectors, registered as cme.proj_motion.* and cme.proj_env.*.
struct CmeProjectors {
    Projector motion;
    Projector environment;

    CmeProjectors() = default;
    CmeProjectors(ParameterStore& store, const ProjectorConfig& config, Rng& rng);
    SceneEmbeddingPair project(const Var& pooled_motion, const Var& pooled_env) const;
};

// Columns standardized across the batch, C = Zm^T Ze / B. Requires B >= 2
// and finite inputs (invalid_argument / NumericError).
Var cross_correlation(const SceneEmbeddingPair& pair, double epsilon_std);

inline Var cme_loss(const Var& c, double lambda_red) { return ops::cme_loss(c, lambda_red); }

} // namespace jm
