#include "jointmotion/cme.hpp"

#include "jointmotion/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace jm {

Var pool_motion(const TokenSequence& agents) {
    if (agents.valid_count() == 0) throw DataError("pool_motion: no valid agent tokens");
    return ops::mean_rows(agents.tokens, agents.valid);
}

Var pool_environment(const TokenSequence& lanes, const TokenSequence& lights) {
    if (lanes.valid_count() + lights.valid_count() == 0) throw DataError("pool_environment: no valid lane or light tokens");
    const int width = lanes.size() ? lanes.tokens.cols() : lights.tokens.cols();
    const TokenSequence env = concat_sequences({&lanes, &lights}, width);
    return ops::mean_rows(env.tokens, env.valid);
}

Projector::Projector(ParameterStore& store, const std::string& prefix, const ProjectorConfig& config, Rng& rng)
    : first_(store, prefix + ".fc1", config.input, config.hidden, rng),
      norm_(store, prefix + ".norm", config.hidden),
      second_(store, prefix + ".fc2", config.hidden, config.output, rng) {}

Var Projector::operator()(const Var& pooled) const {
    if (pooled.cols() != first_.in())
        throw std::invalid_argument("projector: input width " + std::to_string(pooled.cols()) + " != " +
                                    std::to_string(first_.in()));
    return second_(ops::relu(norm_(first_(pooled))));
}

CmeProjectors::CmeProjectors(ParameterStore& store, const ProjectorConfig& config, Rng& rng)
    : motion(store, "cme.proj_motion", config, rng), environment(store, "cme.proj_env", config, rng) {}

SceneEmbeddingPair CmeProjectors::project(const Var& pooled_motion, const Var& pooled_env) const {
    return {motion(pooled_motion), environment(pooled_env)};
}

Var cross_correlation(const SceneEmbeddingPair& pair, double epsilon_std) {
    const Var& zm = pair.z_motion;
    const Var& ze = pair.z_env;
    if (!zm.value().same_shape(ze.value()))
        throw std::invalid_argument("cross_correlation: Z_M and Z_E shapes differ");
    const int b = zm.rows();
    if (b < 2) throw std::invalid_argument("cross_correlation: batch size must be >= 2, got " + std::to_string(b));
    if (!(epsilon_std > 0.0)) throw std::invalid_argument("cross_correlation: epsilon_std must be positive");
    for (const Var* z : {&zm, &ze})
        for (double v : z->value().flat())
            if (!std::isfinite(v)) throw NumericError("cross_correlation: non-finite embedding entry");
    const Var sm = ops::standardize_columns(zm, epsilon_std);
    const Var se = ops::standardize_columns(ze, epsilon_std);
    return ops::scale(ops::matmul(ops::transpose(sm), se), 1.0 / b);
}

} // namespace jm
