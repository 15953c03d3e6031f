#pragma once

// Polyline tokens and the two encoder families: modality-specific late-fusion
// encoders and the shared early-fusion encoder that compresses every input
// token into a fixed set of learned latents.

#include "jointmotion/nn.hpp"
#include "jointmotion/scene.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace jm {

enum class Modality : int { agent = 0, lane = 1, light = 2 };
inline constexpr int kModalityCount = 3;
const char* modality_name(Modality m);

int agent_feature_width(const DatasetDialect& d);
int lane_feature_width(const DatasetDialect& d);
int light_feature_width(const DatasetDialect& d);
int feature_width(Modality m, const DatasetDialect& d);

inline constexpr double kPositionScale = 10.0; // meters
inline constexpr double kSpeedScale = 5.0;     // m/s

// Fixed per-column scales: embeddings read raw / scale and reconstruction
// heads emit scale * output, so losses stay in raw units.
std::vector<double> feature_scale(Modality m, const DatasetDialect& d);
Tensor scale_rows(const Tensor& rows, const std::vector<double>& scale, bool divide);

// Raw feature rows in token order, plus per-row validity. Agents:
// x, y, l, w, h, ax, ay, vx, vy, yaw, step one-hot, class one-hot. Lanes: x, y,
// class one-hot. Lights: x, y, step one-hot, state one-hot. Invalid agent
// steps produce all-zero rows.
struct RawFeatures {
    Modality modality = Modality::agent;
    Tensor rows;
    std::vector<uint8_t> valid;
    std::vector<int> polyline_id;
    std::vector<int> within_index;
};

RawFeatures agent_features(const TrafficScene& scene);
RawFeatures lane_features(const TrafficScene& scene);
RawFeatures light_features(const TrafficScene& scene);

struct TokenSequence {
    Var tokens; // N x D
    std::vector<Modality> modality;
    std::vector<int> polyline_id;
    std::vector<int> within_index;
    std::vector<uint8_t> valid;
    std::vector<int> positions_1d;

    int size() const { return static_cast<int>(valid.size()); }
    int valid_count() const;
};

// Concatenates sequences in order, keeping every bookkeeping vector aligned.
TokenSequence concat_sequences(const std::vector<const TokenSequence*>& parts, int width);
// Bookkeeping-only copy with new tokens.
TokenSequence with_tokens(const TokenSequence& s, Var tokens);

struct TransformerConfig {
    int depth = 1;
    int heads = 8;
    int window = 32;
    int width = 256;
    int ff_hidden = 1024;
    // Pre-norm blocks with rotary phases are the only supported variant.
};

// Stack of pre-norm local self-attention blocks. Token i may attend token j
// iff j is valid, |positions_1d[i] - positions_1d[j]| <= window and the
// optional dense mask allows it; invalid rows are zero after every block.
class LocalTransformer {
public:
    LocalTransformer() = default;
    LocalTransformer(ParameterStore& store, const std::string& prefix, const TransformerConfig& config, Rng& rng);

    TokenSequence encode(const TokenSequence& in, const std::vector<uint8_t>* attn_mask = nullptr) const;
    const TransformerConfig& config() const { return config_; }

private:
    TransformerConfig config_;
    std::vector<SelfAttentionBlock> blocks_;
};

std::vector<uint8_t> local_attention_mask(const TokenSequence& s, int window, const std::vector<uint8_t>* extra);

// Sinusoidal encoding of integer positions, N x width.
Tensor sinusoid_encoding(const std::vector<int>& positions, int width);

// Learned affine maps from raw features to tokens, one per modality.
// positions_1d ranges are contiguous: agents, then lanes, then lights.
class PolylineEmbedding {
public:
    PolylineEmbedding() = default;
    PolylineEmbedding(ParameterStore& store, const DatasetDialect& dialect, int width, Rng& rng);

    TokenSequence embed(const RawFeatures& raw, int position_offset) const;
    TokenSequence embed_agents(const TrafficScene& scene) const;
    TokenSequence embed_lanes(const TrafficScene& scene) const;
    TokenSequence embed_lights(const TrafficScene& scene) const;
    // All three in their canonical position ranges.
    std::array<TokenSequence, 3> embed_all(const TrafficScene& scene) const;

    const Linear& map(Modality m) const { return maps_[static_cast<int>(m)]; }
    int width() const { return width_; }

private:
    int width_ = 0;
    std::array<Linear, 3> maps_;
    std::array<std::vector<double>, 3> scales_;
};

// Per-modality outputs; H^M is agents, H^E is lanes followed by lights.
struct LateFusionEmbeddings {
    TokenSequence agents;
    TokenSequence lanes;
    TokenSequence lights;
};

struct LateFusionConfig {
    TransformerConfig base;
    int agent_depth = 3;
    int lane_depth = 6;
    int light_depth = 1;
};

class LateFusionEncoder {
public:
    LateFusionEncoder() = default;
    LateFusionEncoder(ParameterStore& store, const LateFusionConfig& config, Rng& rng);

    // masks[m] optionally restricts attention inside modality m.
    LateFusionEmbeddings encode(const std::array<TokenSequence, 3>& tokens,
                                const std::array<const std::vector<uint8_t>*, 3>& masks = {}) const;

private:
    std::array<LocalTransformer, 3> encoders_;
};

struct EarlyFusionConfig {
    TransformerConfig base;
    int latents = 128;
    int latent_depth = 2;
};

struct EarlyFusionLatent {
    Var latent; // L x D
    int input_count = 0;
    std::vector<Modality> modality;
    std::vector<int> polyline_id;
    std::vector<int> within_index;
    std::vector<int> positions_1d;
    std::vector<uint8_t> valid;
};

class EarlyFusionEncoder {
public:
    EarlyFusionEncoder() = default;
    EarlyFusionEncoder(ParameterStore& store, const EarlyFusionConfig& config, Rng& rng);

    // Latent queries cross-attend once to the input tokens that are valid and
    // not excluded, then run latent_depth dense self-attention blocks. Input
    // tokens carry a sinusoidal encoding of their positions_1d. Throws
    // DataError when no token is eligible.
    EarlyFusionLatent encode(const TokenSequence& tokens, const std::vector<uint8_t>* exclude = nullptr) const;
    const EarlyFusionConfig& config() const { return config_; }

private:
    EarlyFusionConfig config_;
    Var latents_;
    CrossAttentionBlock cross_;
    std::vector<SelfAttentionBlock> self_;
};

} // namespace jm
