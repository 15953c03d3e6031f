#include "jointmotion/encoder.hpp"

#include "jointmotion/errors.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace jm {

const char* modality_name(Modality m) {
    switch (m) {
    case Modality::agent: return "agent";
    case Modality::lane: return "lane";
    case Modality::light: return "light";
    }
    return "?";
}

int agent_feature_width(const DatasetDialect& d) { return 2 + 3 + 2 + 2 + 1 + d.t_past + kAgentClassCount; }
int lane_feature_width(const DatasetDialect& d) { return 2 + d.lane_class_count; }
int light_feature_width(const DatasetDialect& d) { return 2 + d.t_past + kLightStateCount; }

int feature_width(Modality m, const DatasetDialect& d) {
    switch (m) {
    case Modality::agent: return agent_feature_width(d);
    case Modality::lane: return lane_feature_width(d);
    case Modality::light: return light_feature_width(d);
    }
    return 0;
}

std::vector<double> feature_scale(Modality m, const DatasetDialect& d) {
    std::vector<double> s(feature_width(m, d), 1.0);
    s[0] = s[1] = kPositionScale;
    if (m == Modality::agent) s[7] = s[8] = kSpeedScale;
    return s;
}

Tensor scale_rows(const Tensor& rows, const std::vector<double>& scale, bool divide) {
    if (static_cast<size_t>(rows.cols()) != scale.size()) throw std::invalid_argument("scale_rows: width mismatch");
    Tensor out = rows;
    for (int i = 0; i < out.rows(); ++i)
        for (int c = 0; c < out.cols(); ++c) out(i, c) = divide ? out(i, c) / scale[c] : out(i, c) * scale[c];
    return out;
}

RawFeatures agent_features(const TrafficScene& scene) {
    const auto& d = scene.dialect;
    const int T = d.t_past, width = agent_feature_width(d);
    RawFeatures out;
    out.modality = Modality::agent;
    out.rows = Tensor(static_cast<int>(scene.agents.size()) * T, width);
    int r = 0;
    for (size_t a = 0; a < scene.agents.size(); ++a) {
        const auto& agent = scene.agents[a];
        for (int t = 0; t < T; ++t, ++r) {
            const AgentStep& s = agent.steps[t];
            out.valid.push_back(s.valid ? 1 : 0);
            out.polyline_id.push_back(static_cast<int>(a));
            out.within_index.push_back(t);
            if (!s.valid) continue;
            auto row = out.rows.row(r);
            const double head[10] = {s.position.x, s.position.y, s.dims[0], s.dims[1], s.dims[2],
                                     s.accel.x,    s.accel.y,    s.vel.x,   s.vel.y,   s.yaw};
            std::copy(head, head + 10, row.begin());
            std::copy(s.step_onehot.begin(), s.step_onehot.end(), row.begin() + 10);
            std::copy(agent.class_onehot.begin(), agent.class_onehot.end(), row.begin() + 10 + T);
        }
    }
    return out;
}

RawFeatures lane_features(const TrafficScene& scene) {
    const int width = lane_feature_width(scene.dialect);
    int n = 0;
    for (const auto& lane : scene.lanes) n += static_cast<int>(lane.points.size());
    RawFeatures out;
    out.modality = Modality::lane;
    out.rows = Tensor(n, width);
    int r = 0;
    for (size_t l = 0; l < scene.lanes.size(); ++l) {
        const auto& lane = scene.lanes[l];
        for (size_t p = 0; p < lane.points.size(); ++p, ++r) {
            auto row = out.rows.row(r);
            row[0] = lane.points[p].x;
            row[1] = lane.points[p].y;
            std::copy(lane.class_onehot.begin(), lane.class_onehot.end(), row.begin() + 2);
            out.valid.push_back(1);
            out.polyline_id.push_back(static_cast<int>(l));
            out.within_index.push_back(static_cast<int>(p));
        }
    }
    return out;
}

RawFeatures light_features(const TrafficScene& scene) {
    const int T = scene.dialect.t_past, width = light_feature_width(scene.dialect);
    int n = 0;
    for (const auto& light : scene.lights) n += static_cast<int>(light.steps.size());
    RawFeatures out;
    out.modality = Modality::light;
    out.rows = Tensor(n, width);
    int r = 0;
    for (size_t k = 0; k < scene.lights.size(); ++k) {
        const auto& light = scene.lights[k];
        for (size_t t = 0; t < light.steps.size(); ++t, ++r) {
            auto row = out.rows.row(r);
            row[0] = light.position.x;
            row[1] = light.position.y;
            std::copy(light.steps[t].step_onehot.begin(), light.steps[t].step_onehot.end(), row.begin() + 2);
            std::copy(light.steps[t].state_onehot.begin(), light.steps[t].state_onehot.end(), row.begin() + 2 + T);
            out.valid.push_back(1);
            out.polyline_id.push_back(static_cast<int>(k));
            out.within_index.push_back(static_cast<int>(t));
        }
    }
    return out;
}

int TokenSequence::valid_count() const {
    int n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
}

TokenSequence concat_sequences(const std::vector<const TokenSequence*>& parts, int width) {
    TokenSequence out;
    std::vector<Var> vars;
    for (const TokenSequence* p : parts) {
        vars.push_back(p->tokens);
        out.modality.insert(out.modality.end(), p->modality.begin(), p->modality.end());
        out.polyline_id.insert(out.polyline_id.end(), p->polyline_id.begin(), p->polyline_id.end());
        out.within_index.insert(out.within_index.end(), p->within_index.begin(), p->within_index.end());
        out.valid.insert(out.valid.end(), p->valid.begin(), p->valid.end());
        out.positions_1d.insert(out.positions_1d.end(), p->positions_1d.begin(), p->positions_1d.end());
    }
    out.tokens = ops::concat_rows(vars, width);
    return out;
}

TokenSequence with_tokens(const TokenSequence& s, Var tokens) {
    TokenSequence out = s;
    out.tokens = std::move(tokens);
    return out;
}

std::vector<uint8_t> local_attention_mask(const TokenSequence& s, int window, const std::vector<uint8_t>* extra) {
    const size_t n = s.valid.size();
    if (extra && extra->size() != n * n) throw std::invalid_argument("attention mask must be N x N");
    std::vector<uint8_t> allowed(n * n, 0);
    for (size_t i = 0; i < n; ++i) {
        if (!s.valid[i]) continue;
        for (size_t j = 0; j < n; ++j) {
            if (!s.valid[j]) continue;
            if (std::abs(s.positions_1d[i] - s.positions_1d[j]) > window) continue;
            if (extra && !(*extra)[i * n + j]) continue;
            allowed[i * n + j] = 1;
        }
    }
    return allowed;
}

Tensor sinusoid_encoding(const std::vector<int>& positions, int width) {
    Tensor pe(static_cast<int>(positions.size()), width);
    for (size_t i = 0; i < positions.size(); ++i)
        for (int c = 0; c < width; ++c) {
            const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / width);
            const double angle = positions[i] * freq;
            pe(static_cast<int>(i), c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

LocalTransformer::LocalTransformer(ParameterStore& store, const std::string& prefix, const TransformerConfig& config,
                                   Rng& rng)
    : config_(config) {
    if (config.heads < 1 || config.width % config.heads != 0)
        throw std::invalid_argument("transformer width must be divisible by heads");
    if (config.window < 1) throw std::invalid_argument("transformer window must be >= 1");
    for (int b = 0; b < config.depth; ++b)
        blocks_.emplace_back(store, prefix + ".block" + std::to_string(b), config.width, config.heads, config.ff_hidden,
                             rng);
}

TokenSequence LocalTransformer::encode(const TokenSequence& in, const std::vector<uint8_t>* attn_mask) const {
    if (in.size() == 0) return in;
    if (in.tokens.cols() != config_.width)
        throw std::invalid_argument("local transformer: token width " + std::to_string(in.tokens.cols()) +
                                    " != configured width " + std::to_string(config_.width));
    const auto allowed = local_attention_mask(in, config_.window, attn_mask);
    Var x = in.tokens;
    for (const auto& block : blocks_) x = ops::mask_rows(block(x, allowed, in.positions_1d), in.valid);
    return with_tokens(in, x);
}

PolylineEmbedding::PolylineEmbedding(ParameterStore& store, const DatasetDialect& dialect, int width, Rng& rng)
    : width_(width) {
    maps_[0] = Linear(store, "embed.agent", agent_feature_width(dialect), width, rng);
    maps_[1] = Linear(store, "embed.lane", lane_feature_width(dialect), width, rng);
    maps_[2] = Linear(store, "embed.light", light_feature_width(dialect), width, rng);
    for (int m = 0; m < kModalityCount; ++m) scales_[m] = feature_scale(static_cast<Modality>(m), dialect);
}

TokenSequence PolylineEmbedding::embed(const RawFeatures& raw, int position_offset) const {
    const Linear& map = maps_[static_cast<int>(raw.modality)];
    if (raw.rows.cols() != map.in())
        throw DataError(std::string(modality_name(raw.modality)) + " features have width " +
                        std::to_string(raw.rows.cols()) + ", embedding expects " + std::to_string(map.in()));
    TokenSequence s;
    const int n = raw.rows.rows();
    s.modality.assign(n, raw.modality);
    s.polyline_id = raw.polyline_id;
    s.within_index = raw.within_index;
    s.valid = raw.valid;
    for (int i = 0; i < n; ++i) s.positions_1d.push_back(position_offset + i);
    if (n == 0) s.tokens = ops::constant(Tensor(0, width_));
    else s.tokens = ops::mask_rows(map(ops::constant(scale_rows(raw.rows, scales_[static_cast<int>(raw.modality)], true))), s.valid);
    return s;
}

TokenSequence PolylineEmbedding::embed_agents(const TrafficScene& scene) const { return embed_all(scene)[0]; }
TokenSequence PolylineEmbedding::embed_lanes(const TrafficScene& scene) const { return embed_all(scene)[1]; }
TokenSequence PolylineEmbedding::embed_lights(const TrafficScene& scene) const { return embed_all(scene)[2]; }

std::array<TokenSequence, 3> PolylineEmbedding::embed_all(const TrafficScene& scene) const {
    const auto problems = validate_scene(scene);
    if (!problems.empty()) throw DataError("scene " + scene.scene_id + " is invalid: " + problems.front());
    const RawFeatures a = agent_features(scene), l = lane_features(scene), t = light_features(scene);
    std::array<TokenSequence, 3> out;
    out[0] = embed(a, 0);
    out[1] = embed(l, a.rows.rows());
    out[2] = embed(t, a.rows.rows() + l.rows.rows());
    return out;
}

LateFusionEncoder::LateFusionEncoder(ParameterStore& store, const LateFusionConfig& config, Rng& rng) {
    TransformerConfig c = config.base;
    c.depth = config.agent_depth;
    encoders_[0] = LocalTransformer(store, "enc.agent", c, rng);
    c.depth = config.lane_depth;
    encoders_[1] = LocalTransformer(store, "enc.lane", c, rng);
    c.depth = config.light_depth;
    encoders_[2] = LocalTransformer(store, "enc.light", c, rng);
}

LateFusionEmbeddings LateFusionEncoder::encode(const std::array<TokenSequence, 3>& tokens,
                                               const std::array<const std::vector<uint8_t>*, 3>& masks) const {
    LateFusionEmbeddings out;
    out.agents = encoders_[0].encode(tokens[0], masks[0]);
    out.lanes = encoders_[1].encode(tokens[1], masks[1]);
    out.lights = encoders_[2].encode(tokens[2], masks[2]);
    return out;
}

EarlyFusionEncoder::EarlyFusionEncoder(ParameterStore& store, const EarlyFusionConfig& config, Rng& rng)
    : config_(config) {
    const auto& b = config.base;
    if (config.latents < 1) throw std::invalid_argument("early fusion needs at least one latent");
    Tensor init(config.latents, b.width);
    for (double& x : init.flat()) x = rng.normal() * 0.02;
    latents_ = store.add("enc.early.latents", std::move(init));
    cross_ = CrossAttentionBlock(store, "enc.early.cross", b.width, b.heads, b.ff_hidden, rng);
    for (int i = 0; i < config.latent_depth; ++i)
        self_.emplace_back(store, "enc.early.self" + std::to_string(i), b.width, b.heads, b.ff_hidden, rng);
}

EarlyFusionLatent EarlyFusionEncoder::encode(const TokenSequence& tokens, const std::vector<uint8_t>* exclude) const {
    const int n = tokens.size();
    if (tokens.tokens.cols() != config_.base.width)
        throw std::invalid_argument("early fusion: token width mismatch");
    if (exclude && exclude->size() != static_cast<size_t>(n))
        throw std::invalid_argument("early fusion: exclusion mask misaligned");
    std::vector<uint8_t> key_ok(n, 0);
    int eligible = 0;
    for (int j = 0; j < n; ++j) {
        key_ok[j] = tokens.valid[j] && !(exclude && (*exclude)[j]);
        eligible += key_ok[j];
    }
    if (eligible == 0) throw DataError("early fusion encoder: no valid input tokens");

    const int L = config_.latents;
    std::vector<uint8_t> allowed(static_cast<size_t>(L) * n);
    for (int i = 0; i < L; ++i) std::copy(key_ok.begin(), key_ok.end(), allowed.begin() + static_cast<size_t>(i) * n);
    const Var context = ops::add(tokens.tokens, ops::constant(sinusoid_encoding(tokens.positions_1d, config_.base.width)));
    Var x = cross_(latents_, context, allowed);
    for (const auto& block : self_) x = block(x, {}, {});

    EarlyFusionLatent out;
    out.latent = x;
    out.input_count = n;
    out.modality = tokens.modality;
    out.polyline_id = tokens.polyline_id;
    out.within_index = tokens.within_index;
    out.positions_1d = tokens.positions_1d;
    out.valid = tokens.valid;
    return out;
}

} // namespace jm
