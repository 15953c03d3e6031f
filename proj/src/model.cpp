#include "jointmotion/model.hpp"

#include "jointmotion/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace jm {

const char* fusion_name(Fusion f) { return f == Fusion::late ? "late" : "early"; }

Fusion fusion_by_name(const std::string& name) {
    if (name == "late") return Fusion::late;
    if (name == "early") return Fusion::early;
    throw ConfigError("unknown fusion '" + name + "' (expected late or early)");
}

namespace {

// Keys of the pose features appended to every early-fusion latent.
constexpr int kPoseFeatures = 4;
constexpr double kPoseScale = 0.1;

Tensor pose_features(const Pose2& pose, int rows) {
    Tensor t(rows, kPoseFeatures);
    for (int i = 0; i < rows; ++i) {
        t(i, 0) = pose.translation.x * kPoseScale;
        t(i, 1) = pose.translation.y * kPoseScale;
        t(i, 2) = std::cos(pose.rotation);
        t(i, 3) = std::sin(pose.rotation);
    }
    return t;
}

} // namespace

JointMotionModel::JointMotionModel(const ModelConfig& config, ModelParts parts, uint64_t seed)
    : config_(config), parts_(parts) {
    if (config.width % config.heads != 0) throw ConfigError("model.width must be divisible by model.heads");
    if ((config.width / config.heads) % 2 != 0) throw ConfigError("rotary embedding needs an even per-head width");
    if (config.window < 1) throw ConfigError("model.window must be >= 1");
    if (config.fusion == Fusion::early && parts.cme)
        throw ConfigError("the CME objective needs modality-specific embeddings; use late fusion or drop cme");

    Rng embed_rng(derive_seed(seed, 1));
    embedding_ = PolylineEmbedding(store_, config.dialect, config.width, embed_rng);

    Rng enc_rng(derive_seed(seed, 2));
    if (config.fusion == Fusion::late) {
        LateFusionConfig lc{config.transformer(0), config.agent_depth, config.lane_depth, config.light_depth};
        late_ = std::make_unique<LateFusionEncoder>(store_, lc, enc_rng);
    } else {
        EarlyFusionConfig ec{config.transformer(0), config.latents, config.latent_depth};
        early_ = std::make_unique<EarlyFusionEncoder>(store_, ec, enc_rng);
    }

    if (parts.cme) {
        Rng rng(derive_seed(seed, 3));
        projectors_ = std::make_unique<CmeProjectors>(
            store_, ProjectorConfig{config.width, config.projector_hidden, config.projector_output}, rng);
    }
    if (parts.mpm) {
        Rng rng(derive_seed(seed, 4));
        mpm_heads_ = std::make_unique<MpmHeads>(store_, config.dialect, config.width, rng);
        if (config.fusion == Fusion::late)
            late_decoder_ = std::make_unique<LateFusionDecoder>(store_, config.transformer(config.decoder_depth), rng);
        else
            early_decoder_ = std::make_unique<EarlyFusionDecoder>(store_, config.transformer(config.decoder_depth), rng);
    }
    if (parts.head) {
        Rng rng(derive_seed(seed, 5));
        head_ = std::make_unique<JointHead>(store_, config.head, config.width, config.heads, config.ff_hidden,
                                            config.dialect.t_future, rng);
        if (config.fusion == Fusion::early)
            pose_merge_ = Linear(store_, "head.pose_merge", config.width + kPoseFeatures, config.width, rng);
    }
}

std::array<TokenSequence, 3> JointMotionModel::embed(const TrafficScene& frame) const {
    if (!(frame.dialect == config_.dialect))
        throw DataError("scene " + frame.scene_id + " uses dialect " + frame.dialect.name + ", model expects " +
                        config_.dialect.name);
    return embedding_.embed_all(frame);
}

std::array<std::vector<uint8_t>, 3> JointMotionModel::token_validity(const TrafficScene& scene) const {
    return {agent_features(scene).valid, lane_features(scene).valid, light_features(scene).valid};
}

TrafficScene JointMotionModel::pretrain_frame(const TrafficScene& scene, int focal) const {
    const TrafficScene centered = to_scene_centric(scene);
    if (config_.fusion == Fusion::late) return centered;
    const int n = static_cast<int>(centered.agents.size());
    const int index = ((focal % n) + n) % n;
    return to_agent_centric_views(centered, {centered.agents[index].agent_id}).front().scene;
}

PretrainForward JointMotionModel::pretrain_forward(const TrafficScene& scene, const MaskSpec* mask,
                                                   const MpmConfig& mpm, int focal) const {
    if (parts_.mpm && !mask) throw std::invalid_argument("pretrain_forward: MPM model needs a mask");
    const TrafficScene frame = pretrain_frame(scene, focal);
    const auto tokens = embed(frame);
    PretrainForward out;

    std::array<Tensor, 3> targets;
    if (mask) {
        targets = {agent_features(frame).rows, lane_features(frame).rows, light_features(frame).rows};
        for (int m = 0; m < kModalityCount; ++m)
            if (mask->masked[m].size() != static_cast<size_t>(tokens[m].size()))
                throw std::invalid_argument("pretrain_forward: mask spec does not match the scene's tokens");
    }
    const std::array<std::vector<uint8_t>, 3> valid{tokens[0].valid, tokens[1].valid, tokens[2].valid};

    if (config_.fusion == Fusion::late) {
        LateFusionEmbeddings h;
        if (mask && parts_.mpm) {
            std::array<MaskedSequence, 3> masked;
            std::array<const std::vector<uint8_t>*, 3> masks{};
            std::array<TokenSequence, 3> input;
            for (int m = 0; m < kModalityCount; ++m) {
                masked[m] = apply_mask(tokens[m], mask->masked[m], mpm_heads_->mask_token(static_cast<Modality>(m)));
                input[m] = masked[m].tokens;
                masks[m] = &masked[m].attn_mask;
            }
            h = late_->encode(input, masks);
            const TokenSequence decoded = late_decoder_->decode(h);
            out.mpm = mpm_loss(mpm_heads_->project(decoded.tokens, decoded.modality), targets, *mask, valid, mpm);
        } else {
            h = late_->encode(tokens);
        }
        if (parts_.cme) {
            out.pooled_motion = pool_motion(h.agents);
            out.pooled_env = pool_environment(h.lanes, h.lights);
        }
        return out;
    }

    const TokenSequence all = concat_sequences({&tokens[0], &tokens[1], &tokens[2]}, config_.width);
    std::vector<uint8_t> exclude;
    if (mask)
        for (int m = 0; m < kModalityCount; ++m)
            exclude.insert(exclude.end(), mask->masked[m].begin(), mask->masked[m].end());
    const EarlyFusionLatent latent = early_->encode(all, mask ? &exclude : nullptr);
    if (mask && parts_.mpm) {
        const TokenSequence decoded = early_decoder_->decode(latent);
        out.mpm = mpm_loss(mpm_heads_->project(decoded.tokens, decoded.modality), targets, *mask, valid, mpm);
    }
    return out;
}

JointPredictionVars JointMotionModel::predict(const TrafficScene& scene) const {
    if (!head_) throw std::logic_error("predict: model has no prediction head");
    const Vec2 centroid = last_position_centroid(scene);
    const TrafficScene centered = to_scene_centric(scene);
    const int n = static_cast<int>(centered.agents.size());

    AgentQueryInputs q;
    Var context;
    std::vector<uint8_t> context_valid;
    if (config_.fusion == Fusion::late) {
        const LateFusionEmbeddings h = late_->encode(embed(centered));
        std::vector<Var> summaries;
        for (int a = 0; a < n; ++a) {
            std::vector<uint8_t> rows(h.agents.size(), 0);
            for (int i = 0; i < h.agents.size(); ++i) rows[i] = h.agents.polyline_id[i] == a && h.agents.valid[i];
            const int t = centered.agents[a].last_valid_step();
            if (t < 0) throw DataError("predict: agent " + std::to_string(a) + " has no valid steps");
            summaries.push_back(ops::mean_rows(h.agents.tokens, rows));
            q.last_positions.push_back(centered.agents[a].steps[t].position);
            q.frame_rotation.push_back(0.0);
        }
        q.summaries = ops::concat_rows(summaries, config_.width);
        const TokenSequence all = concat_sequences({&h.agents, &h.lanes, &h.lights}, config_.width);
        context = all.tokens;
        context_valid = all.valid;
    } else {
        std::vector<int> ids;
        for (const auto& agent : centered.agents) ids.push_back(agent.agent_id);
        const auto views = to_agent_centric_views(centered, ids);
        std::vector<Var> keys, summaries;
        for (const auto& view : views) {
            const auto tokens = embed(view.scene);
            const TokenSequence all = concat_sequences({&tokens[0], &tokens[1], &tokens[2]}, config_.width);
            const EarlyFusionLatent latent = early_->encode(all);
            const Var merged =
                pose_merge_(ops::concat_cols(latent.latent, ops::constant(pose_features(view.pose, latent.latent.rows()))));
            keys.push_back(merged);
            summaries.push_back(ops::mean_rows(merged));
            q.last_positions.push_back(view.pose.translation);
            q.frame_rotation.push_back(view.pose.rotation);
        }
        q.summaries = ops::concat_rows(summaries, config_.width);
        context = ops::concat_rows(keys, config_.width);
        context_valid.assign(context.rows(), 1);
    }

    JointPredictionVars pred = head_->decode(context, context_valid, q);
    Tensor shift(pred.trajectories.rows(), pred.trajectories.cols());
    for (int r = 0; r < shift.rows(); ++r)
        for (int c = 0; c < shift.cols(); ++c) shift(r, c) = c % 2 == 0 ? centroid.x : centroid.y;
    pred.trajectories = ops::add(pred.trajectories, ops::constant(shift));
    return pred;
}

} // namespace jm
