#pragma once

#include "jointmotion/cme.hpp"
#include "jointmotion/head.hpp"
#include "jointmotion/mpm.hpp"

#include <memory>
#include <optional>

namespace jm {

enum class Fusion { late, early };
const char* fusion_name(Fusion f);
Fusion fusion_by_name(const std::string& name);

struct ModelConfig {
    DatasetDialect dialect = dialect_w();
    Fusion fusion = Fusion::late;
    int width = 256;
    int heads = 8;
    int window = 32;
    int ff_hidden = 1024;
    int agent_depth = 3;
    int lane_depth = 6;
    int light_depth = 1;
    int latents = 128;
    int latent_depth = 2;
    int decoder_depth = 3;
    int projector_hidden = 2048;
    int projector_output = 256;
    HeadConfig head;

    TransformerConfig transformer(int depth) const { return {depth, heads, window, width, ff_hidden}; }
};

// Which optional parameter groups a model instance owns. The embedding and
// encoder are always present.
struct ModelParts {
    bool cme = false;
    bool mpm = false;
    bool head = false;
};

struct PretrainForward {
    std::optional<MpmLosses> mpm;
    Var pooled_motion; // defined when the model has CME parts
    Var pooled_env;
};

class JointMotionModel {
public:
    // Each parameter group draws from its own seed stream, so a group's
    // initial values do not depend on which other groups are built.
    JointMotionModel(const ModelConfig& config, ModelParts parts, uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ModelParts parts() const { return parts_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    // Token layout of a scene after the scene-centric transform, per modality.
    std::array<std::vector<uint8_t>, 3> token_validity(const TrafficScene& scene) const;

    // One scene. With a mask (required when the model has MPM parts) the
    // encoder sees the masked scene and the reconstruction loss is returned.
    // Early-fusion models only support MPM and encode the view of focal agent
    // `focal % n_agents`.
    PretrainForward pretrain_forward(const TrafficScene& scene, const MaskSpec* mask, const MpmConfig& mpm,
                                     int focal = 0) const;

    // Requires head parts. Trajectories are in the frame of `scene`.
    JointPredictionVars predict(const TrafficScene& scene) const;

    // Frame the pre-training forward works in: scene-centric for late fusion,
    // the focal agent's view for early fusion.
    TrafficScene pretrain_frame(const TrafficScene& scene, int focal) const;

private:
    std::array<TokenSequence, 3> embed(const TrafficScene& frame) const;

    ModelConfig config_;
    ModelParts parts_;
    ParameterStore store_;
    PolylineEmbedding embedding_;
    std::unique_ptr<LateFusionEncoder> late_;
    std::unique_ptr<EarlyFusionEncoder> early_;
    std::unique_ptr<CmeProjectors> projectors_;
    std::unique_ptr<MpmHeads> mpm_heads_;
    std::unique_ptr<LateFusionDecoder> late_decoder_;
    std::unique_ptr<EarlyFusionDecoder> early_decoder_;
    std::unique_ptr<JointHead> head_;
    Linear pose_merge_;

public:
    const CmeProjectors* projectors() const { return projectors_.get(); }
};

} // namespace jm
