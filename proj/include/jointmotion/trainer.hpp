#pragma once

#include "jointmotion/checkpoint.hpp"
#include "jointmotion/config.hpp"
#include "jointmotion/metrics.hpp"

#include <functional>
#include <optional>

namespace jm {

struct PretrainStep {
    int step = 0;
    int epoch = 0;
    double wall_time = 0.0;
    double lr = 0.0;
    double l_cme = 0.0; // meaningful only when the run uses CME
    double l_a = 0.0, l_l = 0.0, l_tl = 0.0;
    double l_mpm = 0.0;
    double l_joint = 0.0;
};

struct FinetuneStep {
    int step = 0;
    int epoch = 0;
    double wall_time = 0.0;
    double lr = 0.0;
    double loss = 0.0;
    double regression = 0.0;
    double classification = 0.0;
};

struct ValidationRow {
    int epoch = 0;
    double wall_time = 0.0;
    double min_ade = 0.0;
    double min_fde = 0.0;
    double miss_rate = 0.0;
    double map_simplified = 0.0;
};

struct RunRecord {
    std::string kind; // "pretrain" or "finetune"
    bool has_cme = false;
    bool has_mpm = false;
    std::vector<PretrainStep> pretrain;
    std::vector<FinetuneStep> finetune;
    std::vector<ValidationRow> validation;

    // Mean of a pretraining column over the steps of one epoch.
    double epoch_mean(int epoch, double PretrainStep::*field) const;
};

// Per-step tables. Pretraining columns follow the run's objectives: the
// L_CME column is absent without CME, the per-modality and L_MPM columns
// without MPM.
std::string pretrain_csv(const RunRecord& r);
std::string finetune_csv(const RunRecord& r);
std::string validation_csv(const RunRecord& r);
RunRecord parse_record_csv(const std::string& text, const std::string& kind, const std::string& source);

using EpochCallback = std::function<void(int epoch, const JointMotionModel& model)>;

struct BatchLosses {
    double l_cme = 0.0;
    std::array<double, 3> per_modality{};
    double l_mpm = 0.0;
    double l_joint = 0.0;
};

// Accumulates d L_JointMotion / d params for one batch into the store's
// gradients and returns the batch losses. L_JointMotion = lambda_cme * L_CME
// + mean over scenes of L_MPM. mask_seed_base feeds the per-scene masks.
BatchLosses pretrain_batch_gradients(JointMotionModel& model, const std::vector<const TrafficScene*>& batch,
                                     const RunConfig& cfg, uint64_t mask_seed_base);

// Same quantity without gradients, for finite-difference checks.
double pretrain_batch_loss(const JointMotionModel& model, const std::vector<const TrafficScene*>& batch,
                           const RunConfig& cfg, uint64_t mask_seed_base);

RunRecord pretrain(JointMotionModel& model, const std::vector<TrafficScene>& corpus, const RunConfig& cfg,
                   const EpochCallback& on_epoch = {});

// Fine-tunes every parameter (nothing frozen). Validation metrics are logged
// after each epoch when val is nonempty.
RunRecord finetune(JointMotionModel& model, const std::vector<TrafficScene>& train,
                   const std::vector<TrafficScene>& val, const RunConfig& cfg, const EpochCallback& on_epoch = {});

// Post-processed predictions for every scene, in scene order.
std::vector<ScenePrediction> predict_scenes(const JointMotionModel& model, const std::vector<TrafficScene>& scenes);
MetricReport evaluate_predictions(const std::vector<ScenePrediction>& preds, const std::vector<TrafficScene>& scenes,
                                  double threshold);

// Builds the fine-tuning model for cfg and, unless cfg.init is "scratch",
// loads the named checkpoint into it.
struct FinetuneModel {
    std::unique_ptr<JointMotionModel> model;
    std::optional<LoadReport> report;
};
FinetuneModel make_finetune_model(const RunConfig& cfg);
FinetuneModel make_finetune_model(const RunConfig& cfg, const Checkpoint* init);

std::vector<TrafficScene> generate_split(const DataConfig& data, uint64_t first_seed, int count);

} // namespace jm
