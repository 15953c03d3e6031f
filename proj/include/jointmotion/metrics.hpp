#pragma once

// Joint (scene-wide) metrics over k modes. Every "min" picks a single mode
// for the whole scene; agents are never mixed across modes.

#include "jointmotion/head.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace jm {

// Mean displacement over every agent and valid future step of mode m.
double joint_ade(const JointPrediction& pred, int m, const std::vector<FutureTrack>& gt);
// Mean over agents (with a valid step) of the displacement at the agent's
// last valid future step.
double joint_fde(const JointPrediction& pred, int m, const std::vector<FutureTrack>& gt);
double joint_min_ade(const JointPrediction& pred, const std::vector<FutureTrack>& gt);
double joint_min_fde(const JointPrediction& pred, const std::vector<FutureTrack>& gt);

// Mode m hits when every agent's final displacement is below threshold.
bool mode_hits(const JointPrediction& pred, int m, const std::vector<FutureTrack>& gt, double threshold);

struct EvalItem {
    const JointPrediction* pred = nullptr;
    const std::vector<FutureTrack>* gt = nullptr;
};

double joint_miss_rate(const std::vector<EvalItem>& items, double threshold = 2.0);
// Non-interpolated AP over all (scene, mode) detections ranked by confidence
// (ties keep scene then mode order); only the first hit per scene counts as
// a true positive; recall is over the number of scenes.
double simplified_map(const std::vector<EvalItem>& items, double threshold = 2.0);

struct SceneMetrics {
    std::string scene_id;
    double min_ade = 0.0;
    double min_fde = 0.0;
    bool miss = false;
};

struct MetricReport {
    int scenes = 0;
    double min_ade = 0.0;
    double min_fde = 0.0;
    double miss_rate = 0.0;
    double map_simplified = 0.0;
    double miss_threshold = 2.0;
    std::vector<SceneMetrics> per_scene;
};

MetricReport evaluate(const std::vector<EvalItem>& items, const std::vector<std::string>& scene_ids, double threshold);

// Flat key=value report.
std::string format_report(const MetricReport& report);
// Appends one row to a run-history CSV, writing the header when the file is new.
void append_history(const std::filesystem::path& csv, const std::string& run, const std::string& corpus,
                    const MetricReport& report);
inline constexpr const char* kHistoryHeader = "run,corpus,scenes,min_ade,min_fde,miss_rate,map_simplified,miss_threshold";

// Prediction dump, version 1:
//   jointmotion-predictions v1
//   predictions <scene count>
//   scene id=<id> k=<k> agents=<n> steps=<T>
//   confidences [k] ...
//   mode index=<m>
//   agent id=<id>
//   trajectory [T,2] ...
//   ...
//   end
struct ScenePrediction {
    std::string scene_id;
    std::vector<int> agent_ids;
    JointPrediction pred;
};
std::string serialize_predictions(const std::vector<ScenePrediction>& preds);
std::vector<ScenePrediction> deserialize_predictions(const std::string& text, const std::string& source = "<predictions>");

} // namespace jm
