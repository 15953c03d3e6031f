#pragma once

// Run configuration. The file format is one `key = value` per line with
// dotted keys; `#` starts a comment. Command-line overrides use the same
// `key=value` form and win over the file. Unknown keys and unparsable values
// raise ConfigError.

#include "jointmotion/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace jm {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>");
// Each override must look like key=value.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides);

struct DataConfig {
    std::string dialect = "W";
    int scenes = 512;
    uint64_t first_seed = 0;
    int val_scenes = 64;
    uint64_t val_first_seed = 1000000;
    int agents = 4;
    int lanes = 6;
    int lights = 2;
    int lane_points = 8;
    double dt = 0.1;
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double lr_decay = 0.5;
    int lr_step_epochs = 25;
    double clip_norm = 1.0;
    uint64_t seed = 0;
    bool use_cme = true;
    bool use_mpm = true;
    double lambda_cme = 0.01;
    int checkpoint_every = 0; // epochs; 0 writes only the final checkpoint
};

struct RunConfig {
    std::string name = "run";
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    CmeConfig cme;
    MpmConfig mpm;
    double miss_threshold = 2.0;
    std::string init = "scratch"; // fine-tuning: scratch or a checkpoint path
};

// Pretraining defaults: 20 epochs, 512 scenes.
RunConfig default_pretrain_config();
// Fine-tuning defaults: 30 epochs, 256 scenes.
RunConfig default_finetune_config();

// Applies every key in kv to cfg (ConfigError on unknown keys or bad values),
// then validates the result.
void apply_config(RunConfig& cfg, const KeyValues& kv);
void validate_config(const RunConfig& cfg);
std::vector<std::string> known_config_keys();

// Architecture keys stored in checkpoints so a model can be rebuilt.
KeyValues model_meta(const ModelConfig& m);
void apply_model_meta(ModelConfig& m, const KeyValues& meta);

std::string objectives_string(const TrainConfig& t);

} // namespace jm
