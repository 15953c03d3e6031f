#include "jointmotion/config.hpp"

#include "jointmotion/errors.hpp"
#include "jointmotion/textio.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace jm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

#define JM_INT(field) [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_int(k, v); }
#define JM_U64(field) [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }
#define JM_DBL(field) [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }
#define JM_STR(field) [](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"run.name", JM_STR(name)},
        {"data.dialect", JM_STR(data.dialect)},
        {"data.scenes", JM_INT(data.scenes)},
        {"data.first_seed", JM_U64(data.first_seed)},
        {"data.val_scenes", JM_INT(data.val_scenes)},
        {"data.val_first_seed", JM_U64(data.val_first_seed)},
        {"data.agents", JM_INT(data.agents)},
        {"data.lanes", JM_INT(data.lanes)},
        {"data.lights", JM_INT(data.lights)},
        {"data.lane_points", JM_INT(data.lane_points)},
        {"data.dt", JM_DBL(data.dt)},
        {"model.fusion", [](RunConfig& c, const std::string&, const std::string& v) { c.model.fusion = fusion_by_name(v); }},
        {"model.width", JM_INT(model.width)},
        {"model.heads", JM_INT(model.heads)},
        {"model.window", JM_INT(model.window)},
        {"model.ff_hidden", JM_INT(model.ff_hidden)},
        {"model.agent_depth", JM_INT(model.agent_depth)},
        {"model.lane_depth", JM_INT(model.lane_depth)},
        {"model.light_depth", JM_INT(model.light_depth)},
        {"model.latents", JM_INT(model.latents)},
        {"model.latent_depth", JM_INT(model.latent_depth)},
        {"model.decoder_depth", JM_INT(model.decoder_depth)},
        {"model.projector_hidden", JM_INT(model.projector_hidden)},
        {"model.projector_output", JM_INT(model.projector_output)},
        {"head.k", JM_INT(model.head.k)},
        {"head.huber_delta", JM_DBL(model.head.huber_delta)},
        {"head.classification_weight", JM_DBL(model.head.classification_weight)},
        {"head.redundancy_threshold", JM_DBL(model.head.redundancy_threshold)},
        {"head.redundancy_penalty", JM_DBL(model.head.redundancy_penalty)},
        {"train.epochs", JM_INT(train.epochs)},
        {"train.batch_size", JM_INT(train.batch_size)},
        {"train.lr", JM_DBL(train.lr)},
        {"train.weight_decay", JM_DBL(train.weight_decay)},
        {"train.lr_decay", JM_DBL(train.lr_decay)},
        {"train.lr_step_epochs", JM_INT(train.lr_step_epochs)},
        {"train.clip_norm", JM_DBL(train.clip_norm)},
        {"train.seed", JM_U64(train.seed)},
        {"train.lambda_cme", JM_DBL(train.lambda_cme)},
        {"train.checkpoint_every", JM_INT(train.checkpoint_every)},
        {"train.objectives",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.use_cme = c.train.use_mpm = false;
             std::stringstream ss(v);
             std::string part;
             while (std::getline(ss, part, ',')) {
                 part = trim(part);
                 if (part == "cme") c.train.use_cme = true;
                 else if (part == "mpm") c.train.use_mpm = true;
                 else if (!part.empty()) throw ConfigError(k + ": unknown objective '" + part + "'");
             }
         }},
        {"cme.lambda_red", JM_DBL(cme.lambda_red)},
        {"cme.epsilon_std", JM_DBL(cme.epsilon_std)},
        {"mpm.lambda_agent", JM_DBL(mpm.lambda[0])},
        {"mpm.lambda_lane", JM_DBL(mpm.lambda[1])},
        {"mpm.lambda_light", JM_DBL(mpm.lambda[2])},
        {"mpm.huber_delta", JM_DBL(mpm.huber_delta)},
        {"mpm.mask_ratio",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             const double r = to_double(k, v);
             c.mpm.mask_ratio = {r, r, r};
         }},
        {"mpm.mask_ratio_agent", JM_DBL(mpm.mask_ratio[0])},
        {"mpm.mask_ratio_lane", JM_DBL(mpm.mask_ratio[1])},
        {"mpm.mask_ratio_light", JM_DBL(mpm.mask_ratio[2])},
        {"mpm.loss_scope",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "masked") c.mpm.scope = LossScope::masked_only;
             else if (v == "all") c.mpm.scope = LossScope::all_valid;
             else throw ConfigError(k + ": expected masked or all");
         }},
        {"eval.miss_threshold", JM_DBL(miss_threshold)},
        {"finetune.init", JM_STR(init)},
    };
    return table;
}

#undef JM_INT
#undef JM_U64
#undef JM_DBL
#undef JM_STR

} // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(n) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(source + ":" + std::to_string(n) + ": empty key or value");
        kv[key] = value;
    }
    return kv;
}

void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == o.size())
            throw ConfigError("override '" + o + "' must look like key=value");
        kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
    }
}

RunConfig default_pretrain_config() { return RunConfig{}; }

RunConfig default_finetune_config() {
    RunConfig c;
    c.data.scenes = 256;
    c.train.epochs = 30;
    return c;
}

void apply_config(RunConfig& cfg, const KeyValues& kv) {
    const auto& table = setters();
    for (const auto& [k, v] : kv) {
        const auto it = table.find(k);
        if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
        it->second(cfg, k, v);
    }
    try {
        cfg.model.dialect = dialect_by_name(cfg.data.dialect);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("data.dialect: ") + e.what());
    }
    validate_config(cfg);
}

void validate_config(const RunConfig& c) {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    need(c.data.scenes >= 1, "data.scenes must be >= 1");
    need(c.data.val_scenes >= 0, "data.val_scenes must be >= 0");
    need(c.data.agents >= 1 && c.data.lanes >= 1 && c.data.lights >= 0, "data counts must be at least (1, 1, 0)");
    need(c.data.lane_points >= 2, "data.lane_points must be >= 2");
    need(c.data.dt > 0.0, "data.dt must be > 0");
    const auto& m = c.model;
    need(m.width >= 2 && m.heads >= 1 && m.width % m.heads == 0, "model.width must be divisible by model.heads");
    need((m.width / m.heads) % 2 == 0, "model.width / model.heads must be even (rotary pairs)");
    need(m.window >= 1, "model.window must be >= 1");
    need(m.ff_hidden >= 1 && m.projector_hidden >= 1 && m.projector_output >= 1, "layer sizes must be >= 1");
    need(m.agent_depth >= 0 && m.lane_depth >= 0 && m.light_depth >= 0 && m.decoder_depth >= 0 && m.latent_depth >= 0,
         "depths must be >= 0");
    need(m.latents >= 1, "model.latents must be >= 1");
    need(m.head.k >= 1, "head.k must be >= 1");
    need(m.head.redundancy_threshold > 0.0, "head.redundancy_threshold must be > 0");
    need(m.head.redundancy_penalty > 0.0 && m.head.redundancy_penalty <= 1.0, "head.redundancy_penalty must be in (0, 1]");
    need(m.head.huber_delta > 0.0 && c.mpm.huber_delta > 0.0, "huber deltas must be > 0");
    const auto& t = c.train;
    need(t.epochs >= 1, "train.epochs must be >= 1");
    need(t.batch_size >= 1, "train.batch_size must be >= 1");
    need(t.lr > 0.0, "train.lr must be > 0");
    need(t.weight_decay >= 0.0, "train.weight_decay must be >= 0");
    need(t.lr_decay > 0.0 && t.lr_step_epochs >= 1, "scheduler needs lr_decay > 0 and lr_step_epochs >= 1");
    need(t.lambda_cme >= 0.0 && c.cme.lambda_red >= 0.0, "lambdas must be >= 0");
    need(c.cme.epsilon_std > 0.0, "cme.epsilon_std must be > 0");
    for (double l : c.mpm.lambda) need(l >= 0.0, "mpm lambdas must be >= 0");
    for (double r : c.mpm.mask_ratio) need(r >= 0.0 && r < 1.0, "mask ratios must lie in [0, 1)");
    need(c.miss_threshold > 0.0, "eval.miss_threshold must be > 0");
    need(c.train.checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
}

std::vector<std::string> known_config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
}

KeyValues model_meta(const ModelConfig& m) {
    using textio::format_double;
    return {
        {"dialect", m.dialect.name},
        {"fusion", fusion_name(m.fusion)},
        {"width", std::to_string(m.width)},
        {"heads", std::to_string(m.heads)},
        {"window", std::to_string(m.window)},
        {"ff_hidden", std::to_string(m.ff_hidden)},
        {"agent_depth", std::to_string(m.agent_depth)},
        {"lane_depth", std::to_string(m.lane_depth)},
        {"light_depth", std::to_string(m.light_depth)},
        {"latents", std::to_string(m.latents)},
        {"latent_depth", std::to_string(m.latent_depth)},
        {"decoder_depth", std::to_string(m.decoder_depth)},
        {"projector_hidden", std::to_string(m.projector_hidden)},
        {"projector_output", std::to_string(m.projector_output)},
        {"head.k", std::to_string(m.head.k)},
    };
}

void apply_model_meta(ModelConfig& m, const KeyValues& meta) {
    auto get = [&](const char* key) -> const std::string& {
        const auto it = meta.find(key);
        if (it == meta.end()) throw DataError(std::string("checkpoint meta is missing '") + key + "'");
        return it->second;
    };
    try {
        m.dialect = dialect_by_name(get("dialect"));
        m.fusion = fusion_by_name(get("fusion"));
        m.width = to_int("width", get("width"));
        m.heads = to_int("heads", get("heads"));
        m.window = to_int("window", get("window"));
        m.ff_hidden = to_int("ff_hidden", get("ff_hidden"));
        m.agent_depth = to_int("agent_depth", get("agent_depth"));
        m.lane_depth = to_int("lane_depth", get("lane_depth"));
        m.light_depth = to_int("light_depth", get("light_depth"));
        m.latents = to_int("latents", get("latents"));
        m.latent_depth = to_int("latent_depth", get("latent_depth"));
        m.decoder_depth = to_int("decoder_depth", get("decoder_depth"));
        m.projector_hidden = to_int("projector_hidden", get("projector_hidden"));
        m.projector_output = to_int("projector_output", get("projector_output"));
        if (meta.count("head.k")) m.head.k = to_int("head.k", get("head.k"));
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint meta: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("checkpoint meta: ") + e.what());
    }
}

std::string objectives_string(const TrainConfig& t) {
    if (t.use_cme && t.use_mpm) return "cme,mpm";
    if (t.use_cme) return "cme";
    if (t.use_mpm) return "mpm";
    return "none";
}

} // namespace jm
