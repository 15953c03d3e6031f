#include "jointmotion/trainer.hpp"

#include "jointmotion/errors.hpp"
#include "jointmotion/optim.hpp"
#include "jointmotion/synthetic.hpp"
#include "jointmotion/textio.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace jm {

namespace {

int focal_for(uint64_t mask_seed) { return static_cast<int>(mask_seed % 9973); }

uint64_t scene_mask_seed(uint64_t base, size_t i) { return derive_seed(base, 0x5eed, i); }

void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, uint64_t seed, int epoch, int min_batch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0xe90c, static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < n; i += batch_size)
        batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
    // A trailing batch too small for the correlation estimate joins the previous one.
    if (batches.size() > 1 && static_cast<int>(batches.back().size()) < min_batch) {
        auto tail = std::move(batches.back());
        batches.pop_back();
        batches.back().insert(batches.back().end(), tail.begin(), tail.end());
    }
    return batches;
}

struct SceneForward {
    PretrainForward fwd;
    MaskSpec spec;
};

SceneForward forward_scene(const JointMotionModel& model, const TrafficScene& scene, const RunConfig& cfg,
                           uint64_t mask_seed) {
    SceneForward out;
    const bool mpm = cfg.train.use_mpm;
    if (mpm) out.spec = sample_mask(model.token_validity(scene), cfg.mpm.mask_ratio, mask_seed);
    out.fwd = model.pretrain_forward(scene, mpm ? &out.spec : nullptr, cfg.mpm, focal_for(mask_seed));
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    Tensor out(static_cast<int>(rows.size()), rows.front().cols());
    for (size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].flat().begin(), rows[i].flat().end(), out.row(i).begin());
    return out;
}

void check_objectives(const JointMotionModel& model, const RunConfig& cfg) {
    if (!cfg.train.use_cme && !cfg.train.use_mpm) throw ConfigError("pretraining needs at least one objective (cme, mpm)");
    if (cfg.train.use_cme && !model.parts().cme) throw ConfigError("model was built without CME projectors");
    if (cfg.train.use_mpm && !model.parts().mpm) throw ConfigError("model was built without MPM decoders");
}

} // namespace

double RunRecord::epoch_mean(int epoch, double PretrainStep::*field) const {
    double s = 0.0;
    int n = 0;
    for (const auto& st : pretrain)
        if (st.epoch == epoch) {
            s += st.*field;
            ++n;
        }
    if (n == 0) throw std::out_of_range("no pretraining steps logged for epoch " + std::to_string(epoch));
    return s / n;
}

BatchLosses pretrain_batch_gradients(JointMotionModel& model, const std::vector<const TrafficScene*>& batch,
                                     const RunConfig& cfg, uint64_t mask_seed_base) {
    check_objectives(model, cfg);
    const int b = static_cast<int>(batch.size());
    if (b == 0) throw std::invalid_argument("pretrain_batch_gradients: empty batch");
    const bool cme = cfg.train.use_cme, mpm = cfg.train.use_mpm;
    if (cme && b < 2) throw ConfigError("the CME objective needs batches of at least 2 scenes");
    BatchLosses out;

    // Phase 1: pooled embeddings without a graph, then the exact gradient of
    // lambda_cme * L_CME with respect to them (and to the projectors).
    Tensor g_motion, g_env;
    if (cme) {
        std::vector<Tensor> pm, pe;
        {
            NoGradGuard guard;
            for (int i = 0; i < b; ++i) {
                const SceneForward f = forward_scene(model, *batch[i], cfg, scene_mask_seed(mask_seed_base, i));
                pm.push_back(f.fwd.pooled_motion.value());
                pe.push_back(f.fwd.pooled_env.value());
            }
        }
        Var vm(stack_rows(pm), true), ve(stack_rows(pe), true);
        const SceneEmbeddingPair pair = model.projectors()->project(vm, ve);
        const Var loss = cme_loss(cross_correlation(pair, cfg.cme.epsilon_std), cfg.cme.lambda_red);
        out.l_cme = loss.item();
        require_finite(out.l_cme, "L_CME");
        backward(loss, Tensor(1, 1, cfg.train.lambda_cme));
        g_motion = vm.grad();
        g_env = ve.grad();
    }

    // Phase 2: per-scene graphs. The surrogate <g, pooled> reproduces the CME
    // gradient through the encoder exactly; MPM enters with weight 1/B.
    for (int i = 0; i < b; ++i) {
        const SceneForward f = forward_scene(model, *batch[i], cfg, scene_mask_seed(mask_seed_base, i));
        Var surrogate;
        if (mpm) {
            const MpmLosses& l = *f.fwd.mpm;
            for (int m = 0; m < kModalityCount; ++m) out.per_modality[m] += l.per_modality[m].item() / b;
            out.l_mpm += l.total.item() / b;
            surrogate = ops::scale(l.total, 1.0 / b);
        }
        if (cme) {
            const Tensor gm = Tensor::row_vector({g_motion.row(i).begin(), g_motion.row(i).end()});
            const Tensor ge = Tensor::row_vector({g_env.row(i).begin(), g_env.row(i).end()});
            const Var term = ops::add(ops::weighted_sum(f.fwd.pooled_motion, gm), ops::weighted_sum(f.fwd.pooled_env, ge));
            surrogate = surrogate.defined() ? ops::add(surrogate, term) : term;
        }
        if (surrogate.requires_grad()) backward(surrogate);
    }
    require_finite(out.l_mpm, "L_MPM");
    out.l_joint = (cme ? cfg.train.lambda_cme * out.l_cme : 0.0) + (mpm ? out.l_mpm : 0.0);
    return out;
}

double pretrain_batch_loss(const JointMotionModel& model, const std::vector<const TrafficScene*>& batch,
                           const RunConfig& cfg, uint64_t mask_seed_base) {
    check_objectives(model, cfg);
    NoGradGuard guard;
    const int b = static_cast<int>(batch.size());
    std::vector<Var> pm, pe;
    double mpm = 0.0;
    for (int i = 0; i < b; ++i) {
        const SceneForward f = forward_scene(model, *batch[i], cfg, scene_mask_seed(mask_seed_base, i));
        if (cfg.train.use_mpm) mpm += f.fwd.mpm->total.item() / b;
        if (cfg.train.use_cme) {
            pm.push_back(f.fwd.pooled_motion);
            pe.push_back(f.fwd.pooled_env);
        }
    }
    double total = cfg.train.use_mpm ? mpm : 0.0;
    if (cfg.train.use_cme) {
        const int w = model.config().width;
        const SceneEmbeddingPair pair = model.projectors()->project(ops::concat_rows(pm, w), ops::concat_rows(pe, w));
        total += cfg.train.lambda_cme * cme_loss(cross_correlation(pair, cfg.cme.epsilon_std), cfg.cme.lambda_red).item();
    }
    return total;
}

RunRecord pretrain(JointMotionModel& model, const std::vector<TrafficScene>& corpus, const RunConfig& cfg,
                   const EpochCallback& on_epoch) {
    check_objectives(model, cfg);
    if (corpus.empty()) throw DataError("pretraining corpus is empty");
    for (const auto& s : corpus)
        if (!(s.dialect == model.config().dialect))
            throw DataError("corpus scene " + s.scene_id + " has dialect " + s.dialect.name + ", model expects " +
                            model.config().dialect.name);
    if (cfg.train.use_cme && (cfg.train.batch_size < 2 || corpus.size() < 2))
        throw ConfigError("the CME objective needs train.batch_size >= 2 and at least 2 scenes");

    RunRecord rec;
    rec.kind = "pretrain";
    rec.has_cme = cfg.train.use_cme;
    rec.has_mpm = cfg.train.use_mpm;
    AdamW opt({cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.weight_decay});
    const StepSchedule sched{cfg.train.lr, cfg.train.lr_decay, cfg.train.lr_step_epochs};
    const auto start = std::chrono::steady_clock::now();
    int step = 0;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const auto batches = make_batches(static_cast<int>(corpus.size()), cfg.train.batch_size, cfg.train.seed, epoch,
                                          cfg.train.use_cme ? 2 : 1);
        const double lr = sched.lr(epoch);
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            std::vector<const TrafficScene*> batch;
            for (int i : batches[bi]) batch.push_back(&corpus[i]);
            model.params().zero_grad();
            const BatchLosses l = pretrain_batch_gradients(
                model, batch, cfg, derive_seed(cfg.train.seed, 0xa11, static_cast<uint64_t>(epoch), bi));
            require_finite(clip_grad_norm(model.params(), cfg.train.clip_norm), "gradient norm");
            opt.step(model.params(), lr);

            PretrainStep s;
            s.step = step++;
            s.epoch = epoch;
            s.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            s.lr = lr;
            s.l_cme = l.l_cme;
            s.l_a = l.per_modality[0];
            s.l_l = l.per_modality[1];
            s.l_tl = l.per_modality[2];
            s.l_mpm = l.l_mpm;
            s.l_joint = l.l_joint;
            rec.pretrain.push_back(s);
        }
        if (on_epoch) on_epoch(epoch, model);
    }
    return rec;
}

std::vector<ScenePrediction> predict_scenes(const JointMotionModel& model, const std::vector<TrafficScene>& scenes) {
    std::vector<ScenePrediction> out(scenes.size());
    std::vector<std::string> errors(scenes.size());
    const HeadConfig& h = model.config().head;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
        NoGradGuard guard;
        try {
            const JointPrediction raw = model.predict(scenes[i]).to_prediction();
            out[i].scene_id = scenes[i].scene_id;
            for (const auto& a : scenes[i].agents) out[i].agent_ids.push_back(a.agent_id);
            out[i].pred = postprocess_confidences(raw, h.redundancy_threshold, h.redundancy_penalty);
        } catch (const std::exception& e) {
            errors[i] = scenes[i].scene_id + ": " + e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError(e);
    return out;
}

MetricReport evaluate_predictions(const std::vector<ScenePrediction>& preds, const std::vector<TrafficScene>& scenes,
                                  double threshold) {
    if (preds.size() != scenes.size()) throw DataError("prediction count does not match scene count");
    std::vector<EvalItem> items;
    std::vector<std::string> ids;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].scene_id != scenes[i].scene_id)
            throw DataError("prediction for " + preds[i].scene_id + " paired with scene " + scenes[i].scene_id);
        items.push_back({&preds[i].pred, &scenes[i].futures});
        ids.push_back(scenes[i].scene_id);
    }
    return evaluate(items, ids, threshold);
}

RunRecord finetune(JointMotionModel& model, const std::vector<TrafficScene>& train,
                   const std::vector<TrafficScene>& val, const RunConfig& cfg, const EpochCallback& on_epoch) {
    if (!model.parts().head) throw ConfigError("fine-tuning needs a model with a prediction head");
    if (train.empty()) throw DataError("fine-tuning corpus is empty");
    for (const auto* set : {&train, &val})
        for (const auto& s : *set)
            if (!(s.dialect == model.config().dialect))
                throw DataError("scene " + s.scene_id + " has dialect " + s.dialect.name + ", model expects " +
                                model.config().dialect.name);
    RunRecord rec;
    rec.kind = "finetune";
    AdamW opt({cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.weight_decay});
    const StepSchedule sched{cfg.train.lr, cfg.train.lr_decay, cfg.train.lr_step_epochs};
    const HeadConfig& head = model.config().head;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    int step = 0;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const auto batches =
            make_batches(static_cast<int>(train.size()), cfg.train.batch_size, cfg.train.seed, epoch, 1);
        const double lr = sched.lr(epoch);
        for (const auto& batch : batches) {
            model.params().zero_grad();
            FinetuneStep s;
            const double inv_b = 1.0 / static_cast<double>(batch.size());
            for (int i : batch) {
                const HardAssignment ha = hard_assignment_loss(model.predict(train[i]), train[i].futures, head);
                s.loss += ha.loss.item() * inv_b;
                s.regression += ha.regression.item() * inv_b;
                s.classification += ha.classification.item() * inv_b;
                backward(ops::scale(ha.loss, inv_b));
            }
            require_finite(s.loss, "fine-tuning loss");
            require_finite(clip_grad_norm(model.params(), cfg.train.clip_norm), "gradient norm");
            opt.step(model.params(), lr);
            s.step = step++;
            s.epoch = epoch;
            s.lr = lr;
            s.wall_time = elapsed();
            rec.finetune.push_back(s);
        }
        if (!val.empty()) {
            const MetricReport r = evaluate_predictions(predict_scenes(model, val), val, cfg.miss_threshold);
            rec.validation.push_back({epoch, elapsed(), r.min_ade, r.min_fde, r.miss_rate, r.map_simplified});
        }
        if (on_epoch) on_epoch(epoch, model);
    }
    return rec;
}

FinetuneModel make_finetune_model(const RunConfig& cfg, const Checkpoint* init) {
    FinetuneModel out;
    ModelConfig mc = cfg.model;
    if (init) {
        apply_model_meta(mc, init->meta);
        mc.dialect = cfg.model.dialect;
        mc.head = cfg.model.head;
    }
    out.model = std::make_unique<JointMotionModel>(mc, ModelParts{false, false, true}, derive_seed(cfg.train.seed, 0xf1e));
    if (init) out.report = load_parameters(out.model->params(), *init);
    return out;
}

FinetuneModel make_finetune_model(const RunConfig& cfg) {
    if (cfg.init == "scratch") return make_finetune_model(cfg, nullptr);
    const Checkpoint ckpt = load_checkpoint(cfg.init);
    return make_finetune_model(cfg, &ckpt);
}

std::vector<TrafficScene> generate_split(const DataConfig& data, uint64_t first_seed, int count) {
    return generate_corpus(first_seed, count, dialect_by_name(data.dialect), {data.agents, data.lanes, data.lights},
                           {data.lane_points, data.dt});
}

// --- record tables -----------------------------------------------------------

namespace {

using textio::format_double;

struct Column {
    std::string name;
    double PretrainStep::*field;
};

std::vector<Column> pretrain_columns(const RunRecord& r) {
    std::vector<Column> cols;
    if (r.has_cme) cols.push_back({"L_CME", &PretrainStep::l_cme});
    if (r.has_mpm) {
        cols.push_back({"L_A", &PretrainStep::l_a});
        cols.push_back({"L_L", &PretrainStep::l_l});
        cols.push_back({"L_TL", &PretrainStep::l_tl});
        cols.push_back({"L_MPM", &PretrainStep::l_mpm});
    }
    cols.push_back({"L_JointMotion", &PretrainStep::l_joint});
    return cols;
}

} // namespace

std::string pretrain_csv(const RunRecord& r) {
    std::ostringstream os;
    const auto cols = pretrain_columns(r);
    os << "step,epoch,wall_time,lr";
    for (const auto& c : cols) os << ',' << c.name;
    os << '\n';
    for (const auto& s : r.pretrain) {
        os << s.step << ',' << s.epoch << ',' << format_double(s.wall_time) << ',' << format_double(s.lr);
        for (const auto& c : cols) os << ',' << format_double(s.*c.field);
        os << '\n';
    }
    return os.str();
}

std::string finetune_csv(const RunRecord& r) {
    std::ostringstream os;
    os << "step,epoch,wall_time,lr,loss,regression,classification\n";
    for (const auto& s : r.finetune)
        os << s.step << ',' << s.epoch << ',' << format_double(s.wall_time) << ',' << format_double(s.lr) << ','
           << format_double(s.loss) << ',' << format_double(s.regression) << ',' << format_double(s.classification)
           << '\n';
    return os.str();
}

std::string validation_csv(const RunRecord& r) {
    std::ostringstream os;
    os << "epoch,wall_time,min_ade,min_fde,miss_rate,map_simplified\n";
    for (const auto& v : r.validation)
        os << v.epoch << ',' << format_double(v.wall_time) << ',' << format_double(v.min_ade) << ','
           << format_double(v.min_fde) << ',' << format_double(v.miss_rate) << ',' << format_double(v.map_simplified)
           << '\n';
    return os.str();
}

RunRecord parse_record_csv(const std::string& text, const std::string& kind, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError(source + ": empty record file");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string h;
        while (std::getline(ss, h, ',')) header.push_back(h);
    }
    RunRecord r;
    r.kind = kind;
    if (kind == "pretrain") {
        r.has_cme = std::find(header.begin(), header.end(), "L_CME") != header.end();
        r.has_mpm = std::find(header.begin(), header.end(), "L_MPM") != header.end();
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (cells.size() != header.size())
            throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " cells");
        const std::string where = source + ":" + std::to_string(line_no);
        auto num = [&](size_t i) { return textio::parse_double(cells[i], where + " " + header[i]); };
        if (kind == "pretrain") {
            PretrainStep s;
            for (size_t i = 0; i < header.size(); ++i) {
                const auto& h = header[i];
                const double v = num(i);
                if (h == "step") s.step = static_cast<int>(v);
                else if (h == "epoch") s.epoch = static_cast<int>(v);
                else if (h == "wall_time") s.wall_time = v;
                else if (h == "lr") s.lr = v;
                else if (h == "L_CME") s.l_cme = v;
                else if (h == "L_A") s.l_a = v;
                else if (h == "L_L") s.l_l = v;
                else if (h == "L_TL") s.l_tl = v;
                else if (h == "L_MPM") s.l_mpm = v;
                else if (h == "L_JointMotion") s.l_joint = v;
                else throw DataError(where + ": unknown column " + h);
            }
            r.pretrain.push_back(s);
        } else if (kind == "validation") {
            ValidationRow v;
            for (size_t i = 0; i < header.size(); ++i) {
                const auto& h = header[i];
                const double x = num(i);
                if (h == "epoch") v.epoch = static_cast<int>(x);
                else if (h == "wall_time") v.wall_time = x;
                else if (h == "min_ade") v.min_ade = x;
                else if (h == "min_fde") v.min_fde = x;
                else if (h == "miss_rate") v.miss_rate = x;
                else if (h == "map_simplified") v.map_simplified = x;
                else throw DataError(where + ": unknown column " + h);
            }
            r.validation.push_back(v);
        } else {
            throw std::invalid_argument("parse_record_csv: unknown kind " + kind);
        }
    }
    return r;
}

} // namespace jm
