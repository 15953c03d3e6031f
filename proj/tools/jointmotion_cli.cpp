// jointmotion: generate corpora, pre-train, fine-tune, evaluate and plot.
//
// Every run writes into $JOINTMOTION_OUTPUT_ROOT/<run.name>/ (default root
// ./runs). Exit codes: 0 success, 1 configuration error, 2 data error,
// 3 numeric failure.

#include "jointmotion/errors.hpp"
#include "jointmotion/plot.hpp"
#include "jointmotion/scene_io.hpp"
#include "jointmotion/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace jm;

namespace {

struct Options {
    std::string config_file;
    std::vector<std::string> overrides;
    bool overwrite = false;
    std::string corpus;
    std::string val_corpus;
    std::string out;
    std::string split = "train";
    std::string checkpoint;
    std::vector<std::string> pretrain_records;
    std::vector<std::string> validation_records;
};

fs::path output_root() {
    const char* env = std::getenv("JOINTMOTION_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("runs");
}

KeyValues load_key_values(const Options& o) {
    KeyValues kv;
    if (!o.config_file.empty()) {
        std::string text;
        try {
            text = read_text_file(o.config_file);
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
        kv = parse_key_values(text, o.config_file);
    }
    apply_overrides(kv, o.overrides);
    return kv;
}

std::string dump_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

fs::path run_dir(const RunConfig& cfg) {
    const fs::path dir = output_root() / cfg.name;
    fs::create_directories(dir);
    return dir;
}

std::vector<TrafficScene> load_corpus_for(const std::string& dir, const RunConfig& cfg) {
    if (dir.empty()) throw ConfigError("--corpus is required");
    CorpusManifest manifest;
    auto scenes = read_corpus(dir, &manifest);
    if (scenes.empty()) throw DataError("corpus " + dir + " is empty");
    if (!(manifest.dialect == cfg.model.dialect))
        throw DataError("corpus " + dir + " is " + manifest.dialect.name + " but the run is configured for " +
                        cfg.model.dialect.name);
    return scenes;
}

KeyValues checkpoint_meta(const JointMotionModel& model, const RunConfig& cfg, const std::string& kind) {
    KeyValues meta = model_meta(model.config());
    meta["kind"] = kind;
    meta["run"] = cfg.name;
    if (kind == "pretrain") meta["objectives"] = objectives_string(cfg.train);
    return meta;
}

void save_model(const fs::path& path, const JointMotionModel& model, const RunConfig& cfg, const std::string& kind) {
    save_checkpoint(path, snapshot(model.params(), checkpoint_meta(model, cfg, kind)));
}

EpochCallback cadence_saver(const fs::path& dir, const RunConfig& cfg, const std::string& kind) {
    return [dir, cfg, kind](int epoch, const JointMotionModel& model) {
        const int every = cfg.train.checkpoint_every;
        if (every > 0 && (epoch + 1) % every == 0 && epoch + 1 < cfg.train.epochs)
            save_model(dir / ("checkpoint-epoch" + std::to_string(epoch + 1) + ".txt"), model, cfg, kind);
        std::cerr << kind << " epoch " << epoch + 1 << "/" << cfg.train.epochs << " done\n";
    };
}

int cmd_generate(const Options& o) {
    RunConfig cfg = default_pretrain_config();
    apply_config(cfg, load_key_values(o));
    if (o.split != "train" && o.split != "val") throw ConfigError("--split must be train or val");
    const bool val = o.split == "val";
    const uint64_t first = val ? cfg.data.val_first_seed : cfg.data.first_seed;
    const int count = val ? cfg.data.val_scenes : cfg.data.scenes;
    const fs::path out =
        o.out.empty() ? output_root() / ("corpus-" + cfg.data.dialect + "-" + o.split) : fs::path(o.out);
    const auto scenes = generate_split(cfg.data, first, count);
    std::vector<uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(first + static_cast<uint64_t>(i));
    write_corpus(out, scenes, seeds, o.overwrite);
    std::cout << "wrote " << scenes.size() << " scenes to " << out.string() << "\n";
    return 0;
}

int cmd_pretrain(const Options& o) {
    RunConfig cfg = default_pretrain_config();
    const KeyValues kv = load_key_values(o);
    apply_config(cfg, kv);
    const auto corpus = load_corpus_for(o.corpus, cfg);
    const fs::path dir = run_dir(cfg);
    write_text_file(dir / "config.txt", dump_key_values(kv));

    JointMotionModel model(cfg.model, ModelParts{cfg.train.use_cme, cfg.train.use_mpm, false}, cfg.train.seed);
    const RunRecord rec = pretrain(model, corpus, cfg, cadence_saver(dir, cfg, "pretrain"));
    write_text_file(dir / "pretrain.csv", pretrain_csv(rec));
    save_model(dir / "checkpoint.txt", model, cfg, "pretrain");
    std::cout << "pretrained " << rec.pretrain.size() << " steps; checkpoint " << (dir / "checkpoint.txt").string()
              << "\n";
    return 0;
}

int cmd_finetune(const Options& o) {
    RunConfig cfg = default_finetune_config();
    const KeyValues kv = load_key_values(o);
    apply_config(cfg, kv);
    const auto train = load_corpus_for(o.corpus, cfg);
    std::vector<TrafficScene> val;
    if (!o.val_corpus.empty()) val = load_corpus_for(o.val_corpus, cfg);
    const fs::path dir = run_dir(cfg);
    write_text_file(dir / "config.txt", dump_key_values(kv));

    FinetuneModel fm = make_finetune_model(cfg);
    write_text_file(dir / "load_report.txt", fm.report ? fm.report->summary() : "init scratch\n");
    const RunRecord rec = finetune(*fm.model, train, val, cfg, cadence_saver(dir, cfg, "finetune"));
    write_text_file(dir / "finetune.csv", finetune_csv(rec));
    if (!rec.validation.empty()) write_text_file(dir / "validation.csv", validation_csv(rec));
    save_model(dir / "checkpoint.txt", *fm.model, cfg, "finetune");
    if (!rec.validation.empty())
        std::cout << "final validation min_fde " << rec.validation.back().min_fde << "\n";
    std::cout << "checkpoint " << (dir / "checkpoint.txt").string() << "\n";
    return 0;
}

int cmd_eval(const Options& o) {
    RunConfig cfg = default_finetune_config();
    const KeyValues kv = load_key_values(o);
    apply_config(cfg, kv);
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    apply_model_meta(cfg.model, ckpt.meta);
    const auto scenes = load_corpus_for(o.corpus, cfg);
    FinetuneModel fm = make_finetune_model(cfg, &ckpt);
    if (!fm.report->fresh.empty() || !fm.report->dropped.empty() || !fm.report->reinitialized.empty())
        throw DataError(o.checkpoint + " is not a fine-tuned checkpoint: " + fm.report->summary());

    const auto preds = predict_scenes(*fm.model, scenes);
    const MetricReport report = evaluate_predictions(preds, scenes, cfg.miss_threshold);
    const fs::path dir = run_dir(cfg);
    write_text_file(dir / "metrics.txt", format_report(report));
    write_text_file(dir / "predictions.txt", serialize_predictions(preds));
    append_history(output_root() / "history.csv", cfg.name, o.corpus, report);
    std::cout << "min_ade " << report.min_ade << " min_fde " << report.min_fde << " miss_rate " << report.miss_rate
              << " map_simplified " << report.map_simplified << "\n";
    return 0;
}

std::vector<NamedRecord> read_records(const std::vector<std::string>& specs, const std::string& kind) {
    std::vector<NamedRecord> out;
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("record '" + spec + "' must look like name=file.csv");
        const std::string file = spec.substr(eq + 1);
        out.push_back({spec.substr(0, eq), parse_record_csv(read_text_file(file), kind, file)});
    }
    return out;
}

int cmd_plot(const Options& o) {
    RunConfig cfg = default_pretrain_config();
    apply_config(cfg, load_key_values(o));
    if (o.pretrain_records.empty() && o.validation_records.empty())
        throw ConfigError("plot needs --pretrain and/or --validation records");
    const fs::path dir = o.out.empty() ? run_dir(cfg) / "plots" : fs::path(o.out);
    std::vector<fs::path> written;
    auto keep = [&](const std::vector<fs::path>& paths) { written.insert(written.end(), paths.begin(), paths.end()); };
    if (!o.pretrain_records.empty()) {
        const auto runs = read_records(o.pretrain_records, "pretrain");
        for (const char* col : {"L_TL", "L_A", "L_L"}) keep(write_plot(dir, std::string("loss_") + col, modality_loss_plot(runs, col)));
    }
    if (!o.validation_records.empty()) {
        const auto runs = read_records(o.validation_records, "validation");
        for (const char* metric : {"min_fde", "map_simplified"})
            keep(write_plot(dir, std::string(metric) + "_over_time", metric_over_time_plot(runs, metric)));
    }
    for (const auto& p : written) std::cout << p.string() << "\n";
    return 0;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config_file, "key = value run configuration file");
    sub->add_option("overrides", o.overrides, "key=value overrides applied after the config file");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"JointMotion pre-training and fine-tuning harness"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("generate", "write a synthetic corpus (manifest + scene files)");
    add_common(gen, o);
    gen->add_option("--out", o.out, "corpus directory (default <root>/corpus-<dialect>-<split>)");
    gen->add_option("--split", o.split, "train (data.scenes from data.first_seed) or val");
    gen->add_flag("--overwrite", o.overwrite, "replace an existing corpus");

    auto* pre = app.add_subcommand("pretrain", "pre-train an encoder with the configured objectives");
    add_common(pre, o);
    pre->add_option("--corpus", o.corpus, "training corpus directory")->required();

    auto* fin = app.add_subcommand("finetune", "train the prediction head; finetune.init picks scratch or a checkpoint");
    add_common(fin, o);
    fin->add_option("--corpus", o.corpus, "training corpus directory")->required();
    fin->add_option("--val", o.val_corpus, "validation corpus evaluated after every epoch");

    auto* ev = app.add_subcommand("eval", "predict a corpus and report joint metrics");
    add_common(ev, o);
    ev->add_option("--checkpoint", o.checkpoint, "fine-tuned checkpoint")->required();
    ev->add_option("--corpus", o.corpus, "evaluation corpus directory")->required();

    auto* plot = app.add_subcommand("plot", "loss curves and metric-over-time figures with their tables");
    add_common(plot, o);
    plot->add_option("--pretrain", o.pretrain_records, "name=pretrain.csv (repeatable)")->allow_extra_args(false);
    plot->add_option("--validation", o.validation_records, "name=validation.csv (repeatable)")->allow_extra_args(false);
    plot->add_option("--out", o.out, "output directory (default <root>/<run.name>/plots)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate(o);
        if (pre->parsed()) return cmd_pretrain(o);
        if (fin->parsed()) return cmd_finetune(o);
        if (ev->parsed()) return cmd_eval(o);
        if (plot->parsed()) return cmd_plot(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
