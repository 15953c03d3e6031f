#include "jointmotion/errors.hpp"
#include "jointmotion/optim.hpp"
#include "jointmotion/plot.hpp"
#include "jointmotion/scene_io.hpp"
#include "jointmotion/textio.hpp"
#include "jointmotion/trainer.hpp"

#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

using namespace jm;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTiny{
    "data.scenes=6",         "data.val_scenes=3",        "data.agents=2",          "data.lanes=2",
    "data.lights=1",         "data.lane_points=4",       "model.width=8",          "model.heads=2",
    "model.ff_hidden=16",    "model.agent_depth=1",      "model.lane_depth=1",     "model.light_depth=1",
    "model.decoder_depth=1", "model.projector_hidden=16", "model.projector_output=8", "train.batch_size=3",
    "train.epochs=2",        "model.window=8"};

RunConfig tiny_config(RunConfig base, std::vector<std::string> extra = {}) {
    KeyValues kv;
    std::vector<std::string> all = kTiny;
    all.insert(all.end(), extra.begin(), extra.end());
    apply_overrides(kv, all);
    apply_config(base, kv);
    return base;
}

ModelParts pretrain_parts(const RunConfig& cfg) { return {cfg.train.use_cme, cfg.train.use_mpm, false}; }

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("jm_trainer_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const fs::path& root, const std::string& args) {
    const std::string cmd = "JOINTMOTION_OUTPUT_ROOT='" + root.string() + "' '" JM_CLI_PATH "' " + args +
                            " > '" + (root / "cli.log").string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string tiny_args() {
    std::string s;
    for (const auto& kv : kTiny) s += " " + kv;
    return s;
}

} // namespace

TEST_CASE("config parsing") {
    const KeyValues kv = parse_key_values("# comment\nrun.name = demo\n\n  train.lr=0.5  # trailing\n");
    CHECK(kv.at("run.name") == "demo");
    CHECK(kv.at("train.lr") == "0.5");
    CHECK_THROWS_AS(parse_key_values("just words\n"), ConfigError);

    KeyValues over = kv;
    apply_overrides(over, {"train.lr=0.25"});
    CHECK(over.at("train.lr") == "0.25");
    CHECK_THROWS_AS(apply_overrides(over, {"train.lr"}), ConfigError);

    RunConfig cfg = default_pretrain_config();
    apply_config(cfg, over);
    CHECK(cfg.name == "demo");
    CHECK(cfg.train.lr == 0.25);

    RunConfig bad = default_pretrain_config();
    CHECK_THROWS_AS(apply_config(bad, {{"train.learning_rate", "1"}}), ConfigError);
    CHECK_THROWS_AS(apply_config(bad, {{"train.epochs", "ten"}}), ConfigError);
    CHECK_THROWS_AS(apply_config(bad, {{"train.lr", "-1"}}), ConfigError);
    CHECK_THROWS_AS(apply_config(bad, {{"data.dialect", "Z"}}), ConfigError);
    CHECK_THROWS_AS(apply_config(bad, {{"model.fusion", "early"}, {"train.objectives", "cme,mpm"}}), ConfigError);

    RunConfig mpm_only = default_pretrain_config();
    apply_config(mpm_only, {{"train.objectives", "mpm"}});
    CHECK_FALSE(mpm_only.train.use_cme);
    CHECK(objectives_string(mpm_only.train) == "mpm");
    for (const auto& key : known_config_keys()) CHECK(key.find('.') != std::string::npos);
}

TEST_CASE("published hyperparameters are the defaults") {
    const RunConfig c = default_pretrain_config();
    CHECK(c.train.lambda_cme == 0.01);
    CHECK(c.cme.lambda_red == 0.005);
    CHECK(c.train.lr == 1e-4);
    CHECK(c.train.lr_decay == 0.5);
    CHECK(c.train.lr_step_epochs == 25);
    CHECK(c.mpm.lambda == std::array<double, 3>{1.0, 1.0, 1.0});
    CHECK(c.mpm.mask_ratio == std::array<double, 3>{0.6, 0.6, 0.6});
    CHECK(c.model.window == 32);
    CHECK(c.model.heads == 8);
    CHECK(c.model.width == 256);
    CHECK(c.model.ff_hidden == 1024);
    CHECK(c.model.agent_depth == 3);
    CHECK(c.model.lane_depth == 6);
    CHECK(c.model.light_depth == 1);
    CHECK(c.model.decoder_depth == 3);
    CHECK(c.model.latents == 128);
    CHECK(c.model.projector_hidden == 2048);
    CHECK(c.model.projector_output == 256);
    CHECK(c.model.head.k == 6);
    CHECK(c.train.epochs == 20);
    CHECK(c.data.scenes == 512);
    const RunConfig f = default_finetune_config();
    CHECK(f.train.epochs == 30);
    CHECK(f.data.scenes == 256);
}

TEST_CASE("step schedule") {
    const StepSchedule s{1e-4, 0.5, 25};
    for (int e = 0; e < 120; ++e) CHECK(s.lr(e) == 1e-4 * std::pow(0.5, e / 25));
    CHECK(s.lr(24) == 1e-4);
    CHECK(s.lr(25) == 5e-5);
}

TEST_CASE("pretraining logs the loss composition per step") {
    for (const char* objectives : {"cme,mpm", "mpm", "cme"}) {
        const RunConfig cfg = tiny_config(default_pretrain_config(), {std::string("train.objectives=") + objectives});
        const auto corpus = generate_split(cfg.data, cfg.data.first_seed, cfg.data.scenes);
        JointMotionModel model(cfg.model, pretrain_parts(cfg), cfg.train.seed);
        int epochs_seen = 0;
        const RunRecord r = pretrain(model, corpus, cfg, [&](int, const JointMotionModel&) { ++epochs_seen; });
        CHECK(epochs_seen == 2);
        CHECK(r.pretrain.size() == 4);
        for (const auto& s : r.pretrain) {
            const double expect = (cfg.train.use_cme ? cfg.train.lambda_cme * s.l_cme : 0.0) + (cfg.train.use_mpm ? s.l_mpm : 0.0);
            CHECK(std::abs(s.l_joint - expect) <= 1e-14 * std::max(1.0, std::abs(expect)));
            if (cfg.train.use_mpm) CHECK(s.l_mpm == doctest::Approx(s.l_a + s.l_l + s.l_tl).epsilon(1e-12));
            CHECK(std::isfinite(s.l_joint));
        }
        const std::string csv = pretrain_csv(r);
        const std::string header = csv.substr(0, csv.find('\n'));
        CHECK((header.find("L_CME") != std::string::npos) == cfg.train.use_cme);
        CHECK((header.find("L_MPM") != std::string::npos) == cfg.train.use_mpm);
        CHECK((header.find("L_TL") != std::string::npos) == cfg.train.use_mpm);
        const RunRecord back = parse_record_csv(csv, "pretrain", "<csv>");
        CHECK(back.has_cme == cfg.train.use_cme);
        CHECK(back.has_mpm == cfg.train.use_mpm);
        REQUIRE(back.pretrain.size() == r.pretrain.size());
        CHECK(back.pretrain[3].l_joint == r.pretrain[3].l_joint);
        CHECK(pretrain_csv(back) == csv);
    }
}

TEST_CASE("pretraining is reproducible across runs and thread counts") {
    const RunConfig cfg = tiny_config(default_pretrain_config());
    const auto corpus = generate_split(cfg.data, cfg.data.first_seed, cfg.data.scenes);
    auto trace = [&](int threads) {
        const int before = omp_get_max_threads();
        omp_set_num_threads(threads);
        JointMotionModel model(cfg.model, pretrain_parts(cfg), cfg.train.seed);
        const RunRecord r = pretrain(model, corpus, cfg);
        omp_set_num_threads(before);
        return r;
    };
    const RunRecord a = trace(1), b = trace(1), c = trace(4);
    REQUIRE(a.pretrain.size() == b.pretrain.size());
    REQUIRE(a.pretrain.size() == c.pretrain.size());
    for (size_t i = 0; i < a.pretrain.size(); ++i) {
        CHECK(a.pretrain[i].l_joint == b.pretrain[i].l_joint);
        CHECK(std::abs(a.pretrain[i].l_joint - c.pretrain[i].l_joint) < 1e-6);
    }
}

TEST_CASE("pretraining rejects bad inputs") {
    RunConfig cfg = tiny_config(default_pretrain_config());
    JointMotionModel model(cfg.model, pretrain_parts(cfg), 0);
    RunConfig other = cfg;
    other.data.dialect = "A";
    const auto a_corpus = generate_split(other.data, 0, 4);
    CHECK_THROWS_AS(pretrain(model, a_corpus, cfg), DataError);
    CHECK_THROWS_AS(pretrain(model, {}, cfg), DataError);
    RunConfig none = cfg;
    none.train.use_cme = none.train.use_mpm = false;
    const auto corpus = generate_split(cfg.data, 0, 4);
    CHECK_THROWS_AS(pretrain(model, corpus, none), ConfigError);
    RunConfig single = cfg;
    single.train.batch_size = 1;
    CHECK_THROWS_AS(pretrain(model, corpus, single), ConfigError);
}

TEST_CASE("checkpoint text is idempotent") {
    const RunConfig cfg = tiny_config(default_pretrain_config());
    JointMotionModel model(cfg.model, pretrain_parts(cfg), 3);
    const fs::path dir = temp_dir("ckpt");
    const Checkpoint c = snapshot(model.params(), model_meta(cfg.model));
    save_checkpoint(dir / "a.txt", c);
    const Checkpoint back = load_checkpoint(dir / "a.txt");
    save_checkpoint(dir / "b.txt", back);
    CHECK(slurp(dir / "a.txt") == slurp(dir / "b.txt"));
    CHECK(back.params == c.params);
    CHECK(back.meta == c.meta);

    ModelConfig rebuilt;
    apply_model_meta(rebuilt, back.meta);
    CHECK(rebuilt.width == 8);
    CHECK(rebuilt.projector_output == 8);

    std::string text = slurp(dir / "a.txt");
    text.replace(text.find("v1"), 2, "v7");
    CHECK_THROWS_AS(deserialize_checkpoint(text), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.txt"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("fine-tuning loader reports every parameter") {
    const RunConfig pre = tiny_config(default_pretrain_config());
    JointMotionModel pretrained(pre.model, pretrain_parts(pre), 1);
    const Checkpoint ckpt = snapshot(pretrained.params(), model_meta(pre.model));

    const RunConfig fin = tiny_config(default_finetune_config());
    FinetuneModel fm = make_finetune_model(fin, &ckpt);
    REQUIRE(fm.report);
    const LoadReport& r = *fm.report;
    CHECK(r.frozen.empty());
    CHECK(r.reinitialized.empty());
    for (const auto& n : r.dropped) CHECK((n.rfind("cme.", 0) == 0 || n.rfind("mpm.", 0) == 0));
    CHECK(std::count_if(r.dropped.begin(), r.dropped.end(), [](const std::string& n) { return n.rfind("cme.proj", 0) == 0; }) > 0);
    for (const auto& n : r.fresh) CHECK(n.rfind("head.", 0) == 0);
    CHECK(r.loaded.size() + r.dropped.size() == ckpt.params.size());
    CHECK(r.loaded.size() + r.fresh.size() == fm.model->params().all().size());
    for (const auto& n : r.loaded) CHECK(fm.model->params().get(n).value() == ckpt.params.at(n));

    // Transfer to the other dialect: the expected set is whatever changed shape.
    RunConfig to_a = fin;
    to_a.model.dialect = dialect_a();
    JointMotionModel fresh_a(to_a.model, {false, false, true}, 1);
    std::set<std::string> expected;
    for (const auto& [name, t] : ckpt.params)
        if (fresh_a.params().contains(name) && !fresh_a.params().get(name).value().same_shape(t)) expected.insert(name);
    CHECK_FALSE(expected.empty());
    FinetuneModel moved = make_finetune_model(to_a, &ckpt);
    REQUIRE(moved.report);
    CHECK(std::set<std::string>(moved.report->reinitialized.begin(), moved.report->reinitialized.end()) == expected);
    for (const auto& n : expected) CHECK(is_input_width_dependent(n));

    Checkpoint extra = ckpt;
    extra.params["enc.mystery.weight"] = Tensor(1, 1);
    CHECK_THROWS_AS(make_finetune_model(fin, &extra), DataError);
    Checkpoint reshaped = ckpt;
    reshaped.params["enc.agent.block0.attn.q.weight"] = Tensor(1, 1);
    CHECK_THROWS_AS(make_finetune_model(fin, &reshaped), DataError);
}

TEST_CASE("fine-tuning logs validation per epoch and evaluates") {
    const RunConfig cfg = tiny_config(default_finetune_config());
    const auto train = generate_split(cfg.data, cfg.data.first_seed, cfg.data.scenes);
    const auto val = generate_split(cfg.data, cfg.data.val_first_seed, cfg.data.val_scenes);
    FinetuneModel fm = make_finetune_model(cfg);
    CHECK_FALSE(fm.report);
    const RunRecord r = finetune(*fm.model, train, val, cfg);
    // Six scenes in batches of three.
    CHECK(r.finetune.size() == static_cast<size_t>(cfg.train.epochs * 2));
    REQUIRE(r.validation.size() == 2);
    CHECK(r.validation[1].epoch == 1);
    CHECK(r.validation[1].wall_time >= r.validation[0].wall_time);
    for (const auto& s : r.finetune) CHECK(std::isfinite(s.loss));

    const auto preds = predict_scenes(*fm.model, val);
    REQUIRE(preds.size() == val.size());
    for (const auto& p : preds) {
        double total = 0.0;
        for (double c : p.pred.confidences) total += c;
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
    const MetricReport m = evaluate_predictions(preds, val, cfg.miss_threshold);
    CHECK(std::isfinite(m.min_fde));
    CHECK(m.min_fde == doctest::Approx(r.validation[1].min_fde).epsilon(1e-12));

    const RunRecord back = parse_record_csv(validation_csv(r), "validation", "<csv>");
    REQUIRE(back.validation.size() == 2);
    CHECK(back.validation[1].min_fde == r.validation[1].min_fde);
}

TEST_CASE("plot tables match their records") {
    RunRecord r;
    r.kind = "pretrain";
    r.has_mpm = true;
    for (int i = 0; i < 5; ++i) r.pretrain.push_back({i, 0, 0.1 * i, 1e-4, 0.0, 1.0 / (i + 1), 2.0, 3.0 - i * 0.1, 0.0, 0.0});
    const LinePlot p = modality_loss_plot({{"JointMotion", r}}, "L_A");
    REQUIRE(p.series.size() == 1);
    CHECK(p.series[0].y.size() == 5);
    CHECK(p.series[0].y[2] == r.pretrain[2].l_a);
    const std::string table = plot_table_csv(p);
    std::istringstream in(table);
    std::string line;
    std::getline(in, line);
    CHECK(line == "series,step,L_A");
    int rows = 0;
    while (std::getline(in, line)) {
        const double y = std::stod(line.substr(line.rfind(',') + 1));
        CHECK(y == doctest::Approx(r.pretrain[rows].l_a).epsilon(1e-12));
        ++rows;
    }
    CHECK(rows == 5);
    const std::string svg = render_svg(p);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("data-series=\"JointMotion\"") != std::string::npos);
    CHECK_THROWS_AS(modality_loss_plot({{"x", r}}, "L_CME"), DataError);
    CHECK_THROWS_AS(render_svg(LinePlot{}), std::invalid_argument);
}

TEST_CASE("command-line pipeline") {
    const fs::path root = temp_dir("cli");
    const std::string tiny = tiny_args();

    // Generation is deterministic and refuses to clobber.
    REQUIRE(run_cli(root, "generate --out " + (root / "c1").string() + tiny) == 0);
    REQUIRE(run_cli(root, "generate --out " + (root / "c2").string() + tiny) == 0);
    CorpusManifest m1, m2;
    const auto s1 = read_corpus(root / "c1", &m1), s2 = read_corpus(root / "c2", &m2);
    CHECK(s1 == s2);
    CHECK(s1.size() == 6);
    for (const auto& e : m1.entries) CHECK(slurp(root / "c1" / e.file) == slurp(root / "c2" / e.file));
    CHECK(run_cli(root, "generate --out " + (root / "c1").string() + tiny) == 2);
    CHECK(run_cli(root, "generate --overwrite --out " + (root / "c1").string() + tiny) == 0);
    CHECK(run_cli(root, "generate --out " + (root / "a").string() + tiny + " data.dialect=A") == 0);
    CHECK(read_corpus(root / "a").front().lights.empty());
    REQUIRE(run_cli(root, "generate --split val --out " + (root / "v").string() + tiny) == 0);

    // Configuration and data errors map to distinct exit codes.
    CHECK(run_cli(root, "pretrain --corpus " + (root / "c1").string() + tiny + " train.nonsense=1") == 1);
    CHECK(run_cli(root, "pretrain --corpus " + (root / "c1").string() + " --config " + (root / "nope.cfg").string()) == 1);
    CHECK(run_cli(root, "pretrain --corpus " + (root / "missing").string() + tiny) == 2);
    CHECK(run_cli(root, "pretrain --corpus " + (root / "a").string() + tiny) == 2);
    CHECK(run_cli(root, "frobnicate") == 1);
    CHECK(run_cli(root, "pretrain --corpus " + (root / "c1").string() + tiny + " run.name=blowup train.lr=1e300 train.clip_norm=1e300") == 3);

    {
        std::ofstream cfg(root / "pre.cfg");
        cfg << "# tiny pretraining run\nrun.name = pre\ntrain.checkpoint_every = 1\n";
    }
    REQUIRE(run_cli(root, "pretrain --corpus " + (root / "c1").string() + " --config " + (root / "pre.cfg").string() + tiny) == 0);
    CHECK(fs::exists(root / "pre" / "checkpoint.txt"));
    CHECK(fs::exists(root / "pre" / "checkpoint-epoch1.txt"));
    CHECK(fs::exists(root / "pre" / "pretrain.csv"));
    CHECK(slurp(root / "pre" / "config.txt").find("run.name") != std::string::npos);

    REQUIRE(run_cli(root, "finetune --corpus " + (root / "c1").string() + " --val " + (root / "v").string() + tiny +
                              " run.name=fin finetune.init=" + (root / "pre" / "checkpoint.txt").string()) == 0);
    CHECK(fs::exists(root / "fin" / "validation.csv"));
    CHECK(slurp(root / "fin" / "load_report.txt").find("cme.proj") != std::string::npos);
    REQUIRE(run_cli(root, "finetune --corpus " + (root / "c1").string() + " --val " + (root / "v").string() + tiny +
                              " run.name=scratch") == 0);

    REQUIRE(run_cli(root, "eval --checkpoint " + (root / "fin" / "checkpoint.txt").string() + " --corpus " +
                              (root / "v").string() + " run.name=fin") == 0);
    const std::string metrics = slurp(root / "fin" / "metrics.txt");
    CHECK(metrics.find("min_fde=") != std::string::npos);
    CHECK(deserialize_predictions(slurp(root / "fin" / "predictions.txt")).size() == 3);
    CHECK(slurp(root / "history.csv").rfind(kHistoryHeader, 0) == 0);
    CHECK(run_cli(root, "eval --checkpoint " + (root / "pre" / "checkpoint.txt").string() + " --corpus " +
                            (root / "v").string()) == 2);

    REQUIRE(run_cli(root, "plot --out " + (root / "plots").string() + " --pretrain JointMotion=" +
                              (root / "pre" / "pretrain.csv").string() + " --validation pretrained=" +
                              (root / "fin" / "validation.csv").string() + " --validation scratch=" +
                              (root / "scratch" / "validation.csv").string() + " run.name=fin") == 0);
    for (const char* col : {"L_TL", "L_A", "L_L"}) {
        CHECK(fs::exists(root / "plots" / (std::string("loss_") + col + ".svg")));
        CHECK(fs::exists(root / "plots" / (std::string("loss_") + col + ".csv")));
    }
    CHECK(fs::exists(root / "plots" / "min_fde_over_time.svg"));
    CHECK(fs::exists(root / "plots" / "map_simplified_over_time.csv"));

    // The table behind a curve is the record it came from.
    const RunRecord rec = parse_record_csv(slurp(root / "pre" / "pretrain.csv"), "pretrain", "pretrain.csv");
    std::istringstream table(slurp(root / "plots" / "loss_L_A.csv"));
    std::string line;
    std::getline(table, line);
    size_t row = 0;
    while (std::getline(table, line)) {
        REQUIRE(row < rec.pretrain.size());
        CHECK(std::stod(line.substr(line.rfind(',') + 1)) == doctest::Approx(rec.pretrain[row].l_a).epsilon(1e-9));
        ++row;
    }
    CHECK(row == rec.pretrain.size());
    fs::remove_all(root);
}
