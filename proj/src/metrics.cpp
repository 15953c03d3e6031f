#include "jointmotion/metrics.hpp"

#include "jointmotion/errors.hpp"
#include "jointmotion/textio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace jm {

namespace {

void check(const JointPrediction& pred, const std::vector<FutureTrack>& gt) {
    if (static_cast<int>(gt.size()) != pred.agents) throw std::invalid_argument("metrics: agent count mismatch");
    for (const auto& f : gt)
        if (static_cast<int>(f.positions.size()) != pred.steps) throw std::invalid_argument("metrics: step count mismatch");
}

double displacement(const JointPrediction& p, int m, int a, int t, const FutureTrack& f) {
    return std::hypot(p.at(m, a, t, 0) - f.positions[t].x, p.at(m, a, t, 1) - f.positions[t].y);
}

} // namespace

double joint_ade(const JointPrediction& pred, int m, const std::vector<FutureTrack>& gt) {
    check(pred, gt);
    double s = 0.0;
    int n = 0;
    for (int a = 0; a < pred.agents; ++a)
        for (int t = 0; t < pred.steps; ++t)
            if (gt[a].valid[t]) {
                s += displacement(pred, m, a, t, gt[a]);
                ++n;
            }
    if (n == 0) throw DataError("joint_ade: no valid future steps");
    return s / n;
}

double joint_fde(const JointPrediction& pred, int m, const std::vector<FutureTrack>& gt) {
    check(pred, gt);
    double s = 0.0;
    int n = 0;
    for (int a = 0; a < pred.agents; ++a) {
        const int t = gt[a].last_valid_step();
        if (t < 0) continue;
        s += displacement(pred, m, a, t, gt[a]);
        ++n;
    }
    if (n == 0) throw DataError("joint_fde: no valid future steps");
    return s / n;
}

double joint_min_ade(const JointPrediction& pred, const std::vector<FutureTrack>& gt) {
    double best = INFINITY;
    for (int m = 0; m < pred.k; ++m) best = std::min(best, joint_ade(pred, m, gt));
    return best;
}

double joint_min_fde(const JointPrediction& pred, const std::vector<FutureTrack>& gt) {
    double best = INFINITY;
    for (int m = 0; m < pred.k; ++m) best = std::min(best, joint_fde(pred, m, gt));
    return best;
}

bool mode_hits(const JointPrediction& pred, int m, const std::vector<FutureTrack>& gt, double threshold) {
    check(pred, gt);
    bool any = false;
    for (int a = 0; a < pred.agents; ++a) {
        const int t = gt[a].last_valid_step();
        if (t < 0) continue;
        any = true;
        if (!(displacement(pred, m, a, t, gt[a]) < threshold)) return false;
    }
    return any;
}

double joint_miss_rate(const std::vector<EvalItem>& items, double threshold) {
    if (items.empty()) throw DataError("joint_miss_rate: empty dataset");
    int misses = 0;
    for (const auto& it : items) {
        bool hit = false;
        for (int m = 0; m < it.pred->k && !hit; ++m) hit = mode_hits(*it.pred, m, *it.gt, threshold);
        misses += hit ? 0 : 1;
    }
    return static_cast<double>(misses) / static_cast<double>(items.size());
}

double simplified_map(const std::vector<EvalItem>& items, double threshold) {
    if (items.empty()) throw DataError("simplified_map: empty dataset");
    struct Detection {
        double confidence;
        int scene;
        bool hit;
    };
    std::vector<Detection> dets;
    for (size_t s = 0; s < items.size(); ++s) {
        const auto& p = *items[s].pred;
        if (static_cast<int>(p.confidences.size()) != p.k) throw std::invalid_argument("simplified_map: missing confidences");
        for (int m = 0; m < p.k; ++m)
            dets.push_back({p.confidences[m], static_cast<int>(s), mode_hits(p, m, *items[s].gt, threshold)});
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<uint8_t> covered(items.size(), 0);
    int tp = 0;
    double ap = 0.0;
    for (size_t r = 0; r < dets.size(); ++r) {
        const auto& d = dets[r];
        if (!d.hit || covered[d.scene]) continue;
        covered[d.scene] = 1;
        ++tp;
        ap += static_cast<double>(tp) / static_cast<double>(r + 1);
    }
    return ap / static_cast<double>(items.size());
}

MetricReport evaluate(const std::vector<EvalItem>& items, const std::vector<std::string>& scene_ids, double threshold) {
    if (items.empty()) throw DataError("evaluate: empty dataset");
    MetricReport r;
    r.scenes = static_cast<int>(items.size());
    r.miss_threshold = threshold;
    for (size_t i = 0; i < items.size(); ++i) {
        SceneMetrics s;
        s.scene_id = i < scene_ids.size() ? scene_ids[i] : std::to_string(i);
        s.min_ade = joint_min_ade(*items[i].pred, *items[i].gt);
        s.min_fde = joint_min_fde(*items[i].pred, *items[i].gt);
        bool hit = false;
        for (int m = 0; m < items[i].pred->k && !hit; ++m) hit = mode_hits(*items[i].pred, m, *items[i].gt, threshold);
        s.miss = !hit;
        r.min_ade += s.min_ade;
        r.min_fde += s.min_fde;
        r.per_scene.push_back(s);
    }
    r.min_ade /= r.scenes;
    r.min_fde /= r.scenes;
    r.miss_rate = joint_miss_rate(items, threshold);
    r.map_simplified = simplified_map(items, threshold);
    return r;
}

std::string format_report(const MetricReport& r) {
    using textio::format_double;
    std::ostringstream os;
    os << "format=jointmotion-metrics-v1\n";
    os << "scenes=" << r.scenes << '\n';
    os << "min_ade=" << format_double(r.min_ade) << '\n';
    os << "min_fde=" << format_double(r.min_fde) << '\n';
    os << "miss_rate=" << format_double(r.miss_rate) << '\n';
    os << "map_simplified=" << format_double(r.map_simplified) << '\n';
    os << "miss_threshold=" << format_double(r.miss_threshold) << '\n';
    os << "overlap_rate=not_computed\n";
    for (const auto& s : r.per_scene) {
        os << "scene." << s.scene_id << ".min_ade=" << format_double(s.min_ade) << '\n';
        os << "scene." << s.scene_id << ".min_fde=" << format_double(s.min_fde) << '\n';
        os << "scene." << s.scene_id << ".miss=" << (s.miss ? 1 : 0) << '\n';
    }
    return os.str();
}

void append_history(const std::filesystem::path& csv, const std::string& run, const std::string& corpus,
                    const MetricReport& r) {
    using textio::format_double;
    const bool fresh = !std::filesystem::exists(csv);
    if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
    std::ofstream out(csv, std::ios::app);
    if (!out) throw DataError("cannot append to " + csv.string());
    if (fresh) out << kHistoryHeader << '\n';
    out << run << ',' << corpus << ',' << r.scenes << ',' << format_double(r.min_ade) << ',' << format_double(r.min_fde)
        << ',' << format_double(r.miss_rate) << ',' << format_double(r.map_simplified) << ','
        << format_double(r.miss_threshold) << '\n';
}

std::string serialize_predictions(const std::vector<ScenePrediction>& preds) {
    std::ostringstream os;
    os << "jointmotion-predictions v1\n";
    os << "predictions " << preds.size() << '\n';
    for (const auto& sp : preds) {
        const auto& p = sp.pred;
        if (static_cast<int>(sp.agent_ids.size()) != p.agents)
            throw std::invalid_argument("serialize_predictions: agent ids do not match prediction");
        os << "scene id=" << sp.scene_id << " k=" << p.k << " agents=" << p.agents << " steps=" << p.steps << '\n';
        textio::write_field(os, "confidences", {p.k}, p.confidences);
        for (int m = 0; m < p.k; ++m) {
            os << "mode index=" << m << '\n';
            for (int a = 0; a < p.agents; ++a) {
                os << "agent id=" << sp.agent_ids[a] << '\n';
                const size_t off = (static_cast<size_t>(m) * p.agents + a) * p.steps * 2;
                textio::write_field(os, "trajectory", {p.steps, 2},
                                    std::span<const double>(p.positions.data() + off, static_cast<size_t>(p.steps) * 2));
            }
        }
    }
    os << "end\n";
    return os.str();
}

std::vector<ScenePrediction> deserialize_predictions(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    textio::LineReader r(in, source);
    const auto header = textio::split_ws(r.next("header"));
    if (header.size() != 2 || header[0] != "jointmotion-predictions")
        r.fail(FormatErrorKind::malformed_field, "expected header 'jointmotion-predictions v1'");
    if (header[1] != "v1") r.fail(FormatErrorKind::version_mismatch, "unsupported predictions version '" + header[1] + "'");
    const auto count = r.keyword("predictions");
    if (count.size() != 1) r.fail(FormatErrorKind::malformed_field, "predictions: expected a count");
    const long long n = textio::parse_int(count[0], r.where());
    auto int_kv = [&](const std::vector<std::string>& t, const char* key) {
        return static_cast<int>(textio::parse_int(textio::kv_value(t, key, r), r.where() + ": " + key));
    };
    std::vector<ScenePrediction> out;
    for (long long s = 0; s < n; ++s) {
        const auto st = r.keyword("scene");
        ScenePrediction sp;
        sp.scene_id = textio::kv_value(st, "id", r);
        const int k = int_kv(st, "k"), agents = int_kv(st, "agents"), steps = int_kv(st, "steps");
        if (k < 1 || agents < 1 || steps < 1) r.fail(FormatErrorKind::malformed_field, "scene: non-positive sizes");
        sp.pred = JointPrediction(k, agents, steps);
        sp.pred.confidences = r.field("confidences", {k}).values;
        sp.agent_ids.assign(agents, 0);
        for (int m = 0; m < k; ++m) {
            if (int_kv(r.keyword("mode"), "index") != m) r.fail(FormatErrorKind::malformed_field, "mode out of order");
            for (int a = 0; a < agents; ++a) {
                const int id = int_kv(r.keyword("agent"), "id");
                if (m == 0) sp.agent_ids[a] = id;
                else if (sp.agent_ids[a] != id) r.fail(FormatErrorKind::malformed_field, "agent order differs between modes");
                const auto f = r.field("trajectory", {steps, 2});
                std::copy(f.values.begin(), f.values.end(),
                          sp.pred.positions.begin() + (static_cast<size_t>(m) * agents + a) * steps * 2);
            }
        }
        out.push_back(std::move(sp));
    }
    const auto tail = textio::split_ws(r.next("end"));
    if (tail.size() != 1 || tail[0] != "end") r.fail(FormatErrorKind::malformed_field, "expected 'end'");
    return out;
}

} // namespace jm
