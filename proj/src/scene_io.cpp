#include "jointmotion/scene_io.hpp"

#include "jointmotion/errors.hpp"
#include "jointmotion/textio.hpp"

#include <fstream>
#include <sstream>

namespace jm {

using textio::Field;
using textio::LineReader;
using textio::write_field;

namespace {

const char* kSceneMagic = "jointmotion-scene";
const char* kManifestMagic = "jointmotion-corpus";

void put(std::ostream& os, const std::string& name, const std::vector<int>& shape, const std::vector<double>& v) {
    write_field(os, name, shape, v);
}


bool as_flag(double v, const LineReader& r, const std::string& what) {
    if (v != 0.0 && v != 1.0) r.fail(FormatErrorKind::malformed_field, what + ": flag must be 0 or 1");
    return v == 1.0;
}

int int_kv(const std::vector<std::string>& tokens, const std::string& key, const LineReader& r) {
    return static_cast<int>(textio::parse_int(textio::kv_value(tokens, key, r), r.where() + ": " + key));
}

void read_header(LineReader& r, const std::string& magic, int version) {
    const auto tokens = textio::split_ws(r.next("format header"));
    if (tokens.size() != 2 || tokens[0] != magic)
        r.fail(FormatErrorKind::malformed_field, "expected header '" + magic + " v" + std::to_string(version) + "'");
    if (tokens[1] != "v" + std::to_string(version))
        r.fail(FormatErrorKind::version_mismatch,
               "unsupported " + magic + " version '" + tokens[1] + "', this build reads v" + std::to_string(version));
}

} // namespace

std::string serialize_scene(const TrafficScene& scene) {
    std::ostringstream os;
    const auto& d = scene.dialect;
    const int T = d.t_past, F = d.t_future;
    os << kSceneMagic << " v" << kSceneFormatVersion << '\n';
    os << "scene id=" << scene.scene_id << " dt=" << textio::format_double(scene.dt) << " dialect=" << d.name
       << " t_past=" << T << " t_future=" << F << " lights=" << (d.has_traffic_lights ? 1 : 0)
       << " lane_classes=" << d.lane_class_count << '\n';
    os << "counts agents=" << scene.agents.size() << " lanes=" << scene.lanes.size() << " lights=" << scene.lights.size()
       << '\n';

    for (size_t a = 0; a < scene.agents.size(); ++a) {
        const auto& agent = scene.agents[a];
        if (static_cast<int>(agent.steps.size()) != T)
            throw DataError("serialize_scene: agent " + std::to_string(a) + " has the wrong number of steps");
        os << "agent id=" << agent.agent_id << '\n';
        put(os, "class_onehot", {3}, {agent.class_onehot.begin(), agent.class_onehot.end()});
        std::vector<double> pos, dims, accel, vel, yaw, step, valid;
        for (const auto& s : agent.steps) {
            pos.insert(pos.end(), {s.position.x, s.position.y});
            dims.insert(dims.end(), s.dims.begin(), s.dims.end());
            accel.insert(accel.end(), {s.accel.x, s.accel.y});
            vel.insert(vel.end(), {s.vel.x, s.vel.y});
            yaw.push_back(s.yaw);
            if (static_cast<int>(s.step_onehot.size()) != T)
                throw DataError("serialize_scene: agent " + std::to_string(a) + " step_onehot width differs from t_past");
            step.insert(step.end(), s.step_onehot.begin(), s.step_onehot.end());
            valid.push_back(s.valid ? 1.0 : 0.0);
        }
        put(os, "position", {T, 2}, pos);
        put(os, "dims", {T, 3}, dims);
        put(os, "accel", {T, 2}, accel);
        put(os, "vel", {T, 2}, vel);
        put(os, "yaw", {T}, yaw);
        put(os, "step_onehot", {T, T}, step);
        put(os, "valid", {T}, valid);
        std::vector<double> fpos, fvalid;
        if (a < scene.futures.size()) {
            const auto& f = scene.futures[a];
            for (const auto& p : f.positions) fpos.insert(fpos.end(), {p.x, p.y});
            for (auto v : f.valid) fvalid.push_back(v ? 1.0 : 0.0);
        }
        const int fn = static_cast<int>(fvalid.size());
        if (fn != F || static_cast<int>(fpos.size()) != 2 * F)
            throw DataError("serialize_scene: agent " + std::to_string(a) + " future length differs from t_future");
        put(os, "future_position", {F, 2}, fpos);
        put(os, "future_valid", {F}, fvalid);
    }
    for (const auto& lane : scene.lanes) {
        os << "lane id=" << lane.lane_id << '\n';
        std::vector<double> pts;
        for (const auto& p : lane.points) pts.insert(pts.end(), {p.x, p.y});
        put(os, "points", {static_cast<int>(lane.points.size()), 2}, pts);
        put(os, "class_onehot", {static_cast<int>(lane.class_onehot.size())}, lane.class_onehot);
    }
    for (const auto& light : scene.lights) {
        os << "light id=" << light.light_id << '\n';
        put(os, "position", {2}, {light.position.x, light.position.y});
        std::vector<double> state, step;
        for (const auto& s : light.steps) {
            state.insert(state.end(), s.state_onehot.begin(), s.state_onehot.end());
            step.insert(step.end(), s.step_onehot.begin(), s.step_onehot.end());
        }
        const int n = static_cast<int>(light.steps.size());
        put(os, "state_onehot", {n, 3}, state);
        put(os, "step_onehot", {n, T}, step);
    }
    os << "end\n";
    return os.str();
}

TrafficScene deserialize_scene(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    LineReader r(in, source);
    read_header(r, kSceneMagic, kSceneFormatVersion);

    TrafficScene scene;
    const auto st = r.keyword("scene");
    scene.scene_id = textio::kv_value(st, "id", r);
    scene.dt = textio::parse_double(textio::kv_value(st, "dt", r), r.where() + ": dt");
    auto& d = scene.dialect;
    d.name = textio::kv_value(st, "dialect", r);
    d.t_past = int_kv(st, "t_past", r);
    d.t_future = int_kv(st, "t_future", r);
    d.has_traffic_lights = int_kv(st, "lights", r) != 0;
    d.lane_class_count = int_kv(st, "lane_classes", r);
    if (d.t_past < 1 || d.t_future < 1 || d.lane_class_count < 1)
        r.fail(FormatErrorKind::malformed_field, "scene: non-positive dialect dimensions");
    const int T = d.t_past, F = d.t_future;

    const auto ct = r.keyword("counts");
    const int n_agents = int_kv(ct, "agents", r), n_lanes = int_kv(ct, "lanes", r), n_lights = int_kv(ct, "lights", r);
    if (n_agents < 0 || n_lanes < 0 || n_lights < 0) r.fail(FormatErrorKind::malformed_field, "counts: negative");

    for (int a = 0; a < n_agents; ++a) {
        AgentTrack agent;
        agent.agent_id = int_kv(r.keyword("agent"), "id", r);
        const Field cls = r.field("class_onehot", {3});
        std::copy(cls.values.begin(), cls.values.end(), agent.class_onehot.begin());
        const Field pos = r.field("position", {T, 2});
        const Field dims = r.field("dims", {T, 3});
        const Field accel = r.field("accel", {T, 2});
        const Field vel = r.field("vel", {T, 2});
        const Field yaw = r.field("yaw", {T});
        const Field step = r.field("step_onehot", {T, T});
        const Field valid = r.field("valid", {T});
        for (int t = 0; t < T; ++t) {
            AgentStep s;
            s.position = {pos.values[2 * t], pos.values[2 * t + 1]};
            s.dims = {dims.values[3 * t], dims.values[3 * t + 1], dims.values[3 * t + 2]};
            s.accel = {accel.values[2 * t], accel.values[2 * t + 1]};
            s.vel = {vel.values[2 * t], vel.values[2 * t + 1]};
            s.yaw = yaw.values[t];
            s.step_onehot.assign(step.values.begin() + t * T, step.values.begin() + (t + 1) * T);
            s.valid = as_flag(valid.values[t], r, "valid");
            agent.steps.push_back(std::move(s));
        }
        const Field fpos = r.field("future_position", {F, 2});
        const Field fvalid = r.field("future_valid", {F});
        FutureTrack f;
        for (int t = 0; t < F; ++t) {
            f.positions.push_back({fpos.values[2 * t], fpos.values[2 * t + 1]});
            f.valid.push_back(as_flag(fvalid.values[t], r, "future_valid") ? 1 : 0);
        }
        scene.agents.push_back(std::move(agent));
        scene.futures.push_back(std::move(f));
    }
    for (int l = 0; l < n_lanes; ++l) {
        LanePolyline lane;
        lane.lane_id = int_kv(r.keyword("lane"), "id", r);
        const Field pts = r.field("points");
        if (pts.shape.size() != 2 || pts.shape[1] != 2)
            r.fail(FormatErrorKind::shape_mismatch, "points: expected shape [P,2]");
        for (int p = 0; p < pts.shape[0]; ++p) lane.points.push_back({pts.values[2 * p], pts.values[2 * p + 1]});
        lane.class_onehot = r.field("class_onehot", {d.lane_class_count}).values;
        scene.lanes.push_back(std::move(lane));
    }
    for (int k = 0; k < n_lights; ++k) {
        TrafficLightSequence light;
        light.light_id = int_kv(r.keyword("light"), "id", r);
        const Field pos = r.field("position", {2});
        light.position = {pos.values[0], pos.values[1]};
        const Field state = r.field("state_onehot");
        if (state.shape.size() != 2 || state.shape[1] != 3)
            r.fail(FormatErrorKind::shape_mismatch, "state_onehot: expected shape [T,3]");
        const int n = state.shape[0];
        const Field step = r.field("step_onehot", {n, T});
        for (int t = 0; t < n; ++t) {
            LightStep s;
            std::copy(state.values.begin() + 3 * t, state.values.begin() + 3 * t + 3, s.state_onehot.begin());
            s.step_onehot.assign(step.values.begin() + t * T, step.values.begin() + (t + 1) * T);
            light.steps.push_back(std::move(s));
        }
        scene.lights.push_back(std::move(light));
    }
    const auto tail = textio::split_ws(r.next("end"));
    if (tail.size() != 1 || tail[0] != "end") r.fail(FormatErrorKind::malformed_field, "expected 'end'");
    return scene;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

void write_corpus(const std::filesystem::path& dir, const std::vector<TrafficScene>& scenes,
                  const std::vector<uint64_t>& seeds, bool overwrite) {
    if (scenes.size() != seeds.size()) throw std::invalid_argument("write_corpus: one seed per scene required");
    if (scenes.empty()) throw DataError("write_corpus: empty corpus");
    const auto manifest_path = dir / "manifest.txt";
    if (std::filesystem::exists(manifest_path) && !overwrite)
        throw DataError("corpus already exists at " + dir.string() + " (pass --overwrite to replace it)");
    std::filesystem::create_directories(dir / "scenes");

    const auto& d = scenes.front().dialect;
    std::ostringstream m;
    m << kManifestMagic << " v1\n";
    m << "dialect name=" << d.name << " t_past=" << d.t_past << " t_future=" << d.t_future
      << " lights=" << (d.has_traffic_lights ? 1 : 0) << " lane_classes=" << d.lane_class_count << '\n';
    m << "counts agents=" << scenes.front().agents.size() << " lanes=" << scenes.front().lanes.size()
      << " lights=" << scenes.front().lights.size() << '\n';
    m << "scenes " << scenes.size() << '\n';
    for (size_t i = 0; i < scenes.size(); ++i) {
        if (!(scenes[i].dialect == d)) throw DataError("write_corpus: mixed dialects");
        const std::string file = "scenes/" + scenes[i].scene_id + ".scene";
        write_text_file(dir / file, serialize_scene(scenes[i]));
        m << "entry id=" << scenes[i].scene_id << " seed=" << seeds[i] << " file=" << file << '\n';
    }
    write_text_file(manifest_path, m.str());
}

CorpusManifest read_manifest(const std::filesystem::path& dir) {
    const std::string text = read_text_file(dir / "manifest.txt");
    std::istringstream in(text);
    LineReader r(in, (dir / "manifest.txt").string());
    read_header(r, kManifestMagic, 1);
    CorpusManifest m;
    const auto dt = r.keyword("dialect");
    m.dialect.name = textio::kv_value(dt, "name", r);
    m.dialect.t_past = int_kv(dt, "t_past", r);
    m.dialect.t_future = int_kv(dt, "t_future", r);
    m.dialect.has_traffic_lights = int_kv(dt, "lights", r) != 0;
    m.dialect.lane_class_count = int_kv(dt, "lane_classes", r);
    const auto ct = r.keyword("counts");
    m.agents = int_kv(ct, "agents", r);
    m.lanes = int_kv(ct, "lanes", r);
    m.lights = int_kv(ct, "lights", r);
    const auto st = r.keyword("scenes");
    if (st.size() != 1) r.fail(FormatErrorKind::malformed_field, "scenes: expected a count");
    const long long n = textio::parse_int(st[0], r.where() + ": scenes");
    for (long long i = 0; i < n; ++i) {
        const auto et = r.keyword("entry");
        CorpusEntry e;
        e.scene_id = textio::kv_value(et, "id", r);
        e.seed = static_cast<uint64_t>(textio::parse_int(textio::kv_value(et, "seed", r), r.where() + ": seed"));
        e.file = textio::kv_value(et, "file", r);
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<TrafficScene> read_corpus(const std::filesystem::path& dir, CorpusManifest* manifest_out) {
    const CorpusManifest m = read_manifest(dir);
    if (m.entries.empty()) throw DataError("corpus at " + dir.string() + " is empty");
    std::vector<TrafficScene> scenes(m.entries.size());
    std::vector<std::string> errors(m.entries.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) {
        try {
            const auto path = dir / m.entries[i].file;
            scenes[i] = deserialize_scene(read_text_file(path), path.string());
            if (!(scenes[i].dialect == m.dialect)) errors[i] = path.string() + ": dialect differs from manifest";
            else if (scenes[i].scene_id != m.entries[i].scene_id) errors[i] = path.string() + ": scene id differs from manifest";
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError(e);
    if (manifest_out) *manifest_out = m;
    return scenes;
}

} // namespace jm
