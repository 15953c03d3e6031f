#include "jointmotion/checkpoint.hpp"

#include "jointmotion/errors.hpp"
#include "jointmotion/scene_io.hpp"
#include "jointmotion/textio.hpp"

#include <sstream>

namespace jm {

namespace {
const char* kMagic = "jointmotion-checkpoint";
constexpr int kVersion = 1;

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }
} // namespace

Checkpoint snapshot(const ParameterStore& store, std::map<std::string, std::string> meta) {
    Checkpoint c;
    c.meta = std::move(meta);
    for (const auto& [name, v] : store.all()) c.params.emplace(name, v.value());
    return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream os;
    os << kMagic << " v" << kVersion << '\n';
    for (const auto& [k, v] : ckpt.meta) {
        if (k.find_first_of(" \t\n") != std::string::npos || v.find_first_of(" \t\n") != std::string::npos || v.empty())
            throw std::invalid_argument("checkpoint meta '" + k + "' must be a single non-empty token");
        os << "meta " << k << ' ' << v << '\n';
    }
    os << "params " << ckpt.params.size() << '\n';
    for (const auto& [name, t] : ckpt.params) textio::write_field(os, name, {t.rows(), t.cols()}, t.flat());
    os << "end\n";
    return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    textio::LineReader r(in, source);
    const auto header = textio::split_ws(r.next("checkpoint header"));
    if (header.size() != 2 || header[0] != kMagic)
        r.fail(FormatErrorKind::malformed_field, std::string("expected header '") + kMagic + " v1'");
    if (header[1] != "v" + std::to_string(kVersion))
        r.fail(FormatErrorKind::version_mismatch, "unsupported checkpoint version '" + header[1] + "'");

    Checkpoint c;
    std::vector<std::string> tokens;
    while (true) {
        tokens = textio::split_ws(r.next("params"));
        if (tokens.empty() || tokens[0] != "meta") break;
        if (tokens.size() != 3) r.fail(FormatErrorKind::malformed_field, "meta lines need a key and a value");
        c.meta[tokens[1]] = tokens[2];
    }
    if (tokens.size() != 2 || tokens[0] != "params") r.fail(FormatErrorKind::malformed_field, "expected 'params <n>'");
    const long long n = textio::parse_int(tokens[1], r.where() + ": params");
    for (long long i = 0; i < n; ++i) {
        const auto line = r.next("parameter");
        const auto name_end = line.find(' ');
        const std::string name = line.substr(0, name_end);
        std::istringstream one(line);
        textio::LineReader lr(one, r.where());
        const textio::Field f = lr.field(name);
        if (f.shape.size() != 2) r.fail(FormatErrorKind::shape_mismatch, name + ": expected a 2-d shape");
        if (c.params.count(name)) r.fail(FormatErrorKind::malformed_field, "duplicate parameter " + name);
        c.params.emplace(name, Tensor(f.shape[0], f.shape[1], f.values));
    }
    const auto tail = textio::split_ws(r.next("end"));
    if (tail.size() != 1 || tail[0] != "end") r.fail(FormatErrorKind::malformed_field, "expected 'end'");
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_text_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_text_file(path), path.string());
}

std::string LoadReport::summary() const {
    std::ostringstream os;
    auto list = [&](const char* label, const std::vector<std::string>& names) {
        os << label << " (" << names.size() << ")";
        for (const auto& n : names) os << ' ' << n;
        os << '\n';
    };
    list("loaded", loaded);
    list("dropped", dropped);
    list("reinitialized", reinitialized);
    list("fresh", fresh);
    list("frozen", frozen);
    return os.str();
}

bool is_pretraining_only(const std::string& name) { return starts_with(name, "cme.") || starts_with(name, "mpm."); }

bool is_input_width_dependent(const std::string& name) {
    return name == "embed.agent.weight" || name == "embed.lane.weight" || name == "embed.light.weight";
}

LoadReport load_parameters(ParameterStore& store, const Checkpoint& ckpt) {
    LoadReport report;
    for (const auto& [name, t] : ckpt.params) {
        if (!store.contains(name)) {
            if (is_pretraining_only(name)) {
                report.dropped.push_back(name);
                continue;
            }
            throw DataError("checkpoint parameter '" + name + "' has no counterpart in the model");
        }
        Var p = store.get(name);
        if (!p.value().same_shape(t)) {
            if (is_input_width_dependent(name)) {
                report.reinitialized.push_back(name);
                continue;
            }
            throw DataError("checkpoint parameter '" + name + "' has shape " + t.shape_string() + ", model expects " +
                            p.value().shape_string());
        }
        p.mutable_value() = t;
        report.loaded.push_back(name);
    }
    for (const auto& name : store.names()) {
        if (ckpt.params.count(name)) continue;
        if (starts_with(name, "head.")) report.fresh.push_back(name);
        else throw DataError("model parameter '" + name + "' is missing from the checkpoint");
    }
    return report;
}

} // namespace jm
