#include "jointmotion/textio.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

namespace jm::textio {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& token, const std::string& context) {
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size())
        throw FormatError(FormatErrorKind::malformed_field, context + ": '" + token + "' is not a number");
    return v;
}

long long parse_int(const std::string& token, const std::string& context) {
    long long v = 0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size())
        throw FormatError(FormatErrorKind::malformed_field, context + ": '" + token + "' is not an integer");
    return v;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

size_t Field::expected_count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

void write_field(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                 std::span<const double> values) {
    os << name << " [";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    for (double v : values) os << ' ' << format_double(v);
    os << '\n';
}

LineReader::LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

std::string LineReader::where() const { return source_ + ":" + std::to_string(line_no_); }

void LineReader::fail(FormatErrorKind kind, const std::string& what) const {
    throw FormatError(kind, where() + ": " + what);
}

bool LineReader::at_end() {
    while (true) {
        const int c = in_.peek();
        if (c == std::char_traits<char>::eof()) return true;
        if (c == '\n' || c == '\r' || c == ' ' || c == '\t') {
            if (c == '\n') ++line_no_;
            in_.get();
            continue;
        }
        return false;
    }
}

std::string LineReader::next(const std::string& expecting) {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) return line;
    }
    fail(FormatErrorKind::malformed_field, "unexpected end of input, expecting " + expecting);
}

std::vector<std::string> LineReader::keyword(const std::string& expected) {
    auto tokens = split_ws(next(expected));
    if (tokens.empty() || tokens[0] != expected)
        fail(FormatErrorKind::malformed_field, "expected '" + expected + "', got '" + (tokens.empty() ? "" : tokens[0]) + "'");
    tokens.erase(tokens.begin());
    return tokens;
}

Field LineReader::field(const std::string& name, const std::vector<int>& expected_shape) {
    const auto tokens = split_ws(next(name));
    if (tokens.size() < 2 || tokens[0] != name)
        fail(FormatErrorKind::malformed_field, "expected field '" + name + "', got '" + (tokens.empty() ? "" : tokens[0]) + "'");
    const std::string& shape_tok = tokens[1];
    if (shape_tok.size() < 2 || shape_tok.front() != '[' || shape_tok.back() != ']')
        fail(FormatErrorKind::malformed_field, name + ": bad shape token '" + shape_tok + "'");
    Field f;
    f.name = name;
    const std::string inner = shape_tok.substr(1, shape_tok.size() - 2);
    if (!inner.empty()) {
        std::stringstream ss(inner);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const long long d = parse_int(part, where() + ": " + name + " shape");
            if (d < 0) fail(FormatErrorKind::malformed_field, name + ": negative dimension");
            f.shape.push_back(static_cast<int>(d));
        }
    }
    if (tokens.size() - 2 != f.expected_count())
        fail(FormatErrorKind::malformed_field, name + ": declared " + shape_tok + " but found " +
                                                   std::to_string(tokens.size() - 2) + " values");
    if (!expected_shape.empty() && f.shape != expected_shape) {
        std::string want = "[";
        for (size_t i = 0; i < expected_shape.size(); ++i) want += (i ? "," : "") + std::to_string(expected_shape[i]);
        fail(FormatErrorKind::shape_mismatch, name + ": expected shape " + want + "], got " + shape_tok);
    }
    f.values.reserve(tokens.size() - 2);
    for (size_t i = 2; i < tokens.size(); ++i) f.values.push_back(parse_double(tokens[i], where() + ": " + name));
    return f;
}

std::string kv_value(const std::vector<std::string>& tokens, const std::string& key, const LineReader& reader) {
    const std::string prefix = key + "=";
    for (const auto& t : tokens)
        if (t.rfind(prefix, 0) == 0) return t.substr(prefix.size());
    reader.fail(FormatErrorKind::malformed_field, "missing '" + key + "='");
}

} // namespace jm::textio
