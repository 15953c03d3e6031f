#pragma once

// Shared plumbing for the versioned text formats. A field line reads
//   <name> [<d0>,<d1>,...] <v0> <v1> ...
// with values in row-major order; "[]" marks a scalar. Numbers use the
// shortest representation that parses back to the identical double.

#include "jointmotion/errors.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace jm::textio {

std::string format_double(double v);
double parse_double(const std::string& token, const std::string& context);
long long parse_int(const std::string& token, const std::string& context);

std::vector<std::string> split_ws(const std::string& line);

struct Field {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;

    size_t expected_count() const;
};

void write_field(std::ostream& os, const std::string& name, const std::vector<int>& shape,
                 std::span<const double> values);

// Line-oriented reader with a running line number for error messages.
class LineReader {
public:
    LineReader(std::istream& in, std::string source);

    // Next non-empty line; throws malformed_field on end of input.
    std::string next(const std::string& expecting);
    bool at_end();
    // Reads `<keyword> <rest...>` and returns the tokens after the keyword.
    std::vector<std::string> keyword(const std::string& expected);
    // Reads a field line named `name`; checks the value count against the
    // declared shape, and the declared shape against `expected_shape` when
    // it is non-empty.
    Field field(const std::string& name, const std::vector<int>& expected_shape = {});

    [[noreturn]] void fail(FormatErrorKind kind, const std::string& what) const;
    std::string where() const;

private:
    std::istream& in_;
    std::string source_;
    int line_no_ = 0;
};

// "key=value" token helpers.
std::string kv_value(const std::vector<std::string>& tokens, const std::string& key, const LineReader& reader);

} // namespace jm::textio
