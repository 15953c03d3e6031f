#pragma once

#include <stdexcept>
#include <string>

namespace jm {

// Bad configuration value or combination (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unusable input data: invalid scene, corpus mismatch, missing files (exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss or degenerate numerics during training (exit code 3).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FormatErrorKind { version_mismatch, malformed_field, shape_mismatch };

// Failure decoding one of the versioned text formats (scene, checkpoint,
// predictions). Derives from DataError so callers can treat it as bad data.
class FormatError : public DataError {
public:
    FormatError(FormatErrorKind kind, const std::string& what) : DataError(prefix(kind) + what), kind_(kind) {}
    FormatErrorKind kind() const { return kind_; }

private:
    static std::string prefix(FormatErrorKind k) {
        switch (k) {
        case FormatErrorKind::version_mismatch: return "version mismatch: ";
        case FormatErrorKind::malformed_field: return "malformed field: ";
        case FormatErrorKind::shape_mismatch: return "shape mismatch: ";
        }
        return {};
    }
    FormatErrorKind kind_;
};

} // namespace jm
