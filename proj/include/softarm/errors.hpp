#pragma once

#include <stdexcept>
#include <string>

namespace softarm {

// Exit-code contract used by the CLI: 0 success, 2 usage, 3 missing
// dependency, 4 compatibility, 5 partial ablation, 1 anything else.

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CompatibilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PartialAblationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    ParseError(const std::string& file, int line, const std::string& msg)
        : std::runtime_error(file + ":" + std::to_string(line) + ": " + msg),
          file_name(file), line_no(line) {}
    std::string file_name;
    int line_no = 0;
};

// Unknown artifact format version. A compatibility failure for exit-code purposes.
struct VersionError : CompatibilityError {
    using CompatibilityError::CompatibilityError;
};

}  // namespace softarm
