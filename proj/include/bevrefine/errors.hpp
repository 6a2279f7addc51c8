#pragma once

#include <stdexcept>

namespace bevrefine {

/// Inconsistent wiring between components: mismatched view ids, dimension
/// mismatches, empty camera rigs, invalid configuration values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable or malformed files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A scene that cannot satisfy a sampling constraint (e.g. no background cell
/// far enough from the foreground region).
class DegenerateSceneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bevrefine
