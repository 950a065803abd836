#pragma once

#include <stdexcept>
#include <string>

namespace flsim {

/// Bad user-supplied configuration or data (CLI flags, config files, CSVs).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Violation of a protocol precondition while running a simulation.
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem-level failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flsim
