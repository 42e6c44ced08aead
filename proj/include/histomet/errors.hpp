#pragma once

#include <stdexcept>
#include <string>

namespace histomet {

/// File and format problems; the CLI maps these to their own exit code.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad user-supplied configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A runtime check failed (gradient check, report self-consistency).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace histomet
