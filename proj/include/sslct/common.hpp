#pragma once

#include <stdexcept>
#include <string>

namespace sslct {

// Configuration / shape / argument problems. Exit code 2 territory.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf encountered where finite values are required.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / stream problems.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Data validation problems (manifest rules, degenerate inputs).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_cfg(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

const char* version();

}  // namespace sslct
