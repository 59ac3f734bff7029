#pragma once

#include <stdexcept>

namespace refcomp {

/// Input validation failure (bad shapes, ranges, empty masks, ...).
using InvalidArgument = std::invalid_argument;

/// File-system or decoding failure. Carries the offending path in what().
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or unknown configuration (unknown backend, cache built for a
/// different architecture, unknown config key).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace refcomp
