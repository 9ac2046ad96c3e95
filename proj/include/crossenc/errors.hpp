#pragma once

#include <stdexcept>
#include <string>

namespace crossenc {

// Bad user input: malformed config, unreadable files, inconsistent datasets.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure: non-finite values, shape mismatches, broken computation records.
struct NumericsError : std::runtime_error {
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace crossenc
