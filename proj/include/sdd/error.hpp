#pragma once

#include <stdexcept>
#include <string>

namespace sdd {

/// Runtime failure inside a pipeline stage (bad file, divergence, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user input: unknown flag, malformed config, missing path.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdd
