#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sbtomo {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// carrier reflection vanishes, the sideband phase reference is undefined
struct DegeneratePhaseError : Error {
  using Error::Error;
};

// matrix does not have the required two-beam sideband block structure
struct StructureViolationError : Error {
  using Error::Error;
};

struct NonPositiveShotNoiseError : Error {
  using Error::Error;
};

struct NotPositiveDefiniteError : Error {
  using Error::Error;
};

struct TrivialPartitionError : Error {
  using Error::Error;
};

struct UnphysicalCorrectionError : Error {
  using Error::Error;
};

struct NonConvergenceError : Error {
  using Error::Error;
};

struct IdentifiabilityError : Error {
  IdentifiabilityError(const std::string& msg, std::vector<std::string> params)
      : Error(msg), parameters(std::move(params)) {}
  std::vector<std::string> parameters;
};

}  // namespace sbtomo
