#pragma once

#include <stdexcept>
#include <string>

namespace tpm {

// File/format problems: missing inputs, malformed images, bad checkpoints.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numeric self-check failed (oracle deviation, non-finite values).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tpm
