#pragma once

#include <stdexcept>
#include <string>

namespace anchorsched {

// Invalid or inconsistent configuration values.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Allocation vector violates the simplex precondition.
struct AllocationError : std::runtime_error {
  explicit AllocationError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor/vector width mismatch.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// API called before its preconditions were established (e.g. Fisher
// estimate requested before any optimizer update).
struct NotReadyError : std::runtime_error {
  explicit NotReadyError(const std::string& what) : std::runtime_error(what) {}
};

// Caller broke an interface contract (empty batch, non-finite gradient, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Experiment protocol violation (missing dependency, missing baseline rows).
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// File I/O failure or malformed artifact.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace anchorsched
