#pragma once
#include <stdexcept>
#include <string>

namespace aseg {

/// Thrown when a checkpoint file fails its integrity check (bad magic, short
/// read, CRC mismatch).
struct CorruptCheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a checkpoint is structurally sound but describes a network
/// incompatible with what the caller asked for (version, class count).
struct InvalidCheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown by volume readers on malformed headers or truncated payloads.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a metric has no defined value (e.g. surface distance against
/// an empty mask).
struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when training math produces non-finite values.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a phantom specification violates its geometric invariants
/// (margins, axis separation) or cannot be satisfied after redraws.
struct InvalidSpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on malformed or inconsistent run configuration files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace aseg
