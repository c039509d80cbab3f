#pragma once

#include <stdexcept>
#include <string>

namespace vlf {

// Error taxonomy shared across the library. Each failure class has its own
// type so callers and tests can catch exactly what they expect.

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite input is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// API contract violations (non-scalar loss, empty mask, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or degenerate data (empty video, zero-area box, identity mismatch).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stage ordering violations (missing prerequisite checkpoint) and training
// divergence.
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric undefined for the given input (e.g. single-class AUC).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Remote annotation client failed after exhausting retries.
struct UpstreamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A function expected to be deterministic returned differing values.
struct DeterminismError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vlf
