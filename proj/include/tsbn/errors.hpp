#pragma once

#include <stdexcept>
#include <string>

namespace tsbn {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values, shape mismatches, out-of-range labels.
struct InvalidInput : Error {
  explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

// Manifest parsing problems: duplicate ids, labels outside {0,1}, bad rows.
struct InvalidManifest : Error {
  explicit InvalidManifest(const std::string& msg) : Error(msg) {}
};

// Cross-validation split cannot satisfy its invariants.
struct InvalidSplit : Error {
  explicit InvalidSplit(const std::string& msg) : Error(msg) {}
};

// Inconsistent architecture / training configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem and decode failures.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Metric with a zero denominator or single-class input.
struct UndefinedMetric : Error {
  explicit UndefinedMetric(const std::string& msg) : Error(msg) {}
};

// Non-finite loss during training; carries the position of the bad step.
struct DivergenceError : Error {
  int epoch;
  int batch;
  DivergenceError(const std::string& msg, int epoch_idx, int batch_idx)
      : Error(msg + " (epoch " + std::to_string(epoch_idx) + ", batch " +
              std::to_string(batch_idx) + ")"),
        epoch(epoch_idx),
        batch(batch_idx) {}
};

}  // namespace tsbn
