#pragma once

#include <stdexcept>
#include <string>

namespace parc {

// Shape/axis mismatches between tensors (names the offending axis).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated operation contract (wrong lengths, non-scalar loss, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values (empty input, fraction too small, ...).
struct ArgumentError : std::runtime_error {
  explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid model/train configuration; message names the key or stage.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or truncated file; message carries the byte offset.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or unreadable file; message carries the path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical diagnostics (non-finite loss or gradient); names the culprit.
struct DiagnosticError : std::runtime_error {
  explicit DiagnosticError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace parc
