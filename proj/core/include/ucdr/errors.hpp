#pragma once

#include <stdexcept>
#include <string>

namespace ucdr {

// Caller broke an API precondition (bad shape, index out of range, ...).
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// Input is structurally valid but numerically unusable (zero vector into a
// normalizer, non-finite value where finiteness is required).
class DegenerateInputError : public std::runtime_error {
 public:
  explicit DegenerateInputError(const std::string& what) : std::runtime_error(what) {}
};

// A configuration value is out of its documented range or a config file is
// malformed. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// An operation was invoked in a state that cannot support it (missing
// checkpoint, missing frozen text features, unknown label).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

// A requested retrieval protocol cannot be realized on the given dataset
// (empty split, reserved domain used as holdout, ...).
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// A file exists and is readable but its contents are not what the format
// requires (bad magic, unsupported version, truncated payload).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// The operating system refused an I/O operation. CLI maps this (and
// FormatError) to exit code 3.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ucdr
