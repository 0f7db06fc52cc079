#pragma once

#include <stdexcept>
#include <string>

namespace stm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad tensor/vector dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Index outside its valid interval.
struct RangeError : Error {
  using Error::Error;
};

// Operation issued against inconsistent runtime state (e.g. non-monotonic
// KV append, missing expert weights at FFN time).
struct StateError : Error {
  using Error::Error;
};

// Invalid architectural configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input text (trace lines, config blocks). Message carries the
// line number where applicable.
struct ParseError : Error {
  using Error::Error;
};

// Container-level problems: bad magic, checksum mismatch, missing or
// duplicate tensors.
struct ModelError : Error {
  using Error::Error;
};

// I/O failure on the expert store. Retryable by contract; the engine
// aborts the current token and surfaces it with a step index.
struct StorageError : Error {
  explicit StorageError(const std::string& msg, bool retryable = true)
      : Error(msg), retryable(retryable) {}
  bool retryable;
};

// Single entry larger than the whole cache.
struct CapacityError : Error {
  using Error::Error;
};

// Every resident entry is pinned and the new entry does not fit: the cache
// is smaller than one token's working set.
struct OvercommitError : Error {
  using Error::Error;
};

}  // namespace stm
