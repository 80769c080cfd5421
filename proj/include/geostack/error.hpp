#pragma once

#include <stdexcept>
#include <string>

namespace geostack {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Shape/dimension disagreement between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

/// Invalid argument or malformed in-memory data.
class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

/// Iterative method failed to reach tolerance; carries the last estimate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, double last_estimate)
      : Error(msg), last_estimate_(last_estimate) {}
  double last_estimate() const { return last_estimate_; }

 private:
  double last_estimate_;
};

/// Non-finite values or other numerical breakdown.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

/// Persistence failure modes, one code per documented corruption class.
enum class StoreErrc {
  io,
  bad_magic,
  version_mismatch,
  truncated_payload,
  non_finite,
  oe_mismatch,
  digest_mismatch,
};

class StoreError : public Error {
 public:
  StoreError(StoreErrc code, const std::string& msg) : Error(msg), code_(code) {}
  StoreErrc code() const { return code_; }

 private:
  StoreErrc code_;
};

}  // namespace geostack
