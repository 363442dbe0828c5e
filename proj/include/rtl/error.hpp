#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rtl {

enum class ErrorCode {
  invalid_argument,
  precondition,
  divergence,
  unbounded_seed,
  seed_invalid,
  outside_domain,
  not_fixed,
  inconsistency,
  invalid_spectrum,
  decomposition_step,
  stalled_flow,
  non_differentiable,
  config,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::unbounded_seed: return "unbounded_seed";
    case ErrorCode::seed_invalid: return "seed_invalid";
    case ErrorCode::outside_domain: return "outside_domain";
    case ErrorCode::not_fixed: return "not_fixed";
    case ErrorCode::inconsistency: return "inconsistency";
    case ErrorCode::invalid_spectrum: return "invalid_spectrum";
    case ErrorCode::decomposition_step: return "decomposition_step";
    case ErrorCode::stalled_flow: return "stalled_flow";
    case ErrorCode::non_differentiable: return "non_differentiable";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

/// Library-wide exception. The code is machine readable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace rtl
