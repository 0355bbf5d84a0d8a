#pragma once

#include <stdexcept>
#include <string>

namespace nlos {

// Error taxonomy shared by library and CLI. The CLI maps categories to
// process exit codes (usage=2, data=3, numeric=4).
enum class ErrorCode {
  UsageError,          // bad arguments / bad config keys
  MalformedHeader,     // unparseable file header
  PayloadSizeMismatch, // truncated or overlong binary payload
  UnsupportedVersion,  // file version not understood
  IoError,             // filesystem-level failure
  ShapeMismatch,       // incompatible array dimensions
  BoundsMismatch,      // inputs disagree on scene bounds
  InvariantViolation,  // caller broke a documented precondition
  NumericError,        // non-finite value where one is not allowed
  NumericDivergence,   // training loss became non-finite
};

class NlosError : public std::runtime_error {
public:
  NlosError(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::UsageError: return "usage_error";
    case ErrorCode::MalformedHeader: return "malformed_header";
    case ErrorCode::PayloadSizeMismatch: return "payload_size_mismatch";
    case ErrorCode::UnsupportedVersion: return "unsupported_version";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::BoundsMismatch: return "bounds_mismatch";
    case ErrorCode::InvariantViolation: return "invariant_violation";
    case ErrorCode::NumericError: return "numeric_error";
    case ErrorCode::NumericDivergence: return "numeric_divergence";
  }
  return "unknown";
}

}  // namespace nlos
