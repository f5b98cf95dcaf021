#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace das {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  OutOfBounds,
  NotObservable,
  TooFewSamples,
  InsufficientData,
  ConstraintViolation,
  DescriptorMismatch,
  EmptyDataset,
  Gap,
  Format,
  Io,
  Config,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::OutOfBounds: return "out_of_bounds";
    case ErrorCode::NotObservable: return "not_observable";
    case ErrorCode::TooFewSamples: return "too_few_samples";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::ConstraintViolation: return "constraint_violation";
    case ErrorCode::DescriptorMismatch: return "descriptor_mismatch";
    case ErrorCode::EmptyDataset: return "empty_dataset";
    case ErrorCode::Gap: return "gap";
    case ErrorCode::Format: return "format";
    case ErrorCode::Io: return "io";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a stable, machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace das
