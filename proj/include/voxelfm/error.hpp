#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxelfm {

enum class ErrorCode {
  invalid_argument,
  missing_file,
  io,
  shape_mismatch,
  invalid_spacing,
  non_finite,
  corrupt_file,
  dimension_mismatch,
  no_valid_placement,
  undefined_ratio,
  empty_input,
  divergence,
  not_found,
  zero_variance,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::io: return "io";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_spacing: return "invalid_spacing";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::no_valid_placement: return "no_valid_placement";
    case ErrorCode::undefined_ratio: return "undefined_ratio";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::zero_variance: return "zero_variance";
  }
  return "unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace voxelfm
