#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uception {

// Every failure the library reports carries one of these codes. The CLI maps
// them onto process exit codes (see exit_code_for).
enum class ErrorCode {
  ShapeMismatch,
  OddExtent,
  InvalidArgument,
  EmptyInput,
  EmptyMask,
  NonFinite,
  MissingKey,
  UnsupportedElementType,
  PayloadLength,
  MalformedHeader,
  BadMagic,
  Io,
  Config,
  Sparseness,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::OddExtent: return "odd_extent";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::EmptyInput: return "empty_input";
    case ErrorCode::EmptyMask: return "empty_mask";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::MissingKey: return "missing_key";
    case ErrorCode::UnsupportedElementType: return "unsupported_element_type";
    case ErrorCode::PayloadLength: return "payload_length";
    case ErrorCode::MalformedHeader: return "malformed_header";
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::Io: return "io";
    case ErrorCode::Config: return "config";
    case ErrorCode::Sparseness: return "sparseness";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  // `subject` names the offending thing: an axis, a parameter, a header key.
  Error(ErrorCode code, std::string subject, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + " [" + subject + "]: " + message),
        code_(code),
        subject_(std::move(subject)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorCode code_;
  std::string subject_;
};

}  // namespace uception
