#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace decomp {

enum class ErrorCode {
  // input / format errors
  BadMagic,
  UnsupportedDtype,
  ShapeMismatch,
  TruncatedFile,
  IoFailure,
  ManifestInvalid,
  DuplicateLabel,
  DimMismatch,
  NegativeFeature,
  MissingClass,
  KTooLarge,
  SpecInvalid,
  // computation errors
  EmptyClass,
  EmptyDataset,
  InsufficientSupport,
  NonFiniteInput,
  DivergenceDetected,
  EmptyIndexSet,
  IndexOutOfRange,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ManifestInvalid: return "ManifestInvalid";
    case ErrorCode::DuplicateLabel: return "DuplicateLabel";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NegativeFeature: return "NegativeFeature";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InsufficientSupport: return "InsufficientSupport";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::EmptyIndexSet: return "EmptyIndexSet";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
  }
  return "Unknown";
}

/// True for errors caused by bad inputs (files, parameters) rather than by
/// the computation itself. The CLI maps these to exit code 1, the rest to 2.
inline bool is_input_error(ErrorCode code) {
  return static_cast<int>(code) <= static_cast<int>(ErrorCode::SpecInvalid);
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace decomp
