#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace peakit {

enum class ErrorCode {
  InvalidArgument,
  FileMissing,
  IoError,
  SizeMismatch,
  UnsupportedFormat,
  IndexOutOfRange,
  OutOfBounds,
  OddGeometry,
  DimensionMismatch,
  ParseError,
  WrongSpanLength,
  InsufficientReferenceArea,
  CorruptRecord,
  PayloadLengthMismatch,
  ShapeMismatch,
  OddSpatialDims,
  DegenerateBatch,
  UndefinedDenominator,
  ShapeUnderflow,
  ConfigInvalid,
  EmptyClass,
  DivergedLoss,
  GeometryMismatch,
  MissingClassifier,
  SequenceTooShort,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FileMissing: return "FileMissing";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::OddGeometry: return "OddGeometry";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::WrongSpanLength: return "WrongSpanLength";
    case ErrorCode::InsufficientReferenceArea: return "InsufficientReferenceArea";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::PayloadLengthMismatch: return "PayloadLengthMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddSpatialDims: return "OddSpatialDims";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::UndefinedDenominator: return "UndefinedDenominator";
    case ErrorCode::ShapeUnderflow: return "ShapeUnderflow";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::GeometryMismatch: return "GeometryMismatch";
    case ErrorCode::MissingClassifier: return "MissingClassifier";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
  }
  return "Unknown";
}

/// Every failure raised by the toolkit carries one of the codes above so that
/// callers (CLI exit codes, HTTP status mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace peakit
