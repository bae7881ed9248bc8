#ifndef LIDARSEG_ERROR_HPP
#define LIDARSEG_ERROR_HPP

#include <stdexcept>
#include <string>

namespace lidarseg {

enum class ErrorCode {
  SizeNotMultipleOf16,
  NonFiniteValue,
  BadMagic,
  UnsupportedDtypeOrShape,
  LengthMismatch,
  ZeroPoint,
  MissingChannel,
  ShapeMismatch,
  NonFiniteProbability,
  OddSpatialDim,
  IndivisibleSpatialDims,
  NonScalarLoss,
  EmptyDataset,
  ShapeHeterogeneity,
  DegenerateConfig,
  InvalidArgument,
  IoFailure,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::SizeNotMultipleOf16: return "SizeNotMultipleOf16";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDtypeOrShape: return "UnsupportedDtypeOrShape";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroPoint: return "ZeroPoint";
    case ErrorCode::MissingChannel: return "MissingChannel";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteProbability: return "NonFiniteProbability";
    case ErrorCode::OddSpatialDim: return "OddSpatialDim";
    case ErrorCode::IndivisibleSpatialDims: return "IndivisibleSpatialDims";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::ShapeHeterogeneity: return "ShapeHeterogeneity";
    case ErrorCode::DegenerateConfig: return "DegenerateConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "UnknownError";
}

}  // namespace lidarseg

#endif  // LIDARSEG_ERROR_HPP
