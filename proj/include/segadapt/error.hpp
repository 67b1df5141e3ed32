#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segadapt {

enum class Errc {
  BadMagic,
  TruncatedFile,
  BadDtypeCode,
  LabelOutOfRange,
  IoFailure,
  InvariantViolation,
  IndexOutOfRange,
  BadPgmHeader,
  EvenWindow,
  EmptySlice,
  NonPositiveSigma,
  NonPositiveRatio,
  ShapeMismatch,
  IndivisibleSpatialDims,
  AllZeroWeights,
  MissingGradient,
  NonScalarOutput,
  NonFiniteValue,
  BadConfig,
  NotAProbabilityMap,
  CorruptEntry,
  CropLargerThanSlice,
  DivergedLoss,
  MissingPretrained,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::BadDtypeCode: return "BadDtypeCode";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::BadPgmHeader: return "BadPgmHeader";
    case Errc::EvenWindow: return "EvenWindow";
    case Errc::EmptySlice: return "EmptySlice";
    case Errc::NonPositiveSigma: return "NonPositiveSigma";
    case Errc::NonPositiveRatio: return "NonPositiveRatio";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::IndivisibleSpatialDims: return "IndivisibleSpatialDims";
    case Errc::AllZeroWeights: return "AllZeroWeights";
    case Errc::MissingGradient: return "MissingGradient";
    case Errc::NonScalarOutput: return "NonScalarOutput";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::BadConfig: return "BadConfig";
    case Errc::NotAProbabilityMap: return "NotAProbabilityMap";
    case Errc::CorruptEntry: return "CorruptEntry";
    case Errc::CropLargerThanSlice: return "CropLargerThanSlice";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::MissingPretrained: return "MissingPretrained";
  }
  return "Unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace segadapt
