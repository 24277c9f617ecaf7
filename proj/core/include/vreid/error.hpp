#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vreid {

enum class ErrorCode {
  // input / data
  MissingFile,
  BadMagic,
  TruncatedPayload,
  NonFiniteValue,
  BadManifest,
  EmptyManifest,
  MissingLayer,
  LayerMismatch,
  ShapeMismatch,
  DimMismatch,
  EmptyMask,
  EmptyList,
  ZeroTargetSize,
  IoError,
  // models / training
  StaleCache,
  LabelOutOfRange,
  BadConfig,
  TooFewPoints,
  NonPositiveGamma,
  MissingPrototype,
  MissingLabeledPrototype,
  DuplicateLabel,
  BadThreshold,
  DegenerateDataset,
  DegenerateClusters,
  NoTrainingPairs,
  UnknownVehicle,
  NegativeWeight,
  EmptyGallery,
  QueryWithoutMatch,
  MissingGroundTruth,
  RegionOverflow,
  // numeric
  NonFiniteActivation,
  EigenFailure,
};

/// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorCategory { Data, Numeric };

std::string_view error_code_name(ErrorCode code) noexcept;
ErrorCategory error_category(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return error_category(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace vreid
