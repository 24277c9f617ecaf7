#include "vreid/error.hpp"

namespace vreid {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::MissingLayer: return "MissingLayer";
    case ErrorCode::LayerMismatch: return "LayerMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::ZeroTargetSize: return "ZeroTargetSize";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::NonPositiveGamma: return "NonPositiveGamma";
    case ErrorCode::MissingPrototype: return "MissingPrototype";
    case ErrorCode::MissingLabeledPrototype: return "MissingLabeledPrototype";
    case ErrorCode::DuplicateLabel: return "DuplicateLabel";
    case ErrorCode::BadThreshold: return "BadThreshold";
    case ErrorCode::DegenerateDataset: return "DegenerateDataset";
    case ErrorCode::DegenerateClusters: return "DegenerateClusters";
    case ErrorCode::NoTrainingPairs: return "NoTrainingPairs";
    case ErrorCode::UnknownVehicle: return "UnknownVehicle";
    case ErrorCode::NegativeWeight: return "NegativeWeight";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::QueryWithoutMatch: return "QueryWithoutMatch";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::RegionOverflow: return "RegionOverflow";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::EigenFailure: return "EigenFailure";
  }
  return "Unknown";
}

ErrorCategory error_category(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFiniteActivation:
    case ErrorCode::EigenFailure:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace vreid
