#include "synthpsych/errors.hpp"

namespace synthpsych {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::MissingCredential: return "MissingCredential";
    case ErrorCode::NetworkFailure: return "NetworkFailure";
    case ErrorCode::ReplayMiss: return "ReplayMiss";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::BatchCountMismatch: return "BatchCountMismatch";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::AgeOutOfRange: return "AgeOutOfRange";
    case ErrorCode::GenerationExhausted: return "GenerationExhausted";
    case ErrorCode::BankInvalid: return "BankInvalid";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::NotAnInteger: return "NotAnInteger";
    case ErrorCode::ZeroVarianceColumn: return "ZeroVarianceColumn";
    case ErrorCode::SingularCorrelation: return "SingularCorrelation";
    case ErrorCode::DegenerateTarget: return "DegenerateTarget";
    case ErrorCode::NonPositiveDefiniteInput: return "NonPositiveDefiniteInput";
    case ErrorCode::InvalidDegreesOfFreedom: return "InvalidDegreesOfFreedom";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::PerplexityTooLarge: return "PerplexityTooLarge";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingArtifacts: return "MissingArtifacts";
    case ErrorCode::OutputExists: return "OutputExists";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingCredential:
    case ErrorCode::ReplayMiss:
    case ErrorCode::ConfigInvalid:
    case ErrorCode::BankInvalid:
      return 2;
    case ErrorCode::NetworkFailure:
    case ErrorCode::MissingArtifacts:
    case ErrorCode::OutputExists:
    case ErrorCode::IoFailure:
      return 3;
    default:
      return 1;
  }
}

}  // namespace synthpsych
