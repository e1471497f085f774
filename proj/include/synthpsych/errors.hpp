#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace synthpsych {

enum class ErrorCode {
  InvalidInput,
  // transport
  MissingCredential,
  NetworkFailure,
  ReplayMiss,
  DimensionMismatch,
  ProtocolError,
  // persona_gen
  BatchCountMismatch,
  MalformedLine,
  AgeOutOfRange,
  GenerationExhausted,
  // scale_admin
  BankInvalid,
  LengthMismatch,
  ValueOutOfRange,
  NotAnInteger,
  // factor_engine
  ZeroVarianceColumn,
  SingularCorrelation,
  DegenerateTarget,
  NonPositiveDefiniteInput,
  InvalidDegreesOfFreedom,
  // cluster_engine
  TooFewPoints,
  PerplexityTooLarge,
  InsufficientData,
  IdMismatch,
  // cli_pipeline
  ConfigInvalid,
  MissingArtifacts,
  OutputExists,
  IoFailure,
};

std::string_view to_string(ErrorCode code);

// Process exit code for a failure: 1 analysis, 2 configuration/credential, 3 I/O.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace synthpsych
