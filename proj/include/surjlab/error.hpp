#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace surjlab {

enum class ErrorCode {
  InvalidArgument,
  NonFinite,
  DimensionMismatch,
  SingularMatrix,
  MaxIterations,
  DegenerateInput,
  NotConverged,
  SingularJacobian,
  PathFailure,
  ConeDegenerate,
  BoundaryRoot,
  DegenerateRoot,
  BoundaryValueTooClose,
  WitnessNotFound,
  NoDeadDirection,
  DegenerateJacobian,
  ParseError,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. Every failure mode carries a code so callers
/// (the CLI, the battery) can turn it into a structured report entry.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace surjlab
