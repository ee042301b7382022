#include "surjlab/error.hpp"

namespace surjlab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::PathFailure: return "PathFailure";
    case ErrorCode::ConeDegenerate: return "ConeDegenerate";
    case ErrorCode::BoundaryRoot: return "BoundaryRoot";
    case ErrorCode::DegenerateRoot: return "DegenerateRoot";
    case ErrorCode::BoundaryValueTooClose: return "BoundaryValueTooClose";
    case ErrorCode::WitnessNotFound: return "WitnessNotFound";
    case ErrorCode::NoDeadDirection: return "NoDeadDirection";
    case ErrorCode::DegenerateJacobian: return "DegenerateJacobian";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace surjlab
