#include "hpa/common.hpp"

namespace hpa {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInconsistentConstraint: return "InconsistentConstraint";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNotExtended: return "NotExtended";
    case ErrorCode::kDegenerateForce: return "DegenerateForce";
    case ErrorCode::kDegenerateTension: return "DegenerateTension";
    case ErrorCode::kEmptyTrace: return "EmptyTrace";
    case ErrorCode::kNoTransitions: return "NoTransitions";
    case ErrorCode::kControllerFailure: return "ControllerFailure";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace hpa
