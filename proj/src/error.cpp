#include "reldist/error.hpp"

namespace reldist {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::NotOnTape: return "NotOnTape";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::DegenerateBeacons: return "DegenerateBeacons";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::AllZeroWeights: return "AllZeroWeights";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::WidthNotDivisible: return "WidthNotDivisible";
    case ErrorCode::SampleTooLarge: return "SampleTooLarge";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace reldist
