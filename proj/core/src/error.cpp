#include "bbox/error.hpp"

namespace bbox {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::InvalidLabel: return "invalid-label";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::NoAdversarialStart: return "no-adversarial-start";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::CountMismatch: return "count-mismatch";
    case ErrorCode::UnknownGenerator: return "unknown-generator";
    case ErrorCode::ChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::Io: return "io";
    case ErrorCode::Config: return "config";
    case ErrorCode::ThreatModelViolation: return "threat-model-violation";
  }
  return "unknown";
}

}  // namespace bbox
