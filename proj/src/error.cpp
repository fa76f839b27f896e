#include "bayesprompt/error.hpp"

namespace bayesprompt {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonPositiveBandwidth: return "NonPositiveBandwidth";
    case ErrorCode::NonFiniteUpdate: return "NonFiniteUpdate";
    case ErrorCode::EmptyAfterSplit: return "EmptyAfterSplit";
    case ErrorCode::UnresolvableWord: return "UnresolvableWord";
    case ErrorCode::EmptyParticleSet: return "EmptyParticleSet";
    case ErrorCode::InvalidSpan: return "InvalidSpan";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::LabelSpaceMismatch: return "LabelSpaceMismatch";
  }
  return "Unknown";
}

}  // namespace bayesprompt
