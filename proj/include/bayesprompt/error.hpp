#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bayesprompt {

enum class ErrorCode {
  MagicMismatch,
  TruncatedPayload,
  LabelOutOfRange,
  NonFiniteValue,
  IoFailure,
  InvalidConfig,
  TooFewSamples,
  DimensionMismatch,
  NonPositiveBandwidth,
  NonFiniteUpdate,
  EmptyAfterSplit,
  UnresolvableWord,
  EmptyParticleSet,
  InvalidSpan,
  EmptyBatch,
  LabelSpaceMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure the library reports carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bayesprompt
