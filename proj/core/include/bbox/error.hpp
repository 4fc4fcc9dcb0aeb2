#pragma once

#include <stdexcept>
#include <string>

namespace bbox {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  InvalidLabel,
  NonFinite,
  NoAdversarialStart,
  BadMagic,
  Truncated,
  CountMismatch,
  UnknownGenerator,
  ChecksumMismatch,
  Io,
  Config,
  ThreatModelViolation,
};

const char* to_string(ErrorCode code) noexcept;

/// Structured failure raised by every module. The code is stable and is what
/// callers and tests switch on; the message carries context for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bbox
