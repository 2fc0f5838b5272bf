#pragma once

#include <stdexcept>
#include <string>

namespace gprinv {

enum class ErrorCode {
  OutOfRange,
  InvalidRange,
  ObjectOutOfBounds,
  Instability,
  TooFewTraces,
  DegenerateRange,
  ShapeMismatch,
  CorruptFile,
  MissingId,
  OddSpatialDim,
  NonFinite,
  EmptySpec,
  UnsupportedKernel,
  DataUnavailable,
  NonFiniteLoss,
  IncompatibleCheckpoint,
  ZeroDynamicRange,
  InvalidConfig,
  Io,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so
// callers and tests can branch on the kind of failure, not on message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace gprinv
