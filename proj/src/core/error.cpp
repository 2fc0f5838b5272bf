#include "gprinv/error.hpp"

namespace gprinv {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::ObjectOutOfBounds: return "ObjectOutOfBounds";
    case ErrorCode::Instability: return "Instability";
    case ErrorCode::TooFewTraces: return "TooFewTraces";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::MissingId: return "MissingId";
    case ErrorCode::OddSpatialDim: return "OddSpatialDim";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptySpec: return "EmptySpec";
    case ErrorCode::UnsupportedKernel: return "UnsupportedKernel";
    case ErrorCode::DataUnavailable: return "DataUnavailable";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::ZeroDynamicRange: return "ZeroDynamicRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace gprinv
