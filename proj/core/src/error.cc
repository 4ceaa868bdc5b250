#include "attest/error.h"

namespace attest {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidRegister: return "InvalidRegister";
    case ErrorCode::kImmediateOutOfRange: return "ImmediateOutOfRange";
    case ErrorCode::kUnknownOpcode: return "UnknownOpcode";
    case ErrorCode::kInvalidEncoding: return "InvalidEncoding";
    case ErrorCode::kSyntaxError: return "SyntaxError";
    case ErrorCode::kFieldOverflow: return "FieldOverflow";
    case ErrorCode::kImageTooLarge: return "ImageTooLarge";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTrap: return "Trap";
    case ErrorCode::kNonTermination: return "NonTermination";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kLayoutOverflow: return "LayoutOverflow";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kAbortTiming: return "AbortTiming";
    case ErrorCode::kAbortChainMismatch: return "AbortChainMismatch";
    case ErrorCode::kAbortMac: return "AbortMac";
    case ErrorCode::kTagMismatch: return "TagMismatch";
    case ErrorCode::kProtocolState: return "ProtocolState";
    case ErrorCode::kUnsupported: return "Unsupported";
    case ErrorCode::kInsufficientParallelism: return "InsufficientParallelism";
    case ErrorCode::kSampleTooSmall: return "SampleTooSmall";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace attest
