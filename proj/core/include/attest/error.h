#ifndef ATTEST_ERROR_H_
#define ATTEST_ERROR_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attest {

enum class ErrorCode {
  // isa
  kInvalidRegister,
  kImmediateOutOfRange,
  kUnknownOpcode,
  kInvalidEncoding,
  kSyntaxError,
  kFieldOverflow,
  // device
  kImageTooLarge,
  kBadMagic,
  kTrap,
  kNonTermination,
  kOutOfRange,
  // vf
  kLayoutOverflow,
  kShapeMismatch,
  // sake
  kAbortTiming,
  kAbortChainMismatch,
  kAbortMac,
  kTagMismatch,
  kProtocolState,
  // adversary
  kUnsupported,
  // trng
  kInsufficientParallelism,
  kSampleTooSmall,
  // cli
  kConfigError,
};

std::string_view ErrorCodeName(ErrorCode code);

// All recoverable failures in the library are reported with this type. The
// detail value carries a column (kSyntaxError) or program counter (kTrap).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, int64_t detail = -1)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const { return code_; }
  int64_t detail() const { return detail_; }

 private:
  ErrorCode code_;
  int64_t detail_;
};

}  // namespace attest

#endif  // ATTEST_ERROR_H_
