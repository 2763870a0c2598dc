#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace circulate {

enum class ErrorCode {
  kNone,
  // workflow documents
  kMalformedDocument,
  kDanglingEdge,
  kDuplicateTaskId,
  kCycleDetected,
  // wire protocol and network
  kPayloadOnControlMessage,
  kTruncatedFrame,
  kBadHeader,
  kUnknownSite,
  kIoFailure,
  kUnreachable,
  // proxy
  kReferenceNotStaged,
  kReferenceNotFound,
  kUnknownServiceOp,
  kServiceFailure,
  kTargetUnreachable,
  kWriteConflict,
  kIntegrityViolation,
  // orchestrator
  kTaskFailed,
  // workloads
  kBadParams,
  kGeneMismatch,
  kDuplicateRegion,
  // bench
  kTooFewSites,
  kEquivalenceViolation,
  kCounterDrift,
};

std::string_view to_string(ErrorCode code);
// Unknown names map to kNone.
ErrorCode error_code_from_string(std::string_view name);

// Every failure in the library surfaces as this exception. `cause` carries the
// underlying code when an error wraps another (TaskFailed over ServiceFailure).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail, ErrorCode cause = ErrorCode::kNone)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        cause_(cause),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCode cause() const noexcept { return cause_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  ErrorCode cause_;
  std::string detail_;
};

}  // namespace circulate
