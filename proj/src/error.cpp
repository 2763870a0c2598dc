#include "circulate/error.hpp"

#include <array>
#include <utility>

namespace circulate {
namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 25> kNames{{
    {ErrorCode::kNone, "None"},
    {ErrorCode::kMalformedDocument, "MalformedDocument"},
    {ErrorCode::kDanglingEdge, "DanglingEdge"},
    {ErrorCode::kDuplicateTaskId, "DuplicateTaskId"},
    {ErrorCode::kCycleDetected, "CycleDetected"},
    {ErrorCode::kPayloadOnControlMessage, "PayloadOnControlMessage"},
    {ErrorCode::kTruncatedFrame, "TruncatedFrame"},
    {ErrorCode::kBadHeader, "BadHeader"},
    {ErrorCode::kUnknownSite, "UnknownSite"},
    {ErrorCode::kIoFailure, "IoFailure"},
    {ErrorCode::kUnreachable, "Unreachable"},
    {ErrorCode::kReferenceNotStaged, "ReferenceNotStaged"},
    {ErrorCode::kReferenceNotFound, "ReferenceNotFound"},
    {ErrorCode::kUnknownServiceOp, "UnknownServiceOp"},
    {ErrorCode::kServiceFailure, "ServiceFailure"},
    {ErrorCode::kTargetUnreachable, "TargetUnreachable"},
    {ErrorCode::kWriteConflict, "WriteConflict"},
    {ErrorCode::kIntegrityViolation, "IntegrityViolation"},
    {ErrorCode::kTaskFailed, "TaskFailed"},
    {ErrorCode::kBadParams, "BadParams"},
    {ErrorCode::kGeneMismatch, "GeneMismatch"},
    {ErrorCode::kDuplicateRegion, "DuplicateRegion"},
    {ErrorCode::kTooFewSites, "TooFewSites"},
    {ErrorCode::kEquivalenceViolation, "EquivalenceViolation"},
    {ErrorCode::kCounterDrift, "CounterDrift"},
}};

}  // namespace

std::string_view to_string(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Unknown";
}

ErrorCode error_code_from_string(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return ErrorCode::kNone;
}

}  // namespace circulate
