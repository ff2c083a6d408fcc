#include "knobtuner/errors.hpp"

namespace knobtuner {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownKnob: return "UnknownKnob";
    case ErrorCode::SpaceMismatch: return "SpaceMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ExtractionRejected: return "ExtractionRejected";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::AllCandidatesRejected: return "AllCandidatesRejected";
    case ErrorCode::MissingBaseline: return "MissingBaseline";
    case ErrorCode::EvaluatorFailure: return "EvaluatorFailure";
    case ErrorCode::SpawnFailure: return "SpawnFailure";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace {

std::string join_violations(const std::vector<std::string>& violations) {
  std::string out = "schema violation";
  if (violations.size() != 1) out += "s (" + std::to_string(violations.size()) + ")";
  for (const auto& v : violations) out += "\n  " + v;
  return out;
}

}  // namespace

SchemaViolation::SchemaViolation(std::vector<std::string> violations)
    : Error(ErrorCode::SchemaViolation, join_violations(violations)),
      violations_(std::move(violations)) {}

}  // namespace knobtuner
