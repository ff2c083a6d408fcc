#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace knobtuner {

enum class ErrorCode {
  UnknownKnob,
  SpaceMismatch,
  ParseError,
  SchemaViolation,
  BackendUnavailable,
  ExtractionRejected,
  IllegalTransition,
  AllCandidatesRejected,
  MissingBaseline,
  EvaluatorFailure,
  SpawnFailure,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

// Base error for the whole library. The code lets callers branch without
// string matching; what() carries the diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// A schema violation carries every offending field, each prefixed with a
// JSON-pointer-style path.
class SchemaViolation : public Error {
 public:
  explicit SchemaViolation(std::vector<std::string> violations);

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

}  // namespace knobtuner
