#pragma once

// The eight tuning actions: ordering rules, typed payloads, per-action
// prompts, reply parsing, and the state transition function.

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/config_model.hpp"
#include "knobtuner/evaluation.hpp"
#include "knobtuner/knowledge.hpp"

namespace knobtuner {

enum class ActionKind : std::uint8_t {
  Root,
  Plan,         // A1
  ClusterTune,  // A2
  SingleKnob,   // A3
  Validate,     // A4
  Fix,          // A5
  Evaluate,     // A6
  Feedback,     // A7
  Terminal,     // A8
};

inline constexpr std::array<ActionKind, 8> kAllActions = {
    ActionKind::Plan,     ActionKind::ClusterTune, ActionKind::SingleKnob, ActionKind::Validate,
    ActionKind::Fix,      ActionKind::Evaluate,    ActionKind::Feedback,   ActionKind::Terminal};

/// "Root", "A1" .. "A8".
std::string_view to_string(ActionKind kind) noexcept;
std::string_view describe(ActionKind kind) noexcept;
std::optional<ActionKind> action_from_string(std::string_view s);

/// Actions whose instances come from the decision backend.
constexpr bool is_backend_action(ActionKind k) noexcept {
  return k != ActionKind::Root && k != ActionKind::Evaluate && k != ActionKind::Terminal;
}

/// Actions that adjust knob values as part of exploration (A2, A3).
constexpr bool is_adjustment(ActionKind k) noexcept {
  return k == ActionKind::ClusterTune || k == ActionKind::SingleKnob;
}

class ActionSet {
 public:
  constexpr ActionSet() = default;
  constexpr ActionSet(std::initializer_list<ActionKind> kinds) {
    for (auto k : kinds) insert(k);
  }

  constexpr bool contains(ActionKind k) const noexcept { return bits_ & bit(k); }
  constexpr void insert(ActionKind k) noexcept { bits_ |= bit(k); }
  constexpr void erase(ActionKind k) noexcept { bits_ &= static_cast<std::uint16_t>(~bit(k)); }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  std::size_t size() const noexcept;
  constexpr bool subset_of(ActionSet other) const noexcept { return (bits_ & ~other.bits_) == 0; }

  constexpr ActionSet operator&(ActionSet o) const noexcept { return from_bits(bits_ & o.bits_); }
  constexpr ActionSet operator|(ActionSet o) const noexcept { return from_bits(bits_ | o.bits_); }
  constexpr bool operator==(const ActionSet&) const noexcept = default;

  /// Members in A1..A8 order.
  std::vector<ActionKind> to_vector() const;
  std::string to_string() const;
  std::uint16_t bits() const noexcept { return bits_; }
  static constexpr ActionSet from_bits(std::uint16_t b) noexcept {
    ActionSet s;
    s.bits_ = b;
    return s;
  }

 private:
  static constexpr std::uint16_t bit(ActionKind k) noexcept {
    return static_cast<std::uint16_t>(1u << static_cast<unsigned>(k));
  }
  std::uint16_t bits_ = 0;
};

/// The action ordering table:
///   Root -> A1;  A1 -> A2,A3;  A2 -> A2,A3,A4,A6;  A3 -> A2,A3,A4;
///   A4 -> A2,A3,A5,A6,A8;  A5 -> A4;  A6 -> A1,A7,A8;  A7 -> A8;  A8 -> none.
ActionSet valid_next(ActionKind kind) noexcept;

/// Ordering table with some actions ablated. A disabled action is removed
/// from every successor set; a row left empty that way takes the successors
/// of its disabled members instead. Disabling both A2 and A3 is rejected.
class TransitionTable {
 public:
  TransitionTable() = default;
  /// Throws Error{InvalidArgument} when no adjustment path would remain or
  /// when Root, A6 or A8 is listed.
  explicit TransitionTable(ActionSet disabled);

  ActionSet next(ActionKind kind) const;
  ActionSet disabled() const noexcept { return disabled_; }

 private:
  ActionSet disabled_;
};

// Payloads.

enum class IssueCategory { Range, Format, LogicalConflict };

std::string_view to_string(IssueCategory c) noexcept;

struct Issue {
  std::string knob;
  IssueCategory category = IssueCategory::Range;
  std::string explanation;
};

struct ValidationReport {
  bool valid = true;
  std::vector<Issue> issues;
};

struct PlanPayload {
  std::string text;
  std::vector<std::string> cluster_order;
};

struct ClusterPayload {
  std::string cluster;
  Assignment assignments;
  std::string reasoning;
};

struct SingleKnobPayload {
  std::string knob;
  Value value;
  std::string reasoning;
};

/// Backend's logical-consistency verdict; range/format checks are added
/// mechanically when the action is applied.
struct ValidatePayload {
  bool valid = true;
  std::vector<Issue> issues;
};

struct FixPayload {
  Assignment assignments;
};

struct EvaluatePayload {};

struct FeedbackPayload {
  Assignment assignments;
  std::string bottleneck_analysis;
};

struct TerminalPayload {
  std::string reason;
};

using ActionPayload = std::variant<std::monostate, PlanPayload, ClusterPayload, SingleKnobPayload,
                                   ValidatePayload, FixPayload, EvaluatePayload, FeedbackPayload,
                                   TerminalPayload>;

struct ActionInstance {
  ActionKind kind = ActionKind::Root;
  ActionPayload payload;

  /// Machine-consumed content only; two candidates with the same identity
  /// are duplicates.
  std::string identity() const;
  nlohmann::json to_json() const;
  static ActionInstance from_json(const nlohmann::json& j);
};

// Search state.

struct SearchState {
  Configuration config;
  std::set<std::string> tuned;
  std::vector<std::string> untuned_clusters;
  std::optional<PlanPayload> plan;
  ActionKind last_action = ActionKind::Root;
  std::optional<std::vector<Issue>> pending_issues;
  std::optional<ValidationReport> last_validation;
  std::optional<EvalResult> last_eval;
  int feedback_round = 0;
  int depth = 0;
  bool terminal = false;
  std::string terminal_reason;

  bool has_pending_issues() const { return pending_issues && !pending_issues->empty(); }

  nlohmann::json to_record() const;
  static SearchState from_record(const nlohmann::json& j);
};

SearchState initial_state(const ConfigSpace& space);

/// Knowledge sources that may be withheld from prompts.
struct KnowledgeMask {
  bool knob = true;
  bool hardware = true;
  bool network = true;
};

struct ActionContext {
  const ConfigSpace* space = nullptr;
  const KnowledgeBundle* bundle = nullptr;
  TransitionTable table;
  KnowledgeMask knowledge;
  int max_feedback_rounds = 3;
};

/// Preconditions beyond the ordering table: A5 needs pending issues, A7 needs
/// a prior evaluation and remaining feedback budget, terminal states accept
/// nothing.
bool action_applicable(const SearchState& state, ActionKind kind, const ActionContext& ctx);

struct PromptBundle {
  ActionKind kind = ActionKind::Root;
  bool empty = false;  ///< no decision required (A6, A8)
  std::string instructions;
  std::string context;
  std::string reply_schema;
  std::optional<double> best_throughput;

  // Structured view for in-process policies.
  const SearchState* state = nullptr;
  const ActionContext* ctx = nullptr;

  std::string render() const;
};

/// Throws Error{IllegalTransition} when `kind` cannot follow the state.
PromptBundle build_prompt(const SearchState& state, ActionKind kind, const ActionContext& ctx,
                          std::optional<double> best_throughput = std::nullopt);

/// Parses and validates one backend reply for `kind`. Unknown fields are
/// ignored. Throws SchemaViolation naming every problem.
ActionInstance parse_reply(ActionKind kind, const nlohmann::json& reply, const SearchState& state,
                           const ActionContext& ctx);

/// Range and format checks computed from the space alone.
ValidationReport mechanical_check(const ConfigSpace& space, const Configuration& config);

using EvalFn = std::function<EvalResult(const Configuration&)>;

/// Successor state. The input is not modified. A6 and A7 call `env`;
/// evaluator exceptions are recorded as run errors.
/// Throws Error{IllegalTransition} for disallowed or inapplicable actions.
SearchState apply_action(const SearchState& state, const ActionInstance& action, const ActionContext& ctx,
                         const EvalFn* env = nullptr);

}  // namespace knobtuner
