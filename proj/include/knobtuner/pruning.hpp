#pragma once

// Search-space pruning: stage-aware filtering of the actions a node may
// expand, and branch termination after validation, evaluation and feedback.

#include <span>
#include <string>

#include "knobtuner/actions.hpp"

namespace knobtuner {

/// Where the throughput floor after an evaluation is measured from.
enum class FloorReference {
  Baseline,     ///< default-configuration throughput measured at session start
  BranchFirst,  ///< the first evaluation on the current trajectory
};

struct PruningParams {
  bool enabled = true;
  int min_adjustments_before_validation = 2;
  int min_adjustments_before_evaluation = 3;
  int eval_window = 3;
  int max_evals_in_window = 1;
  int validation_dedup_window = 3;
  double eval_floor_ratio = 0.9;
  double feedback_gate_ratio = 0.8;
  double feedback_degrade_ratio = 0.1;
  FloorReference floor_reference = FloorReference::Baseline;
  /// Only evaluate a configuration that has just passed validation. Has no
  /// effect when A4 is ablated.
  bool evaluate_only_validated = true;

  /// Ratios must lie in (0, 1] and windows be at least 1.
  /// Throws Error{InvalidArgument}.
  void validate() const;

  /// Pruning disabled: every filter passes and no branch is terminated.
  static PruningParams off();
};

enum class PruneVerdict { Allow, Restrict, Terminate, Redirect };

std::string_view to_string(PruneVerdict v) noexcept;

struct PruneDecision {
  PruneVerdict verdict = PruneVerdict::Allow;
  ActionSet allowed;  ///< successor restriction for Restrict and Redirect
  std::string reason;

  static PruneDecision allow();
  static PruneDecision restrict(ActionSet allowed, std::string reason);
  static PruneDecision terminate(std::string reason);
  static PruneDecision redirect(ActionSet allowed, std::string reason);

  bool terminates() const noexcept { return verdict == PruneVerdict::Terminate; }
  /// Applies the restriction (if any) to a candidate set.
  ActionSet filter(ActionSet candidates) const;
};

/// States from the root to the node, inclusive.
using Trajectory = std::span<const SearchState* const>;

/// Successor kinds of the last state in `path` that survive the stage
/// rules. Always a subset of the transition table's successors.
ActionSet allowed_actions(Trajectory path, const TransitionTable& table, const PruningParams& params);

/// After an A4 node: terminate when the verdict is invalid and an A4
/// ancestor within the dedup window flagged the same knob names; restrict
/// to A5 when invalid otherwise; allow when valid.
PruneDecision after_validation(Trajectory path, const PruningParams& params);

/// After an A6 node with throughput t.
PruneDecision after_evaluation(double t, double t_init, double t_default, double t_best, const PruningParams& params);

/// After an A7 node.
PruneDecision after_feedback(double t_new, double t_prev, int feedback_round, int max_rounds,
                             const PruningParams& params);

/// Reference throughput for the evaluation floor of the last state in `path`.
double floor_reference(Trajectory path, double baseline, const PruningParams& params);

}  // namespace knobtuner
