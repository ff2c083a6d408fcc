#include "knobtuner/pruning.hpp"

#include <algorithm>
#include <climits>
#include <set>

#include <fmt/format.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

void PruningParams::validate() const {
  auto ratio = [](double r, const char* name) {
    if (!(r > 0.0 && r <= 1.0)) throw Error(ErrorCode::InvalidArgument, fmt::format("{} must lie in (0, 1]", name));
  };
  ratio(eval_floor_ratio, "eval_floor_ratio");
  ratio(feedback_gate_ratio, "feedback_gate_ratio");
  ratio(feedback_degrade_ratio, "feedback_degrade_ratio");
  for (auto [w, name] : {std::pair{eval_window, "eval_window"}, std::pair{validation_dedup_window, "validation_dedup_window"}}) {
    if (w < 1) throw Error(ErrorCode::InvalidArgument, fmt::format("{} must be at least 1", name));
  }
  if (min_adjustments_before_validation < 0 || min_adjustments_before_evaluation < 0 || max_evals_in_window < 0) {
    throw Error(ErrorCode::InvalidArgument, "pruning thresholds must be non-negative");
  }
}

PruningParams PruningParams::off() {
  PruningParams p;
  p.enabled = false;
  p.min_adjustments_before_validation = 0;
  p.min_adjustments_before_evaluation = 0;
  p.eval_window = INT_MAX;
  p.max_evals_in_window = INT_MAX;
  p.validation_dedup_window = INT_MAX;
  p.evaluate_only_validated = false;
  return p;
}

std::string_view to_string(PruneVerdict v) noexcept {
  switch (v) {
    case PruneVerdict::Allow: return "allow";
    case PruneVerdict::Restrict: return "restrict";
    case PruneVerdict::Terminate: return "terminate";
    case PruneVerdict::Redirect: return "redirect";
  }
  return "allow";
}

PruneDecision PruneDecision::allow() { return {PruneVerdict::Allow, {}, ""}; }
PruneDecision PruneDecision::restrict(ActionSet allowed, std::string reason) {
  return {PruneVerdict::Restrict, allowed, std::move(reason)};
}
PruneDecision PruneDecision::terminate(std::string reason) { return {PruneVerdict::Terminate, {}, std::move(reason)}; }
PruneDecision PruneDecision::redirect(ActionSet allowed, std::string reason) {
  return {PruneVerdict::Redirect, allowed, std::move(reason)};
}

ActionSet PruneDecision::filter(ActionSet candidates) const {
  switch (verdict) {
    case PruneVerdict::Allow: return candidates;
    case PruneVerdict::Terminate: return {};
    default: return candidates & allowed;
  }
}

namespace {

int adjustments_since(Trajectory path, ActionKind marker) {
  int n = 0;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    if ((*it)->last_action == marker) break;
    if (is_adjustment((*it)->last_action)) ++n;
  }
  return n;
}

bool occurred(Trajectory path, ActionKind kind) {
  return std::any_of(path.begin(), path.end(), [&](const SearchState* s) { return s->last_action == kind; });
}

std::set<std::string> issue_knobs(const ValidationReport& r) {
  std::set<std::string> out;
  for (const auto& i : r.issues) out.insert(i.knob);
  return out;
}

}  // namespace

ActionSet allowed_actions(Trajectory path, const TransitionTable& table, const PruningParams& params) {
  if (path.empty()) return {};
  const SearchState& node = *path.back();
  if (node.terminal) return {};
  ActionSet out = table.next(node.last_action);
  if (!params.enabled) return out;

  // (a) Right after the plan, cluster-level tuning comes first.
  if (node.last_action == ActionKind::Plan && !table.disabled().contains(ActionKind::ClusterTune) &&
      !occurred(path, ActionKind::ClusterTune)) {
    out = out & ActionSet{ActionKind::ClusterTune};
  }
  // (b) Validation waits for enough adjustments. A4 after A5 re-checks a fix
  // and is not gated.
  if (is_adjustment(node.last_action) &&
      adjustments_since(path, ActionKind::Validate) < params.min_adjustments_before_validation) {
    out.erase(ActionKind::Validate);
  }
  // (c) Evaluation waits for enough adjustments and is not repeated too
  // densely along the trajectory.
  if (adjustments_since(path, ActionKind::Evaluate) < params.min_adjustments_before_evaluation) {
    out.erase(ActionKind::Evaluate);
  }
  if (params.eval_window < INT_MAX) {
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(params.eval_window), path.size());
    const auto evals = std::count_if(path.end() - static_cast<std::ptrdiff_t>(w), path.end(),
                                     [](const SearchState* s) { return s->last_action == ActionKind::Evaluate; });
    if (evals > params.max_evals_in_window) out.erase(ActionKind::Evaluate);
  }
  // Infeasible configurations are filtered before deployment: evaluation
  // follows a passing validation.
  if (params.evaluate_only_validated && !table.disabled().contains(ActionKind::Validate) &&
      !(node.last_action == ActionKind::Validate && node.last_validation && node.last_validation->valid)) {
    out.erase(ActionKind::Evaluate);
  }
  // (d), (e) Validation outcome.
  if (node.last_action == ActionKind::Validate && node.last_validation) {
    out = out & (node.last_validation->valid
                     ? ActionSet{ActionKind::ClusterTune, ActionKind::SingleKnob, ActionKind::Evaluate}
                     : ActionSet{ActionKind::Fix});
  }
  return out;
}

PruneDecision after_validation(Trajectory path, const PruningParams& params) {
  if (path.empty() || !path.back()->last_validation) return PruneDecision::allow();
  const ValidationReport& report = *path.back()->last_validation;
  if (report.valid) return PruneDecision::allow();
  if (!params.enabled) return PruneDecision::allow();
  const auto knobs = issue_knobs(report);
  const auto window = static_cast<std::size_t>(params.validation_dedup_window);
  for (std::size_t back = 1; back <= window && back < path.size(); ++back) {
    const SearchState& anc = *path[path.size() - 1 - back];
    if (anc.last_action != ActionKind::Validate || !anc.last_validation || anc.last_validation->valid) continue;
    if (issue_knobs(*anc.last_validation) == knobs) {
      return PruneDecision::terminate(
          fmt::format("validation repeats the issues of an ancestor {} level(s) up", back));
    }
  }
  return PruneDecision::restrict({ActionKind::Fix}, "invalid configuration; only a fix may follow");
}

PruneDecision after_evaluation(double t, double t_init, double t_default, double t_best, const PruningParams& params) {
  if (!params.enabled) return PruneDecision::allow();
  if (t < params.eval_floor_ratio * t_init) {
    return PruneDecision::terminate(
        fmt::format("throughput {:.2f} below {:.0f}% of initial {:.2f}", t, 100 * params.eval_floor_ratio, t_init));
  }
  const double gate = t_default + params.feedback_gate_ratio * (t_best - t_default);
  if (t >= gate) {
    return PruneDecision::restrict({ActionKind::Feedback, ActionKind::Terminal}, "promising result; feedback allowed");
  }
  return PruneDecision::redirect({ActionKind::Plan, ActionKind::Terminal},
                                 fmt::format("throughput {:.2f} below feedback gate {:.2f}; back to planning", t, gate));
}

PruneDecision after_feedback(double t_new, double t_prev, int feedback_round, int max_rounds,
                             const PruningParams& params) {
  if (!params.enabled) return PruneDecision::allow();
  if (t_new < (1.0 - params.feedback_degrade_ratio) * t_prev) {
    return PruneDecision::terminate(fmt::format("refinement degraded throughput from {:.2f} to {:.2f}", t_prev, t_new));
  }
  if (feedback_round >= max_rounds) return PruneDecision::terminate("feedback round budget exhausted");
  return PruneDecision::restrict({ActionKind::Terminal}, "refinement accepted");
}

double floor_reference(Trajectory path, double baseline, const PruningParams& params) {
  if (params.floor_reference == FloorReference::Baseline) return baseline;
  for (const SearchState* s : path) {
    if (s->last_action == ActionKind::Evaluate && s->last_eval) return s->last_eval->throughput;
  }
  return baseline;
}

}  // namespace knobtuner
