#include <gtest/gtest.h>

#include <deque>
#include <random>

#include "knobtuner/errors.hpp"
#include "knobtuner/pruning.hpp"

using namespace knobtuner;
using A = ActionKind;

namespace {

// States along a trajectory; only the fields the pruner reads are set.
class Path {
 public:
  Path() { push(A::Root); }

  Path& push(A kind) {
    SearchState s;
    s.last_action = kind;
    s.depth = static_cast<int>(states_.size());
    states_.push_back(std::move(s));
    return *this;
  }
  Path& validate(std::vector<std::string> issue_knobs) {
    push(A::Validate);
    ValidationReport r;
    r.valid = issue_knobs.empty();
    for (auto& k : issue_knobs) r.issues.push_back({k, IssueCategory::Range, ""});
    if (!r.valid) states_.back().pending_issues = r.issues;
    states_.back().last_validation = r;
    return *this;
  }
  Path& evaluate(double t) {
    push(A::Evaluate);
    EvalResult e;
    e.throughput = t;
    states_.back().last_eval = e;
    return *this;
  }

  std::vector<const SearchState*> view() const {
    std::vector<const SearchState*> v;
    for (const auto& s : states_) v.push_back(&s);
    return v;
  }

 private:
  std::deque<SearchState> states_;
};

ActionSet allowed(const Path& p, const PruningParams& params = {}, const TransitionTable& table = {}) {
  const auto v = p.view();
  return allowed_actions(v, table, params);
}

}  // namespace

TEST(AllowedActions, AfterPlanOnlyClusterTuning) {
  EXPECT_EQ(allowed(Path().push(A::Plan)), ActionSet{A::ClusterTune});
  // Once a cluster pass happened on the trajectory, single-knob moves open up.
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).push(A::ClusterTune).validate({}).evaluate(1000).push(A::Plan);
  EXPECT_EQ(allowed(p), (ActionSet{A::ClusterTune, A::SingleKnob}));
}

TEST(AllowedActions, InvalidValidationOnlyFix) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({"BlockSize"});
  EXPECT_EQ(allowed(p), ActionSet{A::Fix});
}

TEST(AllowedActions, ValidValidationAdjustOrEvaluate) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).push(A::SingleKnob).validate({});
  EXPECT_EQ(allowed(p), (ActionSet{A::ClusterTune, A::SingleKnob, A::Evaluate}));
}

TEST(AllowedActions, ValidationWaitsForAdjustments) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune);
  EXPECT_FALSE(allowed(p).contains(A::Validate));
  p.push(A::ClusterTune);
  EXPECT_TRUE(allowed(p).contains(A::Validate));
  // Re-checking a fix is never gated.
  Path f;
  f.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({"x"}).push(A::Fix);
  EXPECT_EQ(allowed(f), ActionSet{A::Validate});
}

TEST(AllowedActions, EvaluationWaitsForAdjustmentsAndValidation) {
  PruningParams params;
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).push(A::ClusterTune);
  EXPECT_FALSE(allowed(p, params).contains(A::Evaluate));  // not validated yet
  params.evaluate_only_validated = false;
  EXPECT_TRUE(allowed(p, params).contains(A::Evaluate));
  Path short_path;
  short_path.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune);
  EXPECT_FALSE(allowed(short_path, params).contains(A::Evaluate));
}

TEST(AllowedActions, EvaluateOnlyValidatedIgnoredWhenValidationAblated) {
  const TransitionTable table(ActionSet{A::Validate, A::Fix});
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).push(A::ClusterTune);
  EXPECT_TRUE(allowed(p, PruningParams{}, table).contains(A::Evaluate));
}

TEST(AllowedActions, PruningOffDegeneratesToTable) {
  for (A k : kAllActions) {
    Path p;
    p.push(k);
    EXPECT_EQ(allowed(p, PruningParams::off()), valid_next(k)) << to_string(k);
  }
}

TEST(AllowedActions, AlwaysSubsetOfTable) {
  std::mt19937_64 rng(3);
  const std::vector<ActionSet> ablations = {{}, {A::Validate, A::Fix}, {A::SingleKnob}, {A::Feedback}, {A::Plan}};
  for (int trial = 0; trial < 2000; ++trial) {
    const TransitionTable table(ablations[rng() % ablations.size()]);
    PruningParams params;
    params.min_adjustments_before_validation = 1 + static_cast<int>(rng() % 4);
    params.min_adjustments_before_evaluation = 1 + static_cast<int>(rng() % 4);
    params.evaluate_only_validated = rng() & 1;
    Path p;
    A last = A::Root;
    const int len = 1 + static_cast<int>(rng() % 12);
    for (int i = 0; i < len; ++i) {
      const auto options = table.next(last).to_vector();
      if (options.empty()) break;
      last = options[rng() % options.size()];
      if (last == A::Validate) {
        p.validate(rng() & 1 ? std::vector<std::string>{} : std::vector<std::string>{"k"});
      } else if (last == A::Evaluate) {
        p.evaluate(1000);
      } else {
        p.push(last);
      }
    }
    EXPECT_TRUE(allowed(p, params, table).subset_of(table.next(last)));
  }
}

TEST(AfterValidation, RepeatedIssuesTerminate) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({"BlockSize"}).push(A::Fix).validate({"BlockSize"});
  EXPECT_TRUE(after_validation(p.view(), {}).terminates());
}

TEST(AfterValidation, FreshIssuesRestrictToFix) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({"BlockSize"}).push(A::Fix).validate({"BatchTimeout"});
  const PruneDecision d = after_validation(p.view(), {});
  EXPECT_EQ(d.verdict, PruneVerdict::Restrict);
  EXPECT_EQ(d.allowed, ActionSet{A::Fix});
}

TEST(AfterValidation, ValidAllows) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({});
  EXPECT_EQ(after_validation(p.view(), {}).verdict, PruneVerdict::Allow);
}

TEST(AfterValidation, OutsideWindowDoesNotTerminate) {
  PruningParams params;
  params.validation_dedup_window = 1;
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({"BlockSize"}).push(A::Fix).validate({"BlockSize"});
  EXPECT_FALSE(after_validation(p.view(), params).terminates());
}

TEST(AfterEvaluation, FloorTerminates) {
  EXPECT_TRUE(after_evaluation(850, 1000, 1000, 1000, {}).terminates());
  EXPECT_FALSE(after_evaluation(900, 1000, 1000, 1000, {}).terminates());
}

TEST(AfterEvaluation, FeedbackGate) {
  const PruneDecision fb = after_evaluation(1330, 1000, 1000, 1400, {});
  EXPECT_EQ(fb.verdict, PruneVerdict::Restrict);
  EXPECT_EQ(fb.allowed, (ActionSet{A::Feedback, A::Terminal}));
  const PruneDecision redirect = after_evaluation(1250, 1000, 1000, 1400, {});
  EXPECT_EQ(redirect.verdict, PruneVerdict::Redirect);
  EXPECT_EQ(redirect.allowed, (ActionSet{A::Plan, A::Terminal}));
  EXPECT_EQ(after_evaluation(1320, 1000, 1000, 1400, {}).verdict, PruneVerdict::Restrict);  // boundary is inclusive
}

TEST(AfterFeedback, DegradationAndBudget) {
  EXPECT_TRUE(after_feedback(1070, 1200, 1, 3, {}).terminates());
  const PruneDecision ok = after_feedback(1190, 1200, 1, 3, {});
  EXPECT_FALSE(ok.terminates());
  EXPECT_EQ(ok.allowed, ActionSet{A::Terminal});
  EXPECT_TRUE(after_feedback(1300, 1200, 3, 3, {}).terminates());
}

TEST(PruningOff, NeverTerminates) {
  const PruningParams off = PruningParams::off();
  EXPECT_FALSE(after_evaluation(1, 1000, 1000, 2000, off).terminates());
  EXPECT_FALSE(after_feedback(1, 1200, 9, 3, off).terminates());
  Path p;
  p.push(A::Plan).push(A::ClusterTune).push(A::ClusterTune).validate({"B"}).push(A::Fix).validate({"B"});
  EXPECT_FALSE(after_validation(p.view(), off).terminates());
}

TEST(FloorReference, BaselineOrBranchFirst) {
  Path p;
  p.push(A::Plan).push(A::ClusterTune).evaluate(1500).push(A::Plan).push(A::ClusterTune).evaluate(1600);
  PruningParams params;
  EXPECT_DOUBLE_EQ(floor_reference(p.view(), 1000, params), 1000);
  params.floor_reference = FloorReference::BranchFirst;
  EXPECT_DOUBLE_EQ(floor_reference(p.view(), 1000, params), 1500);
}

TEST(PruneDecision, FilterAppliesRestriction) {
  const ActionSet all = valid_next(A::Validate);
  EXPECT_EQ(PruneDecision::allow().filter(all), all);
  EXPECT_EQ(PruneDecision::restrict({A::Fix}, "").filter(all), ActionSet{A::Fix});
}

TEST(PruningParams, Validation) {
  PruningParams p;
  p.eval_floor_ratio = 1.5;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.eval_window = 0;
  EXPECT_THROW(p.validate(), Error);
  EXPECT_NO_THROW(PruningParams{}.validate());
}
