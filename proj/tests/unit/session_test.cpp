#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "../support/harness.hpp"
#include "knobtuner/errors.hpp"

using namespace knobtuner;
using A = ActionKind;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("knobtuner-unit-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Generated space written to disk, plus a config pointing at it.
SessionConfig disk_config(const std::string& name, int rollouts) {
  const auto dir = fresh_dir(name);
  std::ofstream(dir / "space.json") << knob_knowledge_to_json(generate_knob_knowledge({20, 4, 3, 0.8})).dump(2);
  std::ofstream(dir / "system.json") << system_context_to_json(default_system_context()).dump(2);
  SessionConfig c;
  c.space_file = dir / "space.json";
  c.knowledge_dir = dir;
  c.out_dir = dir / "out";
  c.mcts.max_rollouts = rollouts;
  c.mcts.seed = 4;
  c.synthetic.seed = 4;
  return c;
}

// Throughput 1000 for the default configuration and 1500 for anything else.
struct TwoLevel : Evaluator {
  explicit TwoLevel(Configuration def) : def(std::move(def)) {}
  std::string name() const override { return "two-level"; }
  EvalResult evaluate(const Configuration& c, const WorkloadSpec&) override {
    EvalResult r;
    r.throughput = diff_configs(c, def).empty() ? 1000.0 : 1500.0;
    return r;
  }
  Configuration def;
};

}  // namespace

TEST(Ablation, ParsesTokens) {
  const Ablation a = Ablation::parse("validation, knob,pruning");
  EXPECT_TRUE(a.disabled_actions.contains(A::Validate));
  EXPECT_TRUE(a.disabled_actions.contains(A::Fix));
  EXPECT_FALSE(a.knowledge.knob);
  EXPECT_TRUE(a.knowledge.hardware);
  EXPECT_TRUE(a.no_pruning);
  EXPECT_EQ(Ablation::parse(a.to_string()).to_string(), a.to_string());
  EXPECT_TRUE(Ablation::parse("").disabled_actions.empty());
}

TEST(Ablation, RejectsUnknownAndUnsatisfiable) {
  EXPECT_THROW(Ablation::parse("turbo"), Error);
  EXPECT_THROW(Ablation::parse("cluster,single"), Error);
}

TEST(SessionConfig, RejectsUnknownKeys) {
  try {
    SessionConfig::from_json({{"rollouts", 5}, {"rollout", 6}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("rollout"), std::string::npos);
  }
  EXPECT_THROW(SessionConfig::from_json({{"pruning", {{"floor", 0.5}}}}), Error);
}

TEST(SessionConfig, OverlaysValues) {
  const SessionConfig c = SessionConfig::from_json(
      {{"backend", "random"}, {"rollouts", 12}, {"k", 2}, {"ablate", "feedback"}, {"pruning", {{"eval_floor_ratio", 0.8}}}});
  EXPECT_EQ(c.backend, BackendKind::Random);
  EXPECT_EQ(c.mcts.max_rollouts, 12);
  EXPECT_EQ(c.mcts.children_per_expansion, 2);
  EXPECT_TRUE(c.ablation.disabled_actions.contains(A::Feedback));
  EXPECT_DOUBLE_EQ(c.pruning.eval_floor_ratio, 0.8);
  EXPECT_DOUBLE_EQ(c.pruning.feedback_gate_ratio, PruningParams{}.feedback_gate_ratio);
}

TEST(SessionConfig, ValidateCatchesMissingInputs) {
  SessionConfig c;
  EXPECT_THROW(c.validate(), Error);
  c = disk_config("validate", 3);
  EXPECT_NO_THROW(c.validate());
  c.evaluator = EvaluatorKind::External;
  EXPECT_THROW(c.validate(), Error);  // no command
}

TEST(Report, DeltaFromBaseline) {
  knobtuner::testing::HarnessOptions o;
  o.mcts.max_rollouts = 10;
  auto h = knobtuner::testing::make_harness(o);
  TwoLevel ev(h->bundle.space.default_configuration());
  SearchSession s(h->ctx, *h->backend, ev, o.mcts, PruningParams::off());
  s.run();
  const SessionReport r = emit_report(s);
  EXPECT_DOUBLE_EQ(r.t_default, 1000.0);
  EXPECT_DOUBLE_EQ(r.t_best, 1500.0);
  EXPECT_DOUBLE_EQ(r.delta_t_percent, 50.0);
  EXPECT_GE(r.n_star, 1);
  EXPECT_EQ(r.n_neg, 0);
}

TEST(Report, NoEvaluationsBeyondBaseline) {
  knobtuner::testing::HarnessOptions o;
  auto probe = knobtuner::testing::make_harness(o);
  o.mcts.target_throughput = probe->model->evaluate(probe->bundle.space.default_configuration()).throughput;
  auto h = knobtuner::testing::make_harness(o);
  h->session->run();
  const SessionReport r = emit_report(*h->session);
  EXPECT_EQ(r.evaluations, 0);
  EXPECT_EQ(r.n_star, 0);
  EXPECT_DOUBLE_EQ(r.delta_t_percent, 0.0);
  EXPECT_EQ(r.stop_reason, "target reached");
}

TEST(Report, IdentitiesAndRoundTrip) {
  knobtuner::testing::HarnessOptions o;
  o.policy = knobtuner::testing::PolicyKind::Random;
  o.mcts.max_rollouts = 20;
  auto h = knobtuner::testing::make_harness(o);
  h->session->run();
  const SessionReport r = emit_report(*h->session);
  int nodes = 0;
  for (const auto& [k, n] : r.action_counts) nodes += n;
  EXPECT_EQ(static_cast<std::size_t>(nodes), r.tree_nodes - 1);
  EXPECT_EQ(r.n_neg + r.n_at_or_above, r.evaluations);
  EXPECT_EQ(static_cast<std::size_t>(r.evaluations + 1), r.log.size());
  EXPECT_EQ(SessionReport::from_json(r.to_json()).to_json(), r.to_json());
  const std::string text = r.to_text();
  EXPECT_NE(text.find("N_err"), std::string::npos) << text;
}

TEST(RunSession, WritesArtifacts) {
  const SessionConfig c = disk_config("artifacts", 6);
  const SessionReport r = run_session(c);
  EXPECT_TRUE(r.error.empty());
  for (const char* f : {"report.json", "timing.json", "summary.txt", "best_config.json", "checkpoint.json"}) {
    EXPECT_TRUE(std::filesystem::exists(c.out_dir / f)) << f;
  }
  const auto report = read_json_file(c.out_dir / "report.json");
  EXPECT_EQ(SessionReport::from_json(report).to_json(), r.to_json());
  const auto timing = read_json_file(c.out_dir / "timing.json");
  EXPECT_TRUE(timing.contains("search_overhead_seconds"));
}

TEST(RunSession, OracleDefaultsProduceNoInvalidConfigurations) {
  const SessionReport r = run_session(disk_config("oracle", 20));
  EXPECT_EQ(r.n_err, 0);
  EXPECT_GT(r.evaluations, 0);
  EXPECT_GE(r.t_best, r.t_default);
}

TEST(RunSession, ResumeMatchesUninterruptedRun) {
  SessionConfig full = disk_config("resume-full", 12);
  const SessionReport expected = run_session(full);

  SessionConfig first = disk_config("resume-part", 5);
  run_session(first);
  SessionConfig rest = first;
  rest.mcts.max_rollouts = 12;
  rest.resume = first.out_dir / "checkpoint.json";
  rest.out_dir = first.out_dir.parent_path() / "out2";
  const SessionReport resumed = run_session(rest);
  EXPECT_EQ(resumed.to_json(), expected.to_json());
}

TEST(RunSession, StopFlagInterrupts) {
  std::atomic<bool> stop{true};
  const SessionReport r = run_session(disk_config("stop", 10), &stop);
  EXPECT_EQ(r.rollouts, 0);
  EXPECT_EQ(r.stop_reason, "interrupted");
}

TEST(RunSession, ExternalEvaluatorThroughStub) {
  SessionConfig c = disk_config("external", 3);
  c.evaluator = EvaluatorKind::External;
  c.backend = BackendKind::Random;
  c.external.command_template =
      (std::filesystem::path(KNOBTUNER_DATA_DIR) / "stubs" / "config_echo.sh").string() + " {config_path} {workload_path}";
  const SessionReport r = run_session(c);
  EXPECT_TRUE(r.error.empty()) << r.error;
  EXPECT_GT(r.t_default, 1000.0);
}

TEST(RunSession, ResumeWithWrongBackendFails) {
  SessionConfig c = disk_config("wrong-backend", 2);
  run_session(c);
  SessionConfig other = c;
  other.backend = BackendKind::Random;
  other.resume = c.out_dir / "checkpoint.json";
  other.out_dir = c.out_dir.parent_path() / "out2";
  EXPECT_THROW(run_session(other), Error);
}

TEST(BuildParts, RemoteNeedsEnvironment) {
  SessionConfig c = disk_config("remote", 2);
  c.backend = BackendKind::Remote;
  ::unsetenv("KNOBTUNER_LLM_URL");
  try {
    build_session_parts(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
}
