#pragma once

// Session orchestration: configuration, collaborator construction,
// checkpointed search, and the tuning report.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/backend.hpp"
#include "knobtuner/evaluation.hpp"
#include "knobtuner/knowledge.hpp"
#include "knobtuner/mcts.hpp"
#include "knobtuner/pruning.hpp"

namespace knobtuner {

enum class BackendKind { Remote, Oracle, Random };
enum class EvaluatorKind { Synthetic, External };

std::string_view to_string(BackendKind k) noexcept;
std::string_view to_string(EvaluatorKind k) noexcept;
/// Throws Error{InvalidArgument} for unknown names.
BackendKind backend_kind_from_string(const std::string& s);
EvaluatorKind evaluator_kind_from_string(const std::string& s);

/// Ablation toggles. Tokens: knob, hardware, network (knowledge sources);
/// plan, cluster, single, validation (A4 and A5 together), feedback
/// (actions); pruning.
struct Ablation {
  KnowledgeMask knowledge;
  ActionSet disabled_actions;
  bool no_pruning = false;

  /// Comma-separated tokens. Throws Error{InvalidArgument} for unknown tokens
  /// and for combinations that leave no adjustment action.
  static Ablation parse(const std::string& tokens);
  std::string to_string() const;
};

struct SessionConfig {
  std::filesystem::path space_file;
  std::filesystem::path knowledge_dir;
  BackendKind backend = BackendKind::Oracle;
  EvaluatorKind evaluator = EvaluatorKind::Synthetic;
  MctsParams mcts;
  PruningParams pruning;
  Ablation ablation;
  RewardVariant reward = RewardVariant::Verbatim;
  int max_feedback_rounds = 3;

  OracleOptions oracle;
  RandomOptions random;
  SyntheticOptions synthetic;
  ExternalOptions external;

  std::filesystem::path out_dir = "knobtuner-out";
  std::optional<std::filesystem::path> resume;
  int checkpoint_every = 1;

  /// Overlays values from a JSON config file onto `base`. Unknown keys are
  /// rejected.
  static SessionConfig from_json(const nlohmann::json& j, SessionConfig base);
  static SessionConfig from_json(const nlohmann::json& j);
  /// Throws Error{InvalidArgument} describing the first problem.
  void validate() const;
};

/// One row of the evaluation log as reported.
struct EvalSummary {
  int index = 0;
  std::string kind;
  int rollout = 0;
  double throughput = 0.0;
  bool failed = false;
  bool invalid_config = false;
  std::vector<RunError> errors;
};

struct SessionReport {
  double t_default = 0.0;
  double t_best = 0.0;
  double delta_t_percent = 0.0;
  int n_star = 0;
  int evaluations = 0;  ///< excluding the baseline
  int n_neg = 0;
  int n_at_or_above = 0;
  int n_err = 0;
  int rollouts = 0;
  std::size_t tree_nodes = 0;
  std::map<std::string, int> action_counts;
  std::string stop_reason;
  std::string error;
  nlohmann::json best_config = nlohmann::json::object();
  std::vector<EvalSummary> log;
  BackendUsage usage;

  /// Deterministic JSON (no wall-clock values).
  nlohmann::json to_json() const;
  static SessionReport from_json(const nlohmann::json& j);
  /// Fixed-width summary table.
  std::string to_text() const;
};

/// Builds the report from a finished or interrupted session.
SessionReport emit_report(const SearchSession& session);

/// Wall-time breakdown: search overhead SR = total - (DP + EV + backend),
/// deployment DP, evaluation EV, backend wait, and per-action averages.
nlohmann::json timing_report(const SearchSession& session, double total_seconds);

/// Collaborators built from a configuration.
struct SessionParts {
  KnowledgeBundle bundle;
  std::shared_ptr<const SyntheticModel> model;  ///< null for external evaluation
  std::unique_ptr<Evaluator> evaluator;
  std::unique_ptr<DecisionBackend> backend;
};

/// Loads knowledge and constructs the evaluator and backend. Backend seeds
/// derive from the session seed.
SessionParts build_session_parts(const SessionConfig& config);

/// Runs a session end to end, writing report.json, timing.json,
/// summary.txt, best_config.json and checkpoint.json into the output
/// directory. `stop` is polled between rollouts; when set the session
/// writes a final checkpoint and returns.
SessionReport run_session(const SessionConfig& config, const std::atomic<bool>* stop = nullptr);

/// Writes `j` to `path` through a temporary file and rename.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace knobtuner
