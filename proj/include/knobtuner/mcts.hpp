#pragma once

// Monte Carlo tree search over tuning actions: UCT selection, expansion
// with k samples per action kind, rollouts to a terminal or pruned node,
// reward backpropagation, and best-configuration tracking.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/actions.hpp"
#include "knobtuner/backend.hpp"
#include "knobtuner/evaluation.hpp"
#include "knobtuner/pruning.hpp"
#include "knobtuner/rng.hpp"

namespace knobtuner {

struct MctsParams {
  double exploration = 1.4142135623730951;  ///< c
  int children_per_expansion = 3;           ///< k
  int max_rollouts = 30;
  int max_depth = 40;
  std::optional<double> target_throughput;
  std::uint64_t seed = 1;

  /// Throws Error{InvalidArgument} unless c > 0, k >= 1, max_rollouts >= 1
  /// and max_depth >= 1.
  void validate() const;
};

/// UCT(v, a) = Q/N(v,a) + c * sqrt(ln N(v) / N(v,a)). Requires n_edge >= 1.
double uct_score(double q, std::uint64_t n_edge, std::uint64_t n_node, double c);

/// Negative branch of the evaluation reward.
enum class RewardVariant {
  Verbatim,  ///< -exp((T - T_def) / T_def): jumps from -1 to +1 at T = T_def
  Mirrored,  ///< -exp(-(T - T_def) / T_def): continuous at -1, deepening as T falls
};

double validation_reward(bool valid);
/// Throws Error{MissingBaseline} unless t_default > 0.
double evaluation_reward(double t, double t_default, RewardVariant variant = RewardVariant::Verbatim);
double feedback_reward(double t, double t_default, RewardVariant variant = RewardVariant::Verbatim);

struct RewardOutcome {
  enum class Kind { Validation, Evaluation, Feedback } kind = Kind::Evaluation;
  bool valid = true;
  double throughput = 0.0;
};

/// Throws Error{MissingBaseline} for throughput outcomes without a baseline.
double compute_reward(const RewardOutcome& outcome, std::optional<double> t_default,
                      RewardVariant variant = RewardVariant::Verbatim);

struct ChildStats {
  double q = 0.0;
  std::uint64_t n = 0;
  bool closed = false;  ///< pruned or fully explored
};

/// First open child with n == 0 in insertion order, otherwise the open child
/// with the highest UCT score (ties to the earlier child). nullopt when all
/// children are closed.
std::optional<std::size_t> select_child(std::span<const ChildStats> children, std::uint64_t n_node, double c);

// Tree.

struct TreeNode {
  int id = 0;
  int parent = -1;
  ActionInstance action;
  /// Materialized on first visit; A6/A7 run their evaluation at that point.
  std::optional<SearchState> state;
  int depth = 0;
  std::vector<int> children;  ///< insertion order
  bool expanded = false;
  bool pruned = false;
  std::string prune_reason;
  bool closed = false;  ///< pruned, visited terminal, or every child closed
  PruneDecision decision;
  /// Replicated A6 children point at the sibling that holds the evaluation.
  int shared_with = -1;
  std::optional<int> eval_index;

  // Statistics. q and n_edge belong to the edge from the parent.
  double q = 0.0;
  std::uint64_t n_edge = 0;
  std::uint64_t visits = 0;
  std::optional<double> reward;

  // Event sequence numbers for structural audits.
  std::uint64_t created_seq = 0;
  std::optional<std::uint64_t> expanded_seq;
  std::optional<std::uint64_t> pruned_seq;

  ActionKind kind() const noexcept { return action.kind; }
  nlohmann::json to_json() const;
  static TreeNode from_json(const nlohmann::json& j);
};

class SearchTree {
 public:
  const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  TreeNode& node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const TreeNode& root() const { return nodes_.front(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }

  int add(TreeNode node);
  /// Node ids from the root to `id`, inclusive.
  std::vector<int> path_to(int id) const;

  nlohmann::json to_json() const;
  static SearchTree from_json(const nlohmann::json& j);

 private:
  std::vector<TreeNode> nodes_;
};

struct EvalRecord {
  int index = 0;  ///< 0 is the baseline
  ActionKind kind = ActionKind::Root;
  int node = -1;
  int rollout = 0;
  Configuration config;
  EvalResult result;
  bool invalid_config = false;  ///< mechanically invalid or failed to deploy/run

  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
};

class BestTracker {
 public:
  bool has_baseline() const noexcept { return !log_.empty(); }
  /// Throws Error{MissingBaseline} before the baseline is recorded.
  double baseline() const;
  double best_throughput() const noexcept { return best_throughput_; }
  const Configuration& best_config() const noexcept { return best_config_; }
  int best_index() const noexcept { return best_index_; }
  const std::vector<EvalRecord>& log() const noexcept { return log_; }
  std::size_t evaluations() const noexcept { return log_.size(); }

  /// Appends to the log; the first record is the baseline. Returns the index.
  int record(EvalRecord rec);

  nlohmann::json to_json() const;
  static BestTracker from_json(const nlohmann::json& j);

 private:
  std::vector<EvalRecord> log_;
  Configuration best_config_;
  double best_throughput_ = 0.0;
  int best_index_ = 0;
};

enum class StopReason { None, TargetReached, BudgetExhausted, SearchExhausted, Interrupted, Failed };

std::string_view to_string(StopReason r) noexcept;

/// Wall-clock accounting; excluded from deterministic reports.
struct Timings {
  double backend_seconds = 0.0;
  double evaluation_seconds = 0.0;
  double deploy_seconds = 0.0;
  double benchmark_seconds = 0.0;
  std::map<std::string, std::pair<double, std::uint64_t>> per_action;  ///< kind -> (seconds, count)

  nlohmann::json to_json() const;
  static Timings from_json(const nlohmann::json& j);
};

/// One tuning search. Owns the tree; borrows the backend, evaluator and
/// knowledge through the action context.
class SearchSession {
 public:
  SearchSession(ActionContext ctx, DecisionBackend& backend, Evaluator& evaluator, MctsParams mcts,
                PruningParams pruning, RewardVariant reward = RewardVariant::Verbatim);

  /// Evaluates the default configuration. Throws Error{EvaluatorFailure}
  /// when it fails or yields no throughput.
  void measure_baseline();

  /// Runs one rollout. Returns false once the search has stopped.
  bool step_rollout();
  /// Runs until a stop condition; `interrupted` is polled between rollouts.
  StopReason run(const std::function<bool()>& interrupted = {});

  bool stopped() const noexcept { return stop_ != StopReason::None; }
  StopReason stop_reason() const noexcept { return stop_; }
  void interrupt() { stop_ = StopReason::Interrupted; }

  int rollouts() const noexcept { return rollouts_; }
  const SearchTree& tree() const noexcept { return tree_; }
  const BestTracker& tracker() const noexcept { return tracker_; }
  const std::vector<std::vector<int>>& trajectories() const noexcept { return trajectories_; }
  const Timings& timings() const noexcept { return timings_; }
  const DecisionBackend& backend() const noexcept { return backend_; }
  const MctsParams& mcts_params() const noexcept { return mcts_; }
  const PruningParams& pruning_params() const noexcept { return pruning_; }
  const ActionContext& context() const noexcept { return ctx_; }

  nlohmann::json checkpoint() const;
  /// Replaces all search state, including backend state and usage.
  void restore(const nlohmann::json& checkpoint);

 private:
  std::vector<const SearchState*> states_on_path(int id) const;
  void materialize(int id);
  void expand(int id);
  void prune(int id, std::string reason);
  void close_upward(int id);
  EvalResult run_evaluation(const Configuration& config, ActionKind kind, int node);
  void check_target();

  ActionContext ctx_;
  DecisionBackend& backend_;
  Evaluator& evaluator_;
  MctsParams mcts_;
  PruningParams pruning_;
  RewardVariant reward_variant_;

  SearchTree tree_;
  BestTracker tracker_;
  Rng rng_;
  std::vector<std::vector<int>> trajectories_;
  int rollouts_ = 0;
  std::uint64_t seq_ = 0;
  StopReason stop_ = StopReason::None;
  Timings timings_;
};

}  // namespace knobtuner
