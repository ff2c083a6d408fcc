#include "knobtuner/mcts.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PruneVerdict verdict_from_string(const std::string& s) {
  for (auto v : {PruneVerdict::Allow, PruneVerdict::Restrict, PruneVerdict::Terminate, PruneVerdict::Redirect}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::ParseError, "unknown prune verdict '" + s + "'");
}

}  // namespace

void MctsParams::validate() const {
  if (!(exploration > 0)) throw Error(ErrorCode::InvalidArgument, "exploration constant must be positive");
  if (children_per_expansion < 1) throw Error(ErrorCode::InvalidArgument, "children per expansion must be at least 1");
  if (max_rollouts < 1) throw Error(ErrorCode::InvalidArgument, "max_rollouts must be at least 1");
  if (max_depth < 1) throw Error(ErrorCode::InvalidArgument, "max_depth must be at least 1");
}

double uct_score(double q, std::uint64_t n_edge, std::uint64_t n_node, double c) {
  const auto n = static_cast<double>(n_edge);
  return q / n + c * std::sqrt(std::log(static_cast<double>(n_node)) / n);
}

double validation_reward(bool valid) { return valid ? 1.0 : -1.0; }

double evaluation_reward(double t, double t_default, RewardVariant variant) {
  if (!(t_default > 0)) throw Error(ErrorCode::MissingBaseline, "reward needs a positive baseline throughput");
  const double x = (t - t_default) / t_default;
  if (t >= t_default) return std::exp(x);
  return variant == RewardVariant::Verbatim ? -std::exp(x) : -std::exp(-x);
}

double feedback_reward(double t, double t_default, RewardVariant variant) {
  return 1.5 * evaluation_reward(t, t_default, variant);
}

double compute_reward(const RewardOutcome& outcome, std::optional<double> t_default, RewardVariant variant) {
  if (outcome.kind == RewardOutcome::Kind::Validation) return validation_reward(outcome.valid);
  if (!t_default) throw Error(ErrorCode::MissingBaseline, "baseline throughput has not been measured");
  return outcome.kind == RewardOutcome::Kind::Evaluation ? evaluation_reward(outcome.throughput, *t_default, variant)
                                                         : feedback_reward(outcome.throughput, *t_default, variant);
}

std::optional<std::size_t> select_child(std::span<const ChildStats> children, std::uint64_t n_node, double c) {
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (!children[i].closed && children[i].n == 0) return i;
  }
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (children[i].closed) continue;
    const double s = uct_score(children[i].q, children[i].n, n_node, c);
    if (!best || s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

// Serialization.

json TreeNode::to_json() const {
  json j = {{"id", id},
            {"parent", parent},
            {"action", action.to_json()},
            {"depth", depth},
            {"children", children},
            {"expanded", expanded},
            {"pruned", pruned},
            {"prune_reason", prune_reason},
            {"closed", closed},
            {"decision", {{"verdict", std::string(to_string(decision.verdict))}, {"allowed", decision.allowed.bits()}, {"reason", decision.reason}}},
            {"shared_with", shared_with},
            {"q", q},
            {"n_edge", n_edge},
            {"visits", visits},
            {"created_seq", created_seq}};
  if (state) j["state"] = state->to_record();
  if (eval_index) j["eval_index"] = *eval_index;
  if (reward) j["reward"] = *reward;
  if (expanded_seq) j["expanded_seq"] = *expanded_seq;
  if (pruned_seq) j["pruned_seq"] = *pruned_seq;
  return j;
}

TreeNode TreeNode::from_json(const json& j) {
  TreeNode n;
  n.id = j.at("id");
  n.parent = j.at("parent");
  n.action = ActionInstance::from_json(j.at("action"));
  n.depth = j.at("depth");
  n.children = j.at("children").get<std::vector<int>>();
  n.expanded = j.at("expanded");
  n.pruned = j.at("pruned");
  n.prune_reason = j.at("prune_reason");
  n.closed = j.at("closed");
  const auto& d = j.at("decision");
  n.decision = {verdict_from_string(d.at("verdict")), ActionSet::from_bits(d.at("allowed").get<std::uint16_t>()), d.at("reason")};
  n.shared_with = j.at("shared_with");
  n.q = j.at("q");
  n.n_edge = j.at("n_edge");
  n.visits = j.at("visits");
  n.created_seq = j.at("created_seq");
  if (j.contains("state")) n.state = SearchState::from_record(j["state"]);
  if (j.contains("eval_index")) n.eval_index = j["eval_index"].get<int>();
  if (j.contains("reward")) n.reward = j["reward"].get<double>();
  if (j.contains("expanded_seq")) n.expanded_seq = j["expanded_seq"].get<std::uint64_t>();
  if (j.contains("pruned_seq")) n.pruned_seq = j["pruned_seq"].get<std::uint64_t>();
  return n;
}

int SearchTree::add(TreeNode node) {
  node.id = static_cast<int>(nodes_.size());
  if (node.parent >= 0) this->node(node.parent).children.push_back(node.id);
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

std::vector<int> SearchTree::path_to(int id) const {
  std::vector<int> path;
  for (int v = id; v >= 0; v = node(v).parent) path.push_back(v);
  std::reverse(path.begin(), path.end());
  return path;
}

json SearchTree::to_json() const {
  json out = json::array();
  for (const auto& n : nodes_) out.push_back(n.to_json());
  return out;
}

SearchTree SearchTree::from_json(const json& j) {
  SearchTree t;
  for (const auto& n : j) t.nodes_.push_back(TreeNode::from_json(n));
  return t;
}

json EvalRecord::to_json() const {
  return {{"index", index},
          {"kind", std::string(to_string(kind))},
          {"node", node},
          {"rollout", rollout},
          {"config", config.to_record()},
          {"result", result.to_record()},
          {"invalid_config", invalid_config}};
}

EvalRecord EvalRecord::from_json(const json& j) {
  EvalRecord r;
  r.index = j.at("index");
  r.kind = action_from_string(j.at("kind").get<std::string>()).value();
  r.node = j.at("node");
  r.rollout = j.at("rollout");
  r.config = Configuration::from_record(j.at("config"));
  r.result = EvalResult::from_record(j.at("result"));
  r.invalid_config = j.at("invalid_config");
  return r;
}

double BestTracker::baseline() const {
  if (log_.empty()) throw Error(ErrorCode::MissingBaseline, "baseline throughput has not been measured");
  return log_.front().result.throughput;
}

int BestTracker::record(EvalRecord rec) {
  rec.index = static_cast<int>(log_.size());
  const double t = rec.result.throughput;
  const bool usable = !rec.result.failed && !rec.invalid_config;
  if (log_.empty() || (usable && t > best_throughput_)) {
    best_throughput_ = t;
    best_config_ = rec.config;
    best_index_ = rec.index;
  }
  log_.push_back(std::move(rec));
  return log_.back().index;
}

json BestTracker::to_json() const {
  json log = json::array();
  for (const auto& r : log_) log.push_back(r.to_json());
  return {{"log", log}};
}

BestTracker BestTracker::from_json(const json& j) {
  BestTracker t;
  for (const auto& r : j.at("log")) t.record(EvalRecord::from_json(r));
  return t;
}

std::string_view to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::None: return "running";
    case StopReason::TargetReached: return "target reached";
    case StopReason::BudgetExhausted: return "rollout budget exhausted";
    case StopReason::SearchExhausted: return "search space exhausted";
    case StopReason::Interrupted: return "interrupted";
    case StopReason::Failed: return "failed";
  }
  return "running";
}

json Timings::to_json() const {
  json per = json::object();
  for (const auto& [k, v] : per_action) per[k] = {{"seconds", v.first}, {"count", v.second}};
  return {{"backend_seconds", backend_seconds},
          {"evaluation_seconds", evaluation_seconds},
          {"deploy_seconds", deploy_seconds},
          {"benchmark_seconds", benchmark_seconds},
          {"per_action", per}};
}

Timings Timings::from_json(const json& j) {
  Timings t;
  t.backend_seconds = j.value("backend_seconds", 0.0);
  t.evaluation_seconds = j.value("evaluation_seconds", 0.0);
  t.deploy_seconds = j.value("deploy_seconds", 0.0);
  t.benchmark_seconds = j.value("benchmark_seconds", 0.0);
  if (j.contains("per_action")) {
    for (const auto& [k, v] : j["per_action"].items()) t.per_action[k] = {v.at("seconds"), v.at("count")};
  }
  return t;
}

// Session.

SearchSession::SearchSession(ActionContext ctx, DecisionBackend& backend, Evaluator& evaluator, MctsParams mcts,
                             PruningParams pruning, RewardVariant reward)
    : ctx_(std::move(ctx)),
      backend_(backend),
      evaluator_(evaluator),
      mcts_(mcts),
      pruning_(pruning),
      reward_variant_(reward),
      rng_(mcts.seed) {
  if (!ctx_.space || !ctx_.bundle) throw Error(ErrorCode::InvalidArgument, "action context needs a space and a bundle");
  mcts_.validate();
  if (pruning_.enabled) pruning_.validate();
  TreeNode root;
  root.state = initial_state(*ctx_.space);
  root.created_seq = ++seq_;
  tree_.add(std::move(root));
}

EvalResult SearchSession::run_evaluation(const Configuration& config, ActionKind kind, int node) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalResult result;
  try {
    result = evaluator_.evaluate(config, ctx_.bundle->system.workload);
  } catch (const std::exception& e) {
    result = EvalResult::failure("evaluator", e.what());
  }
  const double wall = seconds_since(t0);
  timings_.evaluation_seconds += wall;
  timings_.deploy_seconds += result.deploy_seconds.value_or(0.0);
  timings_.benchmark_seconds += result.eval_seconds.value_or(wall);
  auto& slot = timings_.per_action[std::string(to_string(kind)) + "/evaluation"];
  slot.first += wall;
  slot.second += 1;

  EvalRecord rec;
  rec.kind = kind;
  rec.node = node;
  rec.rollout = rollouts_;
  rec.config = config;
  rec.result = result;
  rec.invalid_config = result.failed || !mechanical_check(*ctx_.space, config).valid;
  const int index = tracker_.record(std::move(rec));
  if (node >= 0) tree_.node(node).eval_index = index;
  spdlog::debug("evaluation #{} ({}): {:.2f} tps{}", index, to_string(kind), result.throughput,
                result.failed ? " [failed]" : "");
  return result;
}

void SearchSession::measure_baseline() {
  if (tracker_.has_baseline()) return;
  const Configuration config = ctx_.space->default_configuration();
  const EvalResult r = run_evaluation(config, ActionKind::Root, 0);
  if (r.failed || !(r.throughput > 0)) {
    const std::string why = r.run_errors.empty() ? "zero throughput" : r.run_errors.front().message;
    throw Error(ErrorCode::EvaluatorFailure, "baseline evaluation failed: " + why);
  }
  spdlog::info("baseline throughput {:.2f} tps", r.throughput);
  check_target();
}

void SearchSession::check_target() {
  if (mcts_.target_throughput && tracker_.has_baseline() && tracker_.best_throughput() >= *mcts_.target_throughput) {
    stop_ = StopReason::TargetReached;
  }
}

std::vector<const SearchState*> SearchSession::states_on_path(int id) const {
  std::vector<const SearchState*> out;
  for (int v : tree_.path_to(id)) out.push_back(&*tree_.node(v).state);
  return out;
}

void SearchSession::prune(int id, std::string reason) {
  TreeNode& n = tree_.node(id);
  if (n.pruned) return;
  n.pruned = true;
  n.prune_reason = std::move(reason);
  n.pruned_seq = ++seq_;
  n.closed = true;
  spdlog::debug("node {} ({}) pruned: {}", id, to_string(n.kind()), n.prune_reason);
  close_upward(n.parent);
}

void SearchSession::close_upward(int id) {
  for (int v = id; v >= 0; v = tree_.node(v).parent) {
    TreeNode& n = tree_.node(v);
    if (n.closed) continue;
    if (!n.expanded) return;
    const bool all = std::all_of(n.children.begin(), n.children.end(), [&](int c) { return tree_.node(c).closed; });
    if (!all) return;
    n.closed = true;
  }
}

void SearchSession::materialize(int id) {
  const int parent_id = tree_.node(id).parent;
  const ActionKind kind = tree_.node(id).kind();
  const SearchState& parent = *tree_.node(parent_id).state;

  std::optional<SearchState> shared;
  std::optional<int> shared_eval;
  if (const int group = tree_.node(id).shared_with; group >= 0) {
    for (int sib : tree_.node(parent_id).children) {
      const TreeNode& s = tree_.node(sib);
      if (s.id != id && s.shared_with == group && s.state) {
        shared = s.state;
        shared_eval = s.eval_index;
        break;
      }
    }
  }
  SearchState state;
  if (shared) {
    state = std::move(*shared);
    tree_.node(id).eval_index = shared_eval;
  } else {
    const EvalFn env = [this, kind, id](const Configuration& c) { return run_evaluation(c, kind, id); };
    state = apply_action(parent, tree_.node(id).action, ctx_, &env);
  }
  if (!state.terminal && tree_.node(id).depth >= mcts_.max_depth) {
    state.terminal = true;
    state.terminal_reason = "max depth";
  }
  tree_.node(id).state = std::move(state);

  const TreeNode& n = tree_.node(id);
  const SearchState& s = *n.state;
  PruneDecision decision = PruneDecision::allow();
  std::optional<double> reward;
  switch (kind) {
    case ActionKind::Validate:
      reward = validation_reward(s.last_validation && s.last_validation->valid);
      decision = after_validation(states_on_path(id), pruning_);
      break;
    case ActionKind::Evaluate: {
      const double t = s.last_eval->throughput;
      const double base = tracker_.baseline();
      reward = evaluation_reward(t, base, reward_variant_);
      decision = after_evaluation(t, floor_reference(states_on_path(id), base, pruning_), base,
                                  tracker_.best_throughput(), pruning_);
      break;
    }
    case ActionKind::Feedback: {
      const double t = s.last_eval->throughput;
      reward = feedback_reward(t, tracker_.baseline(), reward_variant_);
      const double prev = parent.last_eval ? parent.last_eval->throughput : tracker_.baseline();
      decision = after_feedback(t, prev, s.feedback_round, ctx_.max_feedback_rounds, pruning_);
      break;
    }
    default: break;
  }
  TreeNode& m = tree_.node(id);
  m.reward = reward;
  m.decision = decision;
  if (decision.terminates()) prune(id, decision.reason);
}

void SearchSession::expand(int id) {
  const SearchState& state = *tree_.node(id).state;
  const ActionSet allowed = tree_.node(id).decision.filter(allowed_actions(states_on_path(id), ctx_.table, pruning_));
  const int k = mcts_.children_per_expansion;

  struct Pending {
    ActionInstance action;
    bool shared = false;
  };
  std::vector<Pending> pending;
  for (ActionKind kind : allowed.to_vector()) {
    if (!action_applicable(state, kind, ctx_)) continue;
    if (kind == ActionKind::Evaluate || kind == ActionKind::Terminal) {
      ActionInstance a{kind, kind == ActionKind::Evaluate ? ActionPayload{EvaluatePayload{}} : ActionPayload{TerminalPayload{"terminal action"}}};
      for (int i = 0; i < k; ++i) pending.push_back({a, kind == ActionKind::Evaluate});
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const PromptBundle prompt =
          build_prompt(state, kind, ctx_, tracker_.has_baseline() ? std::optional(tracker_.best_throughput()) : std::nullopt);
      for (auto& a : propose(backend_, prompt, k)) pending.push_back({std::move(a), false});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllCandidatesRejected) throw;
      spdlog::debug("node {}: {}", id, e.what());
    }
    const double dt = seconds_since(t0);
    timings_.backend_seconds += dt;
    auto& slot = timings_.per_action[std::string(to_string(kind))];
    slot.first += dt;
    slot.second += 1;
  }
  rng_.shuffle(pending);

  const int depth = tree_.node(id).depth + 1;
  int group = -1;
  for (auto& p : pending) {
    TreeNode child;
    child.parent = id;
    child.action = std::move(p.action);
    child.depth = depth;
    child.created_seq = ++seq_;
    const int cid = tree_.add(std::move(child));
    if (p.shared) {
      if (group < 0) group = cid;
      tree_.node(cid).shared_with = group;
    }
  }
  TreeNode& n = tree_.node(id);
  n.expanded = true;
  n.expanded_seq = ++seq_;
  if (n.children.empty()) prune(id, "expansion exhausted");
}

bool SearchSession::step_rollout() {
  if (stop_ != StopReason::None) return false;
  if (!tracker_.has_baseline()) measure_baseline();
  check_target();
  if (stop_ == StopReason::None && rollouts_ >= mcts_.max_rollouts) stop_ = StopReason::BudgetExhausted;
  if (stop_ != StopReason::None) return false;

  std::vector<int> path;
  while (true) {
    if (tree_.root().closed) {
      stop_ = StopReason::SearchExhausted;
      return false;
    }
    path.assign(1, 0);
    int v = 0;
    bool restart = false;
    while (true) {
      if (!tree_.node(v).state) materialize(v);
      if (tree_.node(v).pruned || tree_.node(v).state->terminal) break;
      if (!tree_.node(v).expanded) {
        expand(v);
        if (tree_.node(v).pruned) break;
      }
      const TreeNode& n = tree_.node(v);
      std::vector<ChildStats> stats;
      stats.reserve(n.children.size());
      for (int c : n.children) {
        const TreeNode& ch = tree_.node(c);
        stats.push_back({ch.q, ch.n_edge, ch.closed});
      }
      const auto pick = select_child(stats, n.visits, mcts_.exploration);
      if (!pick) {
        // Every child closed since the last audit; close and retry.
        tree_.node(v).closed = true;
        close_upward(n.parent);
        restart = true;
        break;
      }
      v = n.children[*pick];
      path.push_back(v);
    }
    if (!restart) break;
  }

  double r = 0.0;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    if (const auto& rw = tree_.node(*it).reward) {
      r = *rw;
      break;
    }
  }
  for (std::size_t i = 0; i < path.size(); ++i) {
    TreeNode& n = tree_.node(path[i]);
    n.visits += 1;
    if (i > 0) {
      n.q += r;
      n.n_edge += 1;
    }
  }
  const int leaf = path.back();
  if (tree_.node(leaf).state->terminal) {
    tree_.node(leaf).closed = true;
    close_upward(tree_.node(leaf).parent);
  }
  trajectories_.push_back(std::move(path));
  ++rollouts_;
  spdlog::debug("rollout {} finished at depth {} with reward {:.4f}; best {:.2f} tps", rollouts_,
                tree_.node(leaf).depth, r, tracker_.best_throughput());

  check_target();
  if (stop_ == StopReason::None && rollouts_ >= mcts_.max_rollouts) stop_ = StopReason::BudgetExhausted;
  if (stop_ == StopReason::None && tree_.root().closed) stop_ = StopReason::SearchExhausted;
  return true;
}

StopReason SearchSession::run(const std::function<bool()>& interrupted) {
  while (stop_ == StopReason::None) {
    if (interrupted && interrupted()) {
      stop_ = StopReason::Interrupted;
      break;
    }
    step_rollout();
  }
  return stop_;
}

json SearchSession::checkpoint() const {
  json traj = json::array();
  for (const auto& t : trajectories_) traj.push_back(t);
  return {{"format", "knobtuner-checkpoint/1"},
          {"tree", tree_.to_json()},
          {"tracker", tracker_.to_json()},
          {"rng", rng_.state()},
          {"backend", {{"name", backend_.name()}, {"state", backend_.save_state()}, {"usage", backend_.usage().to_json()}}},
          {"trajectories", traj},
          {"rollouts", rollouts_},
          {"seq", seq_},
          {"timings", timings_.to_json()}};
}

void SearchSession::restore(const json& j) {
  if (j.value("format", "") != "knobtuner-checkpoint/1") throw Error(ErrorCode::ParseError, "not a search checkpoint");
  const auto& b = j.at("backend");
  if (b.at("name").get<std::string>() != backend_.name()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("checkpoint was written with backend '{}', not '{}'", b.at("name").get<std::string>(), backend_.name()));
  }
  tree_ = SearchTree::from_json(j.at("tree"));
  tracker_ = BestTracker::from_json(j.at("tracker"));
  rng_.restore(j.at("rng").get<std::string>());
  backend_.load_state(b.at("state"));
  backend_.set_usage(BackendUsage::from_json(b.at("usage")));
  trajectories_.clear();
  for (const auto& t : j.at("trajectories")) trajectories_.push_back(t.get<std::vector<int>>());
  rollouts_ = j.at("rollouts");
  seq_ = j.at("seq");
  timings_ = Timings::from_json(j.at("timings"));
  stop_ = StopReason::None;
}

}  // namespace knobtuner
