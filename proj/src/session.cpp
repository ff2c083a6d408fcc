#include "knobtuner/session.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

using nlohmann::json;

std::string_view to_string(BackendKind k) noexcept {
  switch (k) {
    case BackendKind::Remote: return "remote";
    case BackendKind::Oracle: return "oracle";
    case BackendKind::Random: return "random";
  }
  return "oracle";
}

std::string_view to_string(EvaluatorKind k) noexcept {
  return k == EvaluatorKind::Synthetic ? "synthetic" : "external";
}

BackendKind backend_kind_from_string(const std::string& s) {
  for (auto k : {BackendKind::Remote, BackendKind::Oracle, BackendKind::Random}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown backend '" + s + "' (expected remote, oracle or random)");
}

EvaluatorKind evaluator_kind_from_string(const std::string& s) {
  if (s == "synthetic") return EvaluatorKind::Synthetic;
  if (s == "external") return EvaluatorKind::External;
  throw Error(ErrorCode::InvalidArgument, "unknown evaluator '" + s + "' (expected synthetic or external)");
}

Ablation Ablation::parse(const std::string& tokens) {
  Ablation a;
  std::istringstream in(tokens);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok.empty()) continue;
    if (tok == "knob") a.knowledge.knob = false;
    else if (tok == "hardware") a.knowledge.hardware = false;
    else if (tok == "network") a.knowledge.network = false;
    else if (tok == "plan") a.disabled_actions.insert(ActionKind::Plan);
    else if (tok == "cluster") a.disabled_actions.insert(ActionKind::ClusterTune);
    else if (tok == "single") a.disabled_actions.insert(ActionKind::SingleKnob);
    else if (tok == "validation") {
      a.disabled_actions.insert(ActionKind::Validate);
      a.disabled_actions.insert(ActionKind::Fix);
    } else if (tok == "feedback") a.disabled_actions.insert(ActionKind::Feedback);
    else if (tok == "pruning") a.no_pruning = true;
    else {
      throw Error(ErrorCode::InvalidArgument,
                  "unknown ablation token '" + tok +
                      "' (expected knob, hardware, network, plan, cluster, single, validation, feedback, pruning)");
    }
  }
  (void)TransitionTable(a.disabled_actions);
  return a;
}

std::string Ablation::to_string() const {
  std::vector<std::string> out;
  if (!knowledge.knob) out.push_back("knob");
  if (!knowledge.hardware) out.push_back("hardware");
  if (!knowledge.network) out.push_back("network");
  if (disabled_actions.contains(ActionKind::Plan)) out.push_back("plan");
  if (disabled_actions.contains(ActionKind::ClusterTune)) out.push_back("cluster");
  if (disabled_actions.contains(ActionKind::SingleKnob)) out.push_back("single");
  if (disabled_actions.contains(ActionKind::Validate)) out.push_back("validation");
  if (disabled_actions.contains(ActionKind::Feedback)) out.push_back("feedback");
  if (no_pruning) out.push_back("pruning");
  return fmt::format("{}", fmt::join(out, ","));
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("unknown key '{}' in {}", key, where));
    }
  }
}

}  // namespace

SessionConfig SessionConfig::from_json(const json& j, SessionConfig c) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "session config must be a JSON object");
  reject_unknown(j,
                 {"space", "knowledge", "backend", "evaluator", "seed", "rollouts", "exploration", "k", "max_depth",
                  "target_tps", "pruning", "ablate", "reward", "max_feedback_rounds", "oracle", "random", "synthetic",
                  "external", "out", "checkpoint_every"},
                 "session config");
  try {
    if (j.contains("space")) c.space_file = j["space"].get<std::string>();
    if (j.contains("knowledge")) c.knowledge_dir = j["knowledge"].get<std::string>();
    if (j.contains("backend")) c.backend = backend_kind_from_string(j["backend"]);
    if (j.contains("evaluator")) c.evaluator = evaluator_kind_from_string(j["evaluator"]);
    if (j.contains("seed")) c.mcts.seed = j["seed"];
    if (j.contains("rollouts")) c.mcts.max_rollouts = j["rollouts"];
    if (j.contains("exploration")) c.mcts.exploration = j["exploration"];
    if (j.contains("k")) c.mcts.children_per_expansion = j["k"];
    if (j.contains("max_depth")) c.mcts.max_depth = j["max_depth"];
    if (j.contains("target_tps")) c.mcts.target_throughput = j["target_tps"].get<double>();
    if (j.contains("ablate")) c.ablation = Ablation::parse(j["ablate"]);
    if (j.contains("reward")) {
      const std::string r = j["reward"];
      if (r != "verbatim" && r != "mirrored") throw Error(ErrorCode::InvalidArgument, "reward must be verbatim or mirrored");
      c.reward = r == "verbatim" ? RewardVariant::Verbatim : RewardVariant::Mirrored;
    }
    if (j.contains("max_feedback_rounds")) c.max_feedback_rounds = j["max_feedback_rounds"];
    if (j.contains("out")) c.out_dir = j["out"].get<std::string>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"];
    if (const auto it = j.find("pruning"); it != j.end()) {
      const json& p = *it;
      reject_unknown(p,
                     {"enabled", "min_adjustments_before_validation", "min_adjustments_before_evaluation", "eval_window",
                      "max_evals_in_window", "validation_dedup_window", "eval_floor_ratio", "feedback_gate_ratio",
                      "feedback_degrade_ratio", "floor_reference", "evaluate_only_validated"},
                     "pruning");
      if (p.contains("enabled") && !p["enabled"].get<bool>()) c.pruning = PruningParams::off();
      c.pruning.min_adjustments_before_validation = p.value("min_adjustments_before_validation", c.pruning.min_adjustments_before_validation);
      c.pruning.min_adjustments_before_evaluation = p.value("min_adjustments_before_evaluation", c.pruning.min_adjustments_before_evaluation);
      c.pruning.eval_window = p.value("eval_window", c.pruning.eval_window);
      c.pruning.max_evals_in_window = p.value("max_evals_in_window", c.pruning.max_evals_in_window);
      c.pruning.validation_dedup_window = p.value("validation_dedup_window", c.pruning.validation_dedup_window);
      c.pruning.evaluate_only_validated = p.value("evaluate_only_validated", c.pruning.evaluate_only_validated);
      c.pruning.eval_floor_ratio = p.value("eval_floor_ratio", c.pruning.eval_floor_ratio);
      c.pruning.feedback_gate_ratio = p.value("feedback_gate_ratio", c.pruning.feedback_gate_ratio);
      c.pruning.feedback_degrade_ratio = p.value("feedback_degrade_ratio", c.pruning.feedback_degrade_ratio);
      if (p.contains("floor_reference")) {
        const std::string f = p["floor_reference"];
        if (f != "baseline" && f != "branch-first") throw Error(ErrorCode::InvalidArgument, "floor_reference must be baseline or branch-first");
        c.pruning.floor_reference = f == "baseline" ? FloorReference::Baseline : FloorReference::BranchFirst;
      }
    }
    if (const auto it = j.find("oracle"); it != j.end()) {
      reject_unknown(*it, {"alpha", "noise"}, "oracle");
      c.oracle.alpha = it->value("alpha", c.oracle.alpha);
      c.oracle.noise = it->value("noise", c.oracle.noise);
    }
    if (const auto it = j.find("random"); it != j.end()) {
      reject_unknown(*it, {"p_invalid"}, "random");
      c.random.p_invalid = it->value("p_invalid", c.random.p_invalid);
    }
    if (const auto it = j.find("synthetic"); it != j.end()) {
      reject_unknown(*it, {"seed", "difficulty", "noise", "t_max"}, "synthetic");
      c.synthetic.seed = it->value("seed", c.synthetic.seed);
      c.synthetic.difficulty = it->value("difficulty", c.synthetic.difficulty);
      c.synthetic.noise = it->value("noise", c.synthetic.noise);
      c.synthetic.t_max = it->value("t_max", c.synthetic.t_max);
    }
    if (const auto it = j.find("external"); it != j.end()) {
      reject_unknown(*it, {"command", "timeout_s", "work_dir"}, "external");
      c.external.command_template = it->value("command", c.external.command_template);
      if (it->contains("timeout_s")) c.external.timeout = std::chrono::duration<double>((*it)["timeout_s"].get<double>());
      if (it->contains("work_dir")) c.external.work_dir = (*it)["work_dir"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("session config: ") + e.what());
  }
  return c;
}

SessionConfig SessionConfig::from_json(const json& j) { return from_json(j, SessionConfig()); }

void SessionConfig::validate() const {
  mcts.validate();
  if (pruning.enabled) pruning.validate();
  if (space_file.empty()) throw Error(ErrorCode::InvalidArgument, "a space file is required");
  if (knowledge_dir.empty()) throw Error(ErrorCode::InvalidArgument, "a knowledge directory is required");
  if (checkpoint_every < 1) throw Error(ErrorCode::InvalidArgument, "checkpoint interval must be at least 1");
  if (max_feedback_rounds < 1) throw Error(ErrorCode::InvalidArgument, "max feedback rounds must be at least 1");
  if (backend == BackendKind::Oracle && evaluator != EvaluatorKind::Synthetic) {
    throw Error(ErrorCode::InvalidArgument, "the oracle backend needs the synthetic evaluator");
  }
  if (evaluator == EvaluatorKind::External && external.command_template.empty()) {
    throw Error(ErrorCode::InvalidArgument, "the external evaluator needs an evaluation command");
  }
  if (!(oracle.alpha >= 0 && oracle.alpha <= 1) || oracle.noise < 0) {
    throw Error(ErrorCode::InvalidArgument, "oracle alpha must lie in [0, 1] and noise be non-negative");
  }
  if (!(random.p_invalid >= 0 && random.p_invalid <= 1)) {
    throw Error(ErrorCode::InvalidArgument, "p_invalid must lie in [0, 1]");
  }
  (void)TransitionTable(ablation.disabled_actions);
}

// Report.

json SessionReport::to_json() const {
  json log_json = json::array();
  for (const auto& e : log) {
    json errors = json::array();
    for (const auto& r : e.errors) errors.push_back({{"stage", r.stage}, {"message", r.message}});
    log_json.push_back({{"index", e.index},
                        {"kind", e.kind},
                        {"rollout", e.rollout},
                        {"throughput", e.throughput},
                        {"failed", e.failed},
                        {"invalid_config", e.invalid_config},
                        {"errors", errors}});
  }
  json j = {{"t_default", t_default},
            {"t_best", t_best},
            {"delta_t_percent", delta_t_percent},
            {"n_star", n_star},
            {"evaluations", evaluations},
            {"n_neg", n_neg},
            {"n_at_or_above", n_at_or_above},
            {"n_err", n_err},
            {"rollouts", rollouts},
            {"tree_nodes", tree_nodes},
            {"action_counts", action_counts},
            {"stop_reason", stop_reason},
            {"best_config", best_config},
            {"evaluation_log", log_json},
            {"usage", usage.to_json()}};
  if (!error.empty()) j["error"] = error;
  return j;
}

SessionReport SessionReport::from_json(const json& j) {
  SessionReport r;
  r.t_default = j.at("t_default");
  r.t_best = j.at("t_best");
  r.delta_t_percent = j.at("delta_t_percent");
  r.n_star = j.at("n_star");
  r.evaluations = j.at("evaluations");
  r.n_neg = j.at("n_neg");
  r.n_at_or_above = j.at("n_at_or_above");
  r.n_err = j.at("n_err");
  r.rollouts = j.at("rollouts");
  r.tree_nodes = j.at("tree_nodes");
  r.action_counts = j.at("action_counts").get<std::map<std::string, int>>();
  r.stop_reason = j.at("stop_reason");
  r.error = j.value("error", "");
  r.best_config = j.at("best_config");
  for (const auto& e : j.at("evaluation_log")) {
    EvalSummary s;
    s.index = e.at("index");
    s.kind = e.at("kind");
    s.rollout = e.at("rollout");
    s.throughput = e.at("throughput");
    s.failed = e.at("failed");
    s.invalid_config = e.at("invalid_config");
    for (const auto& err : e.at("errors")) s.errors.push_back({err.at("stage"), err.at("message")});
    r.log.push_back(std::move(s));
  }
  r.usage = BackendUsage::from_json(j.at("usage"));
  return r;
}

std::string SessionReport::to_text() const {
  std::string out;
  auto row = [&](const char* label, const std::string& value) { out += fmt::format("{:<14}{}\n", label, value); };
  row("T_default", fmt::format("{:.2f} tps", t_default));
  row("T*", fmt::format("{:.2f} tps", t_best));
  row("Delta T", fmt::format("{:.2f} %", delta_t_percent));
  row("N*", std::to_string(n_star));
  row("N_neg", fmt::format("{} of {}", n_neg, evaluations));
  row("N_err", std::to_string(n_err));
  row("Rollouts", fmt::format("{} ({})", rollouts, stop_reason));
  row("Tree nodes", std::to_string(tree_nodes));
  std::string counts;
  for (const auto& [k, v] : action_counts) counts += fmt::format("{} {:<4} ", k, v);
  row("Actions", counts);
  row("Backend", fmt::format("{} interactions, {} prompt tokens, {} completion tokens", usage.interaction_count,
                             usage.prompt_token_estimate, usage.completion_token_estimate));
  if (!error.empty()) row("Error", error);
  out += fmt::format("\n{:>5}  {:<5}{:>8}{:>12}  {}\n", "#", "kind", "rollout", "tps", "status");
  for (const auto& e : log) {
    std::string status = e.index == 0 ? "baseline" : e.failed ? "failed" : e.invalid_config ? "invalid" : "ok";
    if (!e.errors.empty()) status += ": " + e.errors.front().message;
    out += fmt::format("{:>5}  {:<5}{:>8}{:>12.2f}  {}\n", e.index, e.kind, e.rollout, e.throughput, status);
  }
  return out;
}

SessionReport emit_report(const SearchSession& session) {
  SessionReport r;
  const BestTracker& tracker = session.tracker();
  r.rollouts = session.rollouts();
  r.tree_nodes = session.tree().size();
  r.stop_reason = std::string(to_string(session.stop_reason()));
  r.usage = session.backend().usage();
  for (auto k : kAllActions) r.action_counts[std::string(to_string(k))] = 0;
  for (const auto& n : session.tree().nodes()) {
    if (n.parent >= 0) r.action_counts[std::string(to_string(n.kind()))] += 1;
  }
  if (!tracker.has_baseline()) return r;

  r.t_default = tracker.baseline();
  r.t_best = tracker.best_throughput();
  r.n_star = tracker.best_index();
  r.delta_t_percent = 100.0 * (r.t_best - r.t_default) / r.t_default;
  r.best_config = tracker.best_config().to_json();
  for (const auto& rec : tracker.log()) {
    r.log.push_back({rec.index, std::string(to_string(rec.kind)), rec.rollout, rec.result.throughput, rec.result.failed,
                     rec.invalid_config, rec.result.run_errors});
    if (rec.index == 0) continue;
    ++r.evaluations;
    if (rec.result.throughput < r.t_default) {
      ++r.n_neg;
    } else {
      ++r.n_at_or_above;
    }
    if (rec.invalid_config) ++r.n_err;
  }
  return r;
}

json timing_report(const SearchSession& session, double total_seconds) {
  const Timings& t = session.timings();
  json per = json::object();
  for (const auto& [k, v] : t.per_action) {
    per[k] = {{"count", v.second}, {"average_seconds", v.second ? v.first / static_cast<double>(v.second) : 0.0}};
  }
  return {{"total_seconds", total_seconds},
          {"search_overhead_seconds", total_seconds - (t.deploy_seconds + t.benchmark_seconds + t.backend_seconds)},
          {"deployment_seconds", t.deploy_seconds},
          {"evaluation_seconds", t.benchmark_seconds},
          {"backend_seconds", t.backend_seconds},
          {"per_action", per}};
}

// Running.

void write_json_atomic(const std::filesystem::path& path, const json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + tmp);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

SessionParts build_session_parts(const SessionConfig& config) {
  SessionParts parts;
  parts.bundle = load_bundle(config.space_file, config.knowledge_dir);
  const std::uint64_t backend_seed = splitmix64(config.mcts.seed + 0x0b5eULL);

  if (config.evaluator == EvaluatorKind::Synthetic) {
    parts.model = std::make_shared<const SyntheticModel>(build_synthetic(parts.bundle.space, parts.bundle, config.synthetic));
    parts.evaluator = std::make_unique<SyntheticEvaluator>(parts.model);
  } else {
    parts.evaluator = std::make_unique<ExternalEvaluator>(config.external);
  }

  switch (config.backend) {
    case BackendKind::Oracle: {
      if (!parts.model) throw Error(ErrorCode::InvalidArgument, "the oracle backend needs the synthetic evaluator");
      OracleOptions o = config.oracle;
      o.seed = backend_seed;
      parts.backend = std::make_unique<OracleBackend>(parts.model, o);
      break;
    }
    case BackendKind::Random: {
      RandomOptions o = config.random;
      o.seed = backend_seed;
      parts.backend = std::make_unique<RandomBackend>(parts.bundle.space, o);
      break;
    }
    case BackendKind::Remote:
      parts.backend = std::make_unique<RemoteBackend>(RemoteOptions::from_env());
      break;
  }
  return parts;
}

SessionReport run_session(const SessionConfig& config, const std::atomic<bool>* stop) {
  config.validate();
  SessionParts parts = build_session_parts(config);
  ActionContext ctx;
  ctx.space = &parts.bundle.space;
  ctx.bundle = &parts.bundle;
  ctx.table = TransitionTable(config.ablation.disabled_actions);
  ctx.knowledge = config.ablation.knowledge;
  ctx.max_feedback_rounds = config.max_feedback_rounds;
  const PruningParams pruning = config.ablation.no_pruning ? PruningParams::off() : config.pruning;

  SearchSession session(ctx, *parts.backend, *parts.evaluator, config.mcts, pruning, config.reward);
  std::filesystem::create_directories(config.out_dir);
  const auto checkpoint_path = config.out_dir / "checkpoint.json";
  if (config.resume) {
    session.restore(read_json_file(*config.resume));
    spdlog::info("resumed from {} after {} rollouts", config.resume->string(), session.rollouts());
  }

  const auto t0 = std::chrono::steady_clock::now();
  std::string error;
  session.measure_baseline();
  write_json_atomic(checkpoint_path, session.checkpoint());
  try {
    while (!session.stopped()) {
      if (stop && stop->load()) {
        spdlog::warn("stop requested; writing final checkpoint");
        session.interrupt();
        break;
      }
      if (!session.step_rollout()) break;
      if (session.rollouts() % config.checkpoint_every == 0) write_json_atomic(checkpoint_path, session.checkpoint());
    }
  } catch (const Error& e) {
    error = e.what();
    spdlog::error("search aborted: {}", error);
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_json_atomic(checkpoint_path, session.checkpoint());
  SessionReport report = emit_report(session);
  if (!error.empty()) {
    report.stop_reason = std::string(to_string(StopReason::Failed));
    report.error = error;
  }
  write_json_atomic(config.out_dir / "report.json", report.to_json());
  write_json_atomic(config.out_dir / "timing.json", timing_report(session, total));
  write_json_atomic(config.out_dir / "best_config.json", report.best_config);
  std::ofstream(config.out_dir / "summary.txt") << report.to_text();
  return report;
}

}  // namespace knobtuner
