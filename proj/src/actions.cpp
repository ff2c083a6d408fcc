#include "knobtuner/actions.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

#include <fmt/format.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

using nlohmann::json;

std::string_view to_string(ActionKind kind) noexcept {
  switch (kind) {
    case ActionKind::Root: return "Root";
    case ActionKind::Plan: return "A1";
    case ActionKind::ClusterTune: return "A2";
    case ActionKind::SingleKnob: return "A3";
    case ActionKind::Validate: return "A4";
    case ActionKind::Fix: return "A5";
    case ActionKind::Evaluate: return "A6";
    case ActionKind::Feedback: return "A7";
    case ActionKind::Terminal: return "A8";
  }
  return "?";
}

std::string_view describe(ActionKind kind) noexcept {
  switch (kind) {
    case ActionKind::Root: return "Root";
    case ActionKind::Plan: return "Global Tuning Plan";
    case ActionKind::ClusterTune: return "Cluster-wise Tuning";
    case ActionKind::SingleKnob: return "Single-knob Tuning";
    case ActionKind::Validate: return "Knob Validation";
    case ActionKind::Fix: return "Knob Fix";
    case ActionKind::Evaluate: return "Performance Evaluation";
    case ActionKind::Feedback: return "Feedback-driven Refinement";
    case ActionKind::Terminal: return "Terminal";
  }
  return "?";
}

std::optional<ActionKind> action_from_string(std::string_view s) {
  if (s == "Root") return ActionKind::Root;
  for (auto k : kAllActions) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

std::size_t ActionSet::size() const noexcept { return static_cast<std::size_t>(std::popcount(bits_)); }

std::vector<ActionKind> ActionSet::to_vector() const {
  std::vector<ActionKind> out;
  for (auto k : kAllActions) {
    if (contains(k)) out.push_back(k);
  }
  return out;
}

std::string ActionSet::to_string() const {
  std::string out = "{";
  for (auto k : to_vector()) {
    if (out.size() > 1) out += ",";
    out += knobtuner::to_string(k);
  }
  return out + "}";
}

ActionSet valid_next(ActionKind kind) noexcept {
  using K = ActionKind;
  switch (kind) {
    case K::Root: return {K::Plan};
    case K::Plan: return {K::ClusterTune, K::SingleKnob};
    case K::ClusterTune: return {K::ClusterTune, K::SingleKnob, K::Validate, K::Evaluate};
    case K::SingleKnob: return {K::ClusterTune, K::SingleKnob, K::Validate};
    case K::Validate: return {K::ClusterTune, K::SingleKnob, K::Fix, K::Evaluate, K::Terminal};
    case K::Fix: return {K::Validate};
    case K::Evaluate: return {K::Plan, K::Feedback, K::Terminal};
    case K::Feedback: return {K::Terminal};
    case K::Terminal: return {};
  }
  return {};
}

TransitionTable::TransitionTable(ActionSet disabled) : disabled_(disabled) {
  if (disabled.contains(ActionKind::ClusterTune) && disabled.contains(ActionKind::SingleKnob)) {
    throw Error(ErrorCode::InvalidArgument, "disabling both A2 and A3 leaves no adjustment path");
  }
  for (auto k : {ActionKind::Root, ActionKind::Evaluate, ActionKind::Terminal}) {
    if (disabled.contains(k)) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("{} cannot be disabled", to_string(k)));
    }
  }
}

ActionSet TransitionTable::next(ActionKind kind) const {
  const ActionSet row = valid_next(kind);
  ActionSet out = ActionSet::from_bits(row.bits() & static_cast<std::uint16_t>(~disabled_.bits()));
  if (!out.empty() || row.empty()) return out;
  // Every successor is disabled (Root with A1 off, A5 with A4 off): fall
  // through to the successors of the disabled actions.
  ActionSet seen;
  std::vector<ActionKind> pending = row.to_vector();
  while (!pending.empty()) {
    const ActionKind k = pending.back();
    pending.pop_back();
    if (seen.contains(k)) continue;
    seen.insert(k);
    if (!disabled_.contains(k)) {
      out.insert(k);
      continue;
    }
    for (auto n : valid_next(k).to_vector()) pending.push_back(n);
  }
  return out;
}

std::string_view to_string(IssueCategory c) noexcept {
  switch (c) {
    case IssueCategory::Range: return "range";
    case IssueCategory::Format: return "format";
    case IssueCategory::LogicalConflict: return "logical-conflict";
  }
  return "range";
}

namespace {

std::optional<IssueCategory> category_from_string(const std::string& s) {
  if (s == "range") return IssueCategory::Range;
  if (s == "format") return IssueCategory::Format;
  if (s == "logical-conflict") return IssueCategory::LogicalConflict;
  return std::nullopt;
}

json assignment_to_json(const Assignment& a) {
  json j = json::object();
  for (const auto& [k, v] : a) j[k] = value_to_json(v);
  return j;
}

Assignment assignment_from_json(const json& j) {
  Assignment a;
  for (const auto& [k, v] : j.items()) a[k] = value_from_json(v);
  return a;
}

json issues_to_json(const std::vector<Issue>& issues) {
  json out = json::array();
  for (const auto& i : issues) {
    out.push_back({{"knob", i.knob}, {"category", std::string(to_string(i.category))}, {"explanation", i.explanation}});
  }
  return out;
}

std::vector<Issue> issues_from_json(const json& j) {
  std::vector<Issue> out;
  for (const auto& i : j) {
    out.push_back({i.at("knob"), category_from_string(i.at("category")).value_or(IssueCategory::Range),
                   i.value("explanation", std::string{})});
  }
  return out;
}

}  // namespace

std::string ActionInstance::identity() const {
  json j = {{"kind", std::string(to_string(kind))}};
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PlanPayload>) {
          j["order"] = p.cluster_order;
        } else if constexpr (std::is_same_v<T, ClusterPayload>) {
          j["cluster"] = p.cluster;
          j["assignments"] = assignment_to_json(p.assignments);
        } else if constexpr (std::is_same_v<T, SingleKnobPayload>) {
          j["knob"] = p.knob;
          j["value"] = value_to_json(p.value);
        } else if constexpr (std::is_same_v<T, ValidatePayload>) {
          j["valid"] = p.valid;
          j["issues"] = issues_to_json(p.issues);
        } else if constexpr (std::is_same_v<T, FixPayload> || std::is_same_v<T, FeedbackPayload>) {
          j["assignments"] = assignment_to_json(p.assignments);
        } else if constexpr (std::is_same_v<T, TerminalPayload>) {
          j["reason"] = p.reason;
        }
      },
      payload);
  return j.dump();
}

json ActionInstance::to_json() const {
  json j = {{"kind", std::string(to_string(kind))}};
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PlanPayload>) {
          j["plan"] = p.text;
          j["cluster_order"] = p.cluster_order;
        } else if constexpr (std::is_same_v<T, ClusterPayload>) {
          j["cluster"] = p.cluster;
          j["assignments"] = assignment_to_json(p.assignments);
          j["reasoning"] = p.reasoning;
        } else if constexpr (std::is_same_v<T, SingleKnobPayload>) {
          j["knob"] = p.knob;
          j["value"] = value_to_json(p.value);
          j["reasoning"] = p.reasoning;
        } else if constexpr (std::is_same_v<T, ValidatePayload>) {
          j["valid"] = p.valid;
          j["issues"] = issues_to_json(p.issues);
        } else if constexpr (std::is_same_v<T, FixPayload>) {
          j["assignments"] = assignment_to_json(p.assignments);
        } else if constexpr (std::is_same_v<T, FeedbackPayload>) {
          j["assignments"] = assignment_to_json(p.assignments);
          j["bottleneck_analysis"] = p.bottleneck_analysis;
        } else if constexpr (std::is_same_v<T, TerminalPayload>) {
          j["reason"] = p.reason;
        }
      },
      payload);
  return j;
}

ActionInstance ActionInstance::from_json(const json& j) {
  ActionInstance a;
  a.kind = action_from_string(j.at("kind").get<std::string>()).value();
  switch (a.kind) {
    case ActionKind::Root: a.payload = std::monostate{}; break;
    case ActionKind::Plan:
      a.payload = PlanPayload{j.at("plan"), j.at("cluster_order").get<std::vector<std::string>>()};
      break;
    case ActionKind::ClusterTune:
      a.payload = ClusterPayload{j.at("cluster"), assignment_from_json(j.at("assignments")), j.value("reasoning", "")};
      break;
    case ActionKind::SingleKnob:
      a.payload = SingleKnobPayload{j.at("knob"), value_from_json(j.at("value")), j.value("reasoning", "")};
      break;
    case ActionKind::Validate:
      a.payload = ValidatePayload{j.at("valid").get<bool>(), issues_from_json(j.at("issues"))};
      break;
    case ActionKind::Fix: a.payload = FixPayload{assignment_from_json(j.at("assignments"))}; break;
    case ActionKind::Evaluate: a.payload = EvaluatePayload{}; break;
    case ActionKind::Feedback:
      a.payload = FeedbackPayload{assignment_from_json(j.at("assignments")), j.value("bottleneck_analysis", "")};
      break;
    case ActionKind::Terminal: a.payload = TerminalPayload{j.value("reason", "")}; break;
  }
  return a;
}

json SearchState::to_record() const {
  json j = {{"config", config.to_record()},
            {"tuned", tuned},
            {"untuned_clusters", untuned_clusters},
            {"last_action", std::string(to_string(last_action))},
            {"feedback_round", feedback_round},
            {"depth", depth},
            {"terminal", terminal},
            {"terminal_reason", terminal_reason}};
  if (plan) j["plan"] = {{"text", plan->text}, {"cluster_order", plan->cluster_order}};
  if (pending_issues) j["pending_issues"] = issues_to_json(*pending_issues);
  if (last_validation) {
    j["last_validation"] = {{"valid", last_validation->valid}, {"issues", issues_to_json(last_validation->issues)}};
  }
  if (last_eval) j["last_eval"] = last_eval->to_record();
  return j;
}

SearchState SearchState::from_record(const json& j) {
  SearchState s;
  s.config = Configuration::from_record(j.at("config"));
  s.tuned = j.at("tuned").get<std::set<std::string>>();
  s.untuned_clusters = j.at("untuned_clusters").get<std::vector<std::string>>();
  s.last_action = action_from_string(j.at("last_action").get<std::string>()).value();
  s.feedback_round = j.at("feedback_round");
  s.depth = j.at("depth");
  s.terminal = j.at("terminal");
  s.terminal_reason = j.at("terminal_reason");
  if (j.contains("plan")) s.plan = PlanPayload{j["plan"].at("text"), j["plan"].at("cluster_order")};
  if (j.contains("pending_issues")) s.pending_issues = issues_from_json(j["pending_issues"]);
  if (j.contains("last_validation")) {
    s.last_validation = ValidationReport{j["last_validation"].at("valid"), issues_from_json(j["last_validation"].at("issues"))};
  }
  if (j.contains("last_eval")) s.last_eval = EvalResult::from_record(j["last_eval"]);
  return s;
}

SearchState initial_state(const ConfigSpace& space) {
  SearchState s;
  s.config = space.default_configuration();
  for (const auto& c : space.clusters()) s.untuned_clusters.push_back(c.id);
  return s;
}

bool action_applicable(const SearchState& state, ActionKind kind, const ActionContext& ctx) {
  if (state.terminal) return false;
  if (!ctx.table.next(state.last_action).contains(kind)) return false;
  switch (kind) {
    case ActionKind::Fix: return state.has_pending_issues();
    case ActionKind::Feedback: return state.last_eval.has_value() && state.feedback_round < ctx.max_feedback_rounds;
    default: return true;
  }
}

// Prompts.

namespace {

std::string domain_text(const Knob& k) {
  struct {
    std::string operator()(const IntRange& r) const {
      return r.step ? fmt::format("integer in [{}, {}] step {}", r.min, r.max, *r.step)
                    : fmt::format("integer in [{}, {}]", r.min, r.max);
    }
    std::string operator()(const RealRange& r) const { return fmt::format("float in [{}, {}]", r.min, r.max); }
    std::string operator()(const BoolDomain&) const { return "boolean"; }
    std::string operator()(const EnumDomain& e) const { return fmt::format("one of [{}]", fmt::join(e.values, ", ")); }
    std::string operator()(const StringDomain& s) const { return "string matching /" + s.pattern + "/"; }
  } visitor;
  std::string out = std::visit(visitor, k.domain);
  if (!k.unit.empty()) out += " " + k.unit;
  for (const auto& s : k.special_values) out += fmt::format("; special {} = {}", value_to_string(s.value), s.meaning);
  return out;
}

void knob_line(std::ostringstream& os, const Knob& k) {
  os << "- " << k.name << ": " << domain_text(k) << ", default " << value_to_string(k.default_value)
     << ", cluster " << k.cluster_id;
  if (!k.description.empty()) os << ". " << k.description;
  os << "\n";
}

void hardware_section(std::ostringstream& os, const SystemContext& sys) {
  os << "## Hardware\n";
  for (const auto& h : sys.hardware) {
    os << fmt::format("- {}: {} CPUs, {} MB memory, {} GB storage", h.node, h.cpus, h.memory_mb, h.storage_gb);
    if (!h.notes.empty()) os << " (" << h.notes << ")";
    os << "\n";
  }
}

void network_section(std::ostringstream& os, const SystemContext& sys) {
  os << "## Network\n";
  for (const auto& n : sys.network.nodes) os << fmt::format("- {} ({}, org {})\n", n.name, to_string(n.role), n.org);
  for (const auto& [a, b] : sys.network.edges) os << fmt::format("- link {} <-> {}\n", a, b);
  os << fmt::format("Workload: {} ({} transactions, {} mode)\n", sys.workload.name, sys.workload.transaction_count,
                    sys.workload.rate_mode);
}

void clusters_section(std::ostringstream& os, const ConfigSpace& space, const SearchState& state) {
  os << "## Clusters\n";
  for (const auto& c : space.clusters()) {
    const bool untuned =
        std::find(state.untuned_clusters.begin(), state.untuned_clusters.end(), c.id) != state.untuned_clusters.end();
    os << fmt::format("- {} [{}]{}: {}\n", c.id, c.role, untuned ? " (untuned)" : "", c.description);
  }
}

void tuned_section(std::ostringstream& os, const SearchState& state) {
  os << "## Tuned configuration\n";
  if (state.tuned.empty()) os << "(no knobs tuned yet; all at defaults)\n";
  for (const auto& name : state.tuned) os << "- " << name << " = " << value_to_string(state.config.at(name)) << "\n";
}

void plan_section(std::ostringstream& os, const SearchState& state) {
  if (!state.plan) return;
  os << "## Plan\n" << state.plan->text << "\nCluster priority: " << fmt::format("{}", fmt::join(state.plan->cluster_order, ", "))
     << "\n";
}

void issues_section(std::ostringstream& os, const std::vector<Issue>& issues) {
  os << "## Detected issues\n";
  for (const auto& i : issues) os << fmt::format("- {} [{}]: {}\n", i.knob, to_string(i.category), i.explanation);
}

const char* reply_schema(ActionKind kind) {
  switch (kind) {
    case ActionKind::Plan: return R"({"plan": "<text>", "cluster_order": ["<cluster id>", ...]})";
    case ActionKind::ClusterTune: return R"({"cluster": "<cluster id>", "assignments": {"<knob>": <value>}, "reasoning": "<text>"})";
    case ActionKind::SingleKnob: return R"({"knob": "<knob>", "value": <value>, "reasoning": "<text>"})";
    case ActionKind::Validate:
      return R"({"valid": <bool>, "issues": [{"knob": "<knob>", "category": "range|format|logical-conflict", "explanation": "<text>"}]})";
    case ActionKind::Fix: return R"({"assignments": {"<knob>": <value>}})";
    case ActionKind::Feedback: return R"({"assignments": {"<knob>": <value>}, "bottleneck_analysis": "<text>"})";
    default: return "";
  }
}

const char* instructions(ActionKind kind) {
  switch (kind) {
    case ActionKind::Plan:
      return "Decide which parts of the system to prioritize next. Follow the transaction pipeline "
             "(gateway, execution, ordering, validation/commit) and system components such as resource "
             "management and networking. Order the clusters by expected impact on throughput.";
    case ActionKind::ClusterTune:
      return "Select one untuned cluster and assign coordinated values to its knobs, consistent with the "
             "plan, the hardware and the knobs already tuned. Only assign knobs of the selected cluster.";
    case ActionKind::SingleKnob:
      return "Select one under-optimized knob and propose a refined value for it, considering its "
             "interactions with the knobs already tuned.";
    case ActionKind::Validate:
      return "Check whether the tuned configuration is valid for this deployment: values within range, "
             "correct formats, and logical consistency between related knobs and the system context.";
    case ActionKind::Fix:
      return "Correct the knobs named in the detected issues so the configuration becomes valid and "
             "deployable. Only assign knobs listed in the issues.";
    case ActionKind::Feedback:
      return "Analyse the latest benchmark result and run errors, identify the bottleneck knobs, and "
             "refine only those while preserving effective settings.";
    default: return "";
  }
}

}  // namespace

std::string PromptBundle::render() const {
  if (empty) return "";
  return instructions + "\n\n" + context + "\n## Reply format\nReply with JSON only: " + reply_schema + "\n";
}

PromptBundle build_prompt(const SearchState& state, ActionKind kind, const ActionContext& ctx,
                          std::optional<double> best_throughput) {
  if (state.terminal || !ctx.table.next(state.last_action).contains(kind)) {
    throw Error(ErrorCode::IllegalTransition,
                fmt::format("{} cannot follow {}", to_string(kind), to_string(state.last_action)));
  }
  PromptBundle p;
  p.kind = kind;
  p.state = &state;
  p.ctx = &ctx;
  p.best_throughput = best_throughput;
  if (!is_backend_action(kind)) {
    p.empty = true;
    return p;
  }
  p.instructions = instructions(kind);
  p.reply_schema = reply_schema(kind);

  const ConfigSpace& space = *ctx.space;
  const SystemContext& sys = ctx.bundle->system;
  std::ostringstream os;
  if (ctx.knowledge.hardware) hardware_section(os, sys);
  if (ctx.knowledge.network) network_section(os, sys);

  auto knob_knowledge = [&](auto&& include) {
    if (!ctx.knowledge.knob) return;
    os << "## Knob knowledge\n";
    for (const auto& k : space.knobs()) {
      if (include(k)) knob_line(os, k);
    }
  };

  switch (kind) {
    case ActionKind::Plan:
      clusters_section(os, space, state);
      if (state.last_eval) {
        os << fmt::format("## Last evaluation\nThroughput {:.2f} tps\n", state.last_eval->throughput);
      }
      break;
    case ActionKind::ClusterTune: {
      clusters_section(os, space, state);
      plan_section(os, state);
      const bool revisit = state.untuned_clusters.empty();
      knob_knowledge([&](const Knob& k) {
        return revisit || std::find(state.untuned_clusters.begin(), state.untuned_clusters.end(), k.cluster_id) !=
                              state.untuned_clusters.end();
      });
      break;
    }
    case ActionKind::SingleKnob:
      plan_section(os, state);
      knob_knowledge([](const Knob& k) { return k.performance_relevant; });
      break;
    case ActionKind::Validate:
      knob_knowledge([&](const Knob& k) { return state.tuned.count(k.name) != 0; });
      break;
    case ActionKind::Fix: {
      std::set<std::string> flagged;
      if (state.pending_issues) {
        for (const auto& i : *state.pending_issues) flagged.insert(i.knob);
        issues_section(os, *state.pending_issues);
      }
      knob_knowledge([&](const Knob& k) { return state.tuned.count(k.name) || flagged.count(k.name); });
      break;
    }
    case ActionKind::Feedback:
      if (state.last_eval) {
        os << fmt::format("## Latest evaluation\nThroughput {:.2f} tps{}\n", state.last_eval->throughput,
                          state.last_eval->failed ? " (run failed)" : "");
        for (const auto& e : state.last_eval->run_errors) os << fmt::format("- error [{}]: {}\n", e.stage, e.message);
      }
      if (best_throughput) os << fmt::format("Best throughput so far: {:.2f} tps\n", *best_throughput);
      knob_knowledge([&](const Knob& k) { return k.performance_relevant || state.tuned.count(k.name); });
      break;
    default: break;
  }
  tuned_section(os, state);
  p.context = os.str();
  return p;
}

// Reply parsing.

namespace {

class Problems {
 public:
  void add(std::string s) { list_.push_back(std::move(s)); }
  bool empty() const { return list_.empty(); }
  [[noreturn]] void raise() { throw SchemaViolation(std::move(list_)); }
  void raise_if_any() {
    if (!list_.empty()) raise();
  }

 private:
  std::vector<std::string> list_;
};

std::optional<Value> scalar(const json& j, const std::string& path, Problems& out) {
  if (j.is_boolean() || j.is_number() || j.is_string()) return value_from_json(j);
  out.add(path + ": expected scalar value");
  return std::nullopt;
}

Assignment parse_assignments(const json& reply, const ActionContext& ctx, Problems& out,
                             const std::function<bool(const std::string&)>& allowed, const char* why) {
  Assignment a;
  const auto it = reply.find("assignments");
  if (it == reply.end() || !it->is_object()) {
    out.add("/assignments: expected object");
    return a;
  }
  if (it->empty()) out.add("/assignments: empty");
  for (const auto& [name, v] : it->items()) {
    const Knob* k = ctx.space->find(name);
    if (!k) {
      out.add("/assignments/" + name + ": unknown knob");
      continue;
    }
    if (!allowed(name)) {
      out.add("/assignments/" + name + ": " + why);
      continue;
    }
    if (auto value = scalar(v, "/assignments/" + name, out)) a[name] = canonical_value(*k, *value);
  }
  return a;
}

std::string text_field(const json& reply, const char* key) {
  const auto it = reply.find(key);
  return it != reply.end() && it->is_string() ? it->get<std::string>() : std::string{};
}

}  // namespace

ActionInstance parse_reply(ActionKind kind, const json& reply, const SearchState& state, const ActionContext& ctx) {
  Problems out;
  if (!reply.is_object()) {
    out.add("reply is not a JSON object");
    out.raise();
  }
  ActionInstance a;
  a.kind = kind;
  const ConfigSpace& space = *ctx.space;
  switch (kind) {
    case ActionKind::Plan: {
      PlanPayload p;
      p.text = text_field(reply, "plan");
      const auto it = reply.find("cluster_order");
      if (it == reply.end() || !it->is_array()) {
        out.add("/cluster_order: expected array");
      } else {
        std::set<std::string> seen;
        for (const auto& c : *it) {
          if (!c.is_string() || !space.find_cluster(c.get<std::string>())) {
            out.add("/cluster_order: unknown cluster " + c.dump());
          } else if (!seen.insert(c.get<std::string>()).second) {
            out.add("/cluster_order: duplicate cluster " + c.dump());
          } else {
            p.cluster_order.push_back(c.get<std::string>());
          }
        }
      }
      a.payload = std::move(p);
      break;
    }
    case ActionKind::ClusterTune: {
      ClusterPayload p;
      p.cluster = text_field(reply, "cluster");
      p.reasoning = text_field(reply, "reasoning");
      const bool revisit = state.untuned_clusters.empty();
      if (!space.find_cluster(p.cluster)) {
        out.add("/cluster: unknown cluster '" + p.cluster + "'");
      } else if (!revisit && std::find(state.untuned_clusters.begin(), state.untuned_clusters.end(), p.cluster) ==
                                 state.untuned_clusters.end()) {
        out.add("/cluster: '" + p.cluster + "' already tuned while untuned clusters remain");
      }
      p.assignments = parse_assignments(
          reply, ctx, out, [&](const std::string& n) { return space.knob(n).cluster_id == p.cluster; },
          "knob outside the selected cluster");
      a.payload = std::move(p);
      break;
    }
    case ActionKind::SingleKnob: {
      SingleKnobPayload p;
      p.knob = text_field(reply, "knob");
      p.reasoning = text_field(reply, "reasoning");
      const Knob* k = space.find(p.knob);
      if (!k) out.add("/knob: unknown knob '" + p.knob + "'");
      if (!reply.contains("value")) {
        out.add("/value: missing");
      } else if (auto v = scalar(reply["value"], "/value", out)) {
        p.value = k ? canonical_value(*k, *v) : *v;
      }
      a.payload = std::move(p);
      break;
    }
    case ActionKind::Validate: {
      ValidatePayload p;
      const auto valid = reply.find("valid");
      if (valid == reply.end() || !valid->is_boolean()) {
        out.add("/valid: expected boolean");
      } else {
        p.valid = valid->get<bool>();
      }
      if (const auto issues = reply.find("issues"); issues != reply.end()) {
        if (!issues->is_array()) {
          out.add("/issues: expected array");
        } else {
          for (std::size_t i = 0; i < issues->size(); ++i) {
            const auto& item = (*issues)[i];
            const std::string path = fmt::format("/issues/{}", i);
            const std::string knob = item.is_object() ? text_field(item, "knob") : "";
            const auto cat = item.is_object() ? category_from_string(text_field(item, "category")) : std::nullopt;
            if (!space.find(knob)) {
              out.add(path + "/knob: unknown knob '" + knob + "'");
            } else if (!cat) {
              out.add(path + "/category: expected range, format or logical-conflict");
            } else {
              p.issues.push_back({knob, *cat, text_field(item, "explanation")});
            }
          }
        }
      }
      if (p.valid && !p.issues.empty()) out.add("/issues: a valid verdict cannot carry issues");
      if (!p.valid && p.issues.empty() && out.empty()) out.add("/issues: an invalid verdict must name at least one issue");
      a.payload = std::move(p);
      break;
    }
    case ActionKind::Fix: {
      std::set<std::string> flagged;
      if (state.pending_issues) {
        for (const auto& i : *state.pending_issues) flagged.insert(i.knob);
      }
      if (flagged.empty()) out.add("no pending issues to fix");
      a.payload = FixPayload{parse_assignments(
          reply, ctx, out, [&](const std::string& n) { return flagged.count(n) != 0; }, "knob not named in the issues")};
      break;
    }
    case ActionKind::Feedback: {
      FeedbackPayload p;
      p.bottleneck_analysis = text_field(reply, "bottleneck_analysis");
      p.assignments = parse_assignments(reply, ctx, out, [](const std::string&) { return true; }, "");
      a.payload = std::move(p);
      break;
    }
    default:
      out.add(fmt::format("{} does not take a backend reply", to_string(kind)));
  }
  out.raise_if_any();
  return a;
}

ValidationReport mechanical_check(const ConfigSpace& space, const Configuration& config) {
  ValidationReport report;
  for (const auto& k : space.knobs()) {
    if (!config.contains(k.name)) {
      report.issues.push_back({k.name, IssueCategory::Format, "no value assigned"});
      continue;
    }
    const Value& v = config.at(k.name);
    if (value_in_domain(k, v)) continue;
    const bool numeric_value = as_number(v).has_value();
    const bool type_ok = std::visit(
        [&](const auto& d) {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, IntRange> || std::is_same_v<T, RealRange>) {
            return numeric_value;
          } else if constexpr (std::is_same_v<T, BoolDomain>) {
            return std::holds_alternative<bool>(v);
          } else {
            return std::holds_alternative<std::string>(v);
          }
        },
        k.domain);
    bool format_issue = !type_ok;
    if (!format_issue && std::holds_alternative<StringDomain>(k.domain)) format_issue = true;
    if (!format_issue && std::holds_alternative<IntRange>(k.domain)) {
      const double x = *as_number(v);
      format_issue = x != std::nearbyint(x);
    }
    report.issues.push_back({k.name, format_issue ? IssueCategory::Format : IssueCategory::Range,
                             fmt::format("value {} is not {}", value_to_string(v), domain_text(k))});
  }
  report.valid = report.issues.empty();
  return report;
}

SearchState apply_action(const SearchState& state, const ActionInstance& action, const ActionContext& ctx,
                         const EvalFn* env) {
  if (!action_applicable(state, action.kind, ctx)) {
    throw Error(ErrorCode::IllegalTransition,
                fmt::format("{} cannot follow {} here", to_string(action.kind), to_string(state.last_action)));
  }
  const ConfigSpace& space = *ctx.space;
  SearchState next = state;
  next.last_action = action.kind;
  next.depth = state.depth + 1;

  auto evaluate = [&](const Configuration& c) {
    if (!env || !*env) throw Error(ErrorCode::InvalidArgument, "evaluation requires an evaluator");
    try {
      return (*env)(c);
    } catch (const std::exception& e) {
      return EvalResult::failure("evaluator", e.what());
    }
  };
  auto merge = [&](const Assignment& delta) {
    next.config = merge_subconfig(space, next.config, delta);
    for (const auto& [name, v] : delta) next.tuned.insert(name);
  };

  switch (action.kind) {
    case ActionKind::Plan:
      next.plan = std::get<PlanPayload>(action.payload);
      break;
    case ActionKind::ClusterTune: {
      const auto& p = std::get<ClusterPayload>(action.payload);
      merge(p.assignments);
      std::erase(next.untuned_clusters, p.cluster);
      break;
    }
    case ActionKind::SingleKnob: {
      const auto& p = std::get<SingleKnobPayload>(action.payload);
      merge({{p.knob, p.value}});
      break;
    }
    case ActionKind::Validate: {
      const auto& logical = std::get<ValidatePayload>(action.payload);
      ValidationReport report = mechanical_check(space, next.config);
      for (const auto& issue : logical.issues) {
        const bool dup = std::any_of(report.issues.begin(), report.issues.end(), [&](const Issue& i) {
          return i.knob == issue.knob && i.category == issue.category;
        });
        if (!dup) report.issues.push_back(issue);
      }
      report.valid = report.issues.empty();
      next.last_validation = report;
      if (report.valid) {
        next.pending_issues.reset();
      } else {
        next.pending_issues = report.issues;
      }
      break;
    }
    case ActionKind::Fix:
      merge(std::get<FixPayload>(action.payload).assignments);
      break;
    case ActionKind::Evaluate:
      next.last_eval = evaluate(next.config);
      break;
    case ActionKind::Feedback:
      merge(std::get<FeedbackPayload>(action.payload).assignments);
      next.feedback_round = state.feedback_round + 1;
      next.last_eval = evaluate(next.config);
      break;
    case ActionKind::Terminal: {
      next.terminal = true;
      const auto* p = std::get_if<TerminalPayload>(&action.payload);
      next.terminal_reason = p && !p->reason.empty() ? p->reason : "terminal action";
      break;
    }
    case ActionKind::Root:
      throw Error(ErrorCode::IllegalTransition, "Root is not an applicable action");
  }
  return next;
}

}  // namespace knobtuner
