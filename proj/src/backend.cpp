#include "knobtuner/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

using nlohmann::json;

json BackendUsage::to_json() const {
  return {{"interaction_count", interaction_count},
          {"prompt_token_estimate", prompt_token_estimate},
          {"completion_token_estimate", completion_token_estimate}};
}

BackendUsage BackendUsage::from_json(const json& j) {
  BackendUsage u;
  u.interaction_count = j.value("interaction_count", std::uint64_t{0});
  u.prompt_token_estimate = j.value("prompt_token_estimate", std::uint64_t{0});
  u.completion_token_estimate = j.value("completion_token_estimate", std::uint64_t{0});
  return u;
}

std::vector<std::string> DecisionBackend::query(const PromptBundle& prompt, int k) {
  Completion c = do_query(prompt, k);
  account(prompt.render(), c);
  return std::move(c.texts);
}

std::vector<std::string> DecisionBackend::complete(const std::string& prompt, int n) {
  Completion c = do_complete(prompt, n);
  account(prompt, c);
  return std::move(c.texts);
}

Completion DecisionBackend::do_query(const PromptBundle& prompt, int k) { return do_complete(prompt.render(), k); }

Completion DecisionBackend::do_complete(const std::string&, int) {
  throw Error(ErrorCode::BackendUnavailable, fmt::format("backend '{}' does not answer free-form prompts", name()));
}

void DecisionBackend::account(const std::string& prompt, const Completion& c) {
  usage_.interaction_count += c.calls;
  usage_.prompt_token_estimate += c.prompt_tokens.value_or(c.calls * (prompt.size() / 4));
  if (c.completion_tokens) {
    usage_.completion_token_estimate += *c.completion_tokens;
  } else {
    for (const auto& t : c.texts) usage_.completion_token_estimate += t.size() / 4;
  }
}

json extract_json(const std::string& text) {
  if (auto j = json::parse(text, nullptr, false); !j.is_discarded()) return j;
  const auto open = text.find_first_of("{[");
  if (open != std::string::npos) {
    const char close = text[open] == '{' ? '}' : ']';
    const auto end = text.rfind(close);
    if (end != std::string::npos && end > open) {
      if (auto j = json::parse(text.substr(open, end - open + 1), nullptr, false); !j.is_discarded()) return j;
    }
  }
  throw Error(ErrorCode::ParseError, "reply contains no JSON value");
}

std::vector<ActionInstance> propose(DecisionBackend& backend, const PromptBundle& prompt, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (prompt.empty || !prompt.state || !prompt.ctx) {
    throw Error(ErrorCode::InvalidArgument, "prompt does not request a backend decision");
  }
  const auto texts = backend.query(prompt, k);
  std::vector<ActionInstance> out;
  std::set<std::string> seen;
  std::vector<std::string> rejections;
  auto consider = [&](const json& reply) {
    try {
      ActionInstance a = parse_reply(prompt.kind, reply, *prompt.state, *prompt.ctx);
      if (seen.insert(a.identity()).second && static_cast<int>(out.size()) < k) out.push_back(std::move(a));
    } catch (const SchemaViolation& e) {
      rejections.push_back(e.what());
    } catch (const Error& e) {
      rejections.push_back(e.what());
    }
  };
  for (const auto& text : texts) {
    try {
      const json reply = extract_json(text);
      if (reply.is_array()) {
        for (const auto& item : reply) consider(item);
      } else {
        consider(reply);
      }
    } catch (const Error& e) {
      rejections.push_back(e.what());
    }
  }
  for (const auto& r : rejections) spdlog::debug("{} candidate rejected: {}", to_string(prompt.kind), r);
  if (out.empty()) {
    throw Error(ErrorCode::AllCandidatesRejected,
                fmt::format("all {} candidates for {} were rejected{}{}", texts.size(), to_string(prompt.kind),
                            rejections.empty() ? "" : ": ", rejections.empty() ? "" : rejections.front()));
  }
  return out;
}

// Oracle.

namespace {

std::pair<double, double> bounds(const Knob& k) {
  if (const auto* r = std::get_if<IntRange>(&k.domain)) return {static_cast<double>(r->min), static_cast<double>(r->max)};
  if (const auto* r = std::get_if<RealRange>(&k.domain)) return {r->min, r->max};
  return {0.0, 0.0};
}

std::vector<std::string> cluster_candidates(const SearchState& state, const std::vector<std::string>& by_weight) {
  std::vector<std::string> order;
  if (state.plan) order = state.plan->cluster_order;
  for (const auto& c : by_weight) {
    if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
  }
  if (state.untuned_clusters.empty()) return order;
  std::vector<std::string> out;
  for (const auto& c : order) {
    if (std::find(state.untuned_clusters.begin(), state.untuned_clusters.end(), c) != state.untuned_clusters.end()) {
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::string> pending_knobs(const SearchState& state) {
  std::vector<std::string> out;
  if (!state.pending_issues) return out;
  for (const auto& i : *state.pending_issues) {
    if (!i.knob.empty() && std::find(out.begin(), out.end(), i.knob) == out.end()) out.push_back(i.knob);
  }
  return out;
}


}  // namespace

OracleBackend::OracleBackend(std::shared_ptr<const SyntheticModel> model, OracleOptions options)
    : model_(std::move(model)), options_(options), rng_(options.seed) {
  if (!model_) throw Error(ErrorCode::InvalidArgument, "oracle backend requires a synthetic model");
}

json OracleBackend::save_state() const { return {{"rng", rng_.state()}}; }
void OracleBackend::load_state(const json& j) { rng_.restore(j.at("rng").get<std::string>()); }

double OracleBackend::fraction() {
  const double f = options_.noise > 0 ? options_.alpha + options_.noise * rng_.normal() : options_.alpha;
  return std::clamp(f, 0.0, 1.0);
}

Value OracleBackend::step_toward(const Knob& knob, const Value& current, double f) const {
  const Value& target = model_->optimum().at(knob.name);
  if (!knob.is_numeric()) return f > 0 ? target : current;
  const auto cur_num = as_number(current);
  const double opt = *as_number(target);
  if (!cur_num) return target;
  const auto [lo, hi] = bounds(knob);
  const double cur = std::clamp(*cur_num, lo, hi);
  const double x = cur + f * (opt - cur);
  if (const auto* r = std::get_if<IntRange>(&knob.domain)) {
    const double step = r->step ? static_cast<double>(*r->step) : 1.0;
    const double g = (x - lo) / step;
    const double rounded = opt > cur ? std::ceil(g - 1e-9) : std::floor(g + 1e-9);
    const double v = std::clamp(lo + rounded * step, lo, hi);
    return Value{static_cast<std::int64_t>(std::llround(v))};
  }
  return Value{std::clamp(x, lo, hi)};
}

std::vector<std::string> OracleBackend::knobs_by_loss(const SearchState& state) const {
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& k : model_->space().knobs()) {
    const double loss = model_->knob_loss(k.name, state.config.at(k.name));
    if (loss > 0) ranked.emplace_back(loss, k.name);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (auto& [loss, name] : ranked) out.push_back(std::move(name));
  return out;
}

json OracleBackend::assign(const SearchState& state, const std::vector<std::string>& knobs) {
  json a = json::object();
  for (const auto& name : knobs) {
    const Knob& k = model_->space().knob(name);
    Value current = state.config.at(name);
    if (!value_in_domain(k, current)) current = snap_to_domain(k, current);
    Value v = step_toward(k, current, fraction());
    // Never exceed a resource budget; the planted optimum is within all of them.
    for (const auto& c : model_->constraints()) {
      const auto x = as_number(v);
      if (c.knob == name && x && *x > c.cap) v = model_->optimum().at(name);
    }
    a[name] = value_to_json(v);
  }
  return a;
}

Completion OracleBackend::do_query(const PromptBundle& prompt, int k) {
  const SearchState& state = *prompt.state;
  std::vector<std::string> by_weight;
  for (const auto& [c, w] : model_->cluster_weights()) by_weight.push_back(c);

  Completion out;
  out.calls = static_cast<std::uint64_t>(k);
  for (int i = 0; i < k; ++i) {
    json reply;
    switch (prompt.kind) {
      case ActionKind::Plan:
        reply = {{"plan", "Tune the clusters with the largest throughput impact first."}, {"cluster_order", by_weight}};
        break;
      case ActionKind::ClusterTune: {
        const auto candidates = cluster_candidates(state, by_weight);
        const std::string& cluster = candidates[static_cast<std::size_t>(i) % candidates.size()];
        std::vector<std::string> knobs;
        for (const auto& name : model_->space().knobs_in_cluster(cluster)) {
          if (!values_equal(state.config.at(name), model_->optimum().at(name))) knobs.push_back(name);
        }
        if (knobs.empty()) knobs.push_back(model_->space().knobs_in_cluster(cluster).front());
        reply = {{"cluster", cluster}, {"assignments", assign(state, knobs)}, {"reasoning", "move toward optimum"}};
        break;
      }
      case ActionKind::SingleKnob: {
        auto ranked = knobs_by_loss(state);
        const std::string name = ranked.empty() ? model_->space().knobs()[static_cast<std::size_t>(i) % model_->space().size()].name
                                                : ranked[static_cast<std::size_t>(i) % ranked.size()];
        const json a = assign(state, {name});
        reply = {{"knob", name}, {"value", a.at(name)}, {"reasoning", "largest remaining loss"}};
        break;
      }
      case ActionKind::Validate: {
        // Range and format are checked mechanically; the oracle adds the
        // resource budgets it knows from the model.
        json issues = json::array();
        for (const auto& c : model_->constraints()) {
          const auto x = as_number(state.config.at(c.knob));
          if (x && *x > c.cap) {
            issues.push_back({{"knob", c.knob},
                              {"category", "logical-conflict"},
                              {"explanation", fmt::format("exceeds the node budget of {}", c.cap)}});
          }
        }
        reply = {{"valid", issues.empty()}, {"issues", issues}};
        break;
      }
      case ActionKind::Fix:
        reply = {{"assignments", assign(state, pending_knobs(state))}};
        break;
      case ActionKind::Feedback: {
        auto ranked = knobs_by_loss(state);
        std::vector<std::string> knobs;
        for (std::size_t j = static_cast<std::size_t>(i); j < ranked.size() && knobs.size() < 3; ++j) knobs.push_back(ranked[j]);
        if (knobs.empty()) knobs.push_back(model_->space().knobs().front().name);
        reply = {{"assignments", assign(state, knobs)}, {"bottleneck_analysis", "highest-loss knobs"}};
        break;
      }
      default:
        throw Error(ErrorCode::InvalidArgument, fmt::format("{} takes no backend decision", to_string(prompt.kind)));
    }
    out.texts.push_back(reply.dump());
  }
  return out;
}

// Random.

RandomBackend::RandomBackend(const ConfigSpace& space, RandomOptions options)
    : space_(&space), options_(options), rng_(options.seed) {}

json RandomBackend::save_state() const { return {{"rng", rng_.state()}}; }
void RandomBackend::load_state(const json& j) { rng_.restore(j.at("rng").get<std::string>()); }

json RandomBackend::random_value(const Knob& knob, bool allow_invalid) {
  const bool invalid = allow_invalid && rng_.chance(options_.p_invalid);
  return std::visit(
      [&](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, IntRange>) {
          if (invalid) {
            if (rng_.chance(0.5)) return static_cast<double>(d.min) + 0.5;
            return d.max + (d.max - d.min) + 1;
          }
          const std::int64_t step = d.step.value_or(1);
          return d.min + step * rng_.uniform_int(0, (d.max - d.min) / step);
        } else if constexpr (std::is_same_v<T, RealRange>) {
          if (invalid) return d.max + (d.max - d.min) * rng_.uniform(0.1, 1.0);
          return rng_.uniform(d.min, d.max);
        } else if constexpr (std::is_same_v<T, BoolDomain>) {
          if (invalid) return "maybe";
          return rng_.chance(0.5);
        } else if constexpr (std::is_same_v<T, EnumDomain>) {
          if (invalid) return "not-an-option";
          return d.values[rng_.index(d.values.size())];
        } else {
          return value_to_json(knob.default_value);
        }
      },
      knob.domain);
}

Completion RandomBackend::do_query(const PromptBundle& prompt, int k) {
  const SearchState& state = *prompt.state;
  const auto& knobs = space_->knobs();
  Completion out;
  out.calls = static_cast<std::uint64_t>(k);
  for (int i = 0; i < k; ++i) {
    json reply;
    switch (prompt.kind) {
      case ActionKind::Plan: {
        std::vector<std::string> order;
        for (const auto& c : space_->clusters()) order.push_back(c.id);
        rng_.shuffle(order);
        reply = {{"plan", "random order"}, {"cluster_order", order}};
        break;
      }
      case ActionKind::ClusterTune: {
        std::vector<std::string> eligible = state.untuned_clusters;
        if (eligible.empty()) {
          for (const auto& c : space_->clusters()) eligible.push_back(c.id);
        }
        const std::string cluster = eligible[rng_.index(eligible.size())];
        json a = json::object();
        for (const auto& name : space_->knobs_in_cluster(cluster)) a[name] = random_value(space_->knob(name), true);
        reply = {{"cluster", cluster}, {"assignments", a}};
        break;
      }
      case ActionKind::SingleKnob: {
        const Knob& knob = knobs[rng_.index(knobs.size())];
        reply = {{"knob", knob.name}, {"value", random_value(knob, true)}};
        break;
      }
      case ActionKind::Validate: {
        // Occasionally objects to one tuned knob, right or wrong.
        if (!state.tuned.empty() && rng_.chance(options_.p_invalid)) {
          auto it = state.tuned.begin();
          std::advance(it, static_cast<std::ptrdiff_t>(rng_.index(state.tuned.size())));
          reply = {{"valid", false},
                   {"issues", json::array({{{"knob", *it}, {"category", "logical-conflict"}, {"explanation", "suspect value"}}})}};
        } else {
          reply = {{"valid", true}, {"issues", json::array()}};
        }
        break;
      }
      case ActionKind::Fix: {
        json a = json::object();
        for (const auto& name : pending_knobs(state)) a[name] = random_value(space_->knob(name), false);
        reply = {{"assignments", a}};
        break;
      }
      case ActionKind::Feedback: {
        json a = json::object();
        const auto count = rng_.uniform_int(1, 3);
        for (std::int64_t j = 0; j < count; ++j) {
          const Knob& knob = knobs[rng_.index(knobs.size())];
          a[knob.name] = random_value(knob, true);
        }
        reply = {{"assignments", a}};
        break;
      }
      default:
        throw Error(ErrorCode::InvalidArgument, fmt::format("{} takes no backend decision", to_string(prompt.kind)));
    }
    out.texts.push_back(reply.dump());
  }
  return out;
}

// Scripted.

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies, bool sampling)
    : replies_(replies.begin(), replies.end()), sampling_(sampling) {}

json ScriptedBackend::save_state() const { return {{"consumed", consumed_}, {"remaining", replies_}}; }

void ScriptedBackend::load_state(const json& j) {
  consumed_ = j.at("consumed");
  const auto remaining = j.at("remaining").get<std::vector<std::string>>();
  replies_.assign(remaining.begin(), remaining.end());
}

Completion ScriptedBackend::do_complete(const std::string& prompt, int n) {
  prompts_.push_back(prompt);
  if (replies_.empty()) throw Error(ErrorCode::BackendUnavailable, "scripted backend has no replies left");
  Completion out;
  const int take = sampling_ ? n : 1;
  for (int i = 0; i < take && !replies_.empty(); ++i) {
    out.texts.push_back(std::move(replies_.front()));
    replies_.pop_front();
    ++consumed_;
  }
  return out;
}

}  // namespace knobtuner
