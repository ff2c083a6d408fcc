#pragma once

// Decision backends: the component that turns a prompt into candidate
// actions. The remote backend talks to a chat-completion endpoint; the
// oracle, random and scripted backends are in-process policies for tests,
// demos and fuzzing.

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/actions.hpp"
#include "knobtuner/evaluation.hpp"
#include "knobtuner/rng.hpp"

namespace knobtuner {

/// Monotone per-session counters.
struct BackendUsage {
  std::uint64_t interaction_count = 0;
  std::uint64_t prompt_token_estimate = 0;
  std::uint64_t completion_token_estimate = 0;

  nlohmann::json to_json() const;
  static BackendUsage from_json(const nlohmann::json& j);
};

/// Raw output of one backend exchange. Token counts are filled in when the
/// backend reports them; otherwise they are estimated at 4 chars per token.
struct Completion {
  std::vector<std::string> texts;
  std::uint64_t calls = 1;
  std::optional<std::uint64_t> prompt_tokens;
  std::optional<std::uint64_t> completion_tokens;
};

class DecisionBackend {
 public:
  virtual ~DecisionBackend() = default;

  virtual std::string name() const = 0;
  virtual bool supports_sampling() const = 0;

  /// Up to k raw reply texts for an action prompt.
  std::vector<std::string> query(const PromptBundle& prompt, int k);
  /// Up to n raw reply texts for a free-form prompt (knowledge extraction).
  std::vector<std::string> complete(const std::string& prompt, int n = 1);

  const BackendUsage& usage() const noexcept { return usage_; }
  void set_usage(const BackendUsage& usage) { usage_ = usage; }

  /// Internal state (RNG, script position) for checkpoints.
  virtual nlohmann::json save_state() const { return nlohmann::json::object(); }
  virtual void load_state(const nlohmann::json&) {}

 protected:
  /// Defaults to do_complete on the rendered prompt.
  virtual Completion do_query(const PromptBundle& prompt, int k);
  /// Throws Error{BackendUnavailable} unless overridden.
  virtual Completion do_complete(const std::string& prompt, int n);

 private:
  void account(const std::string& prompt, const Completion& c);

  BackendUsage usage_;
};

/// Extracts the JSON value from a reply that may carry code fences or prose
/// around it. Throws Error{ParseError}.
nlohmann::json extract_json(const std::string& text);

/// Queries the backend for k samples and keeps those that parse against the
/// reply schema and payload invariants, collapsing duplicates. A reply that
/// is a JSON array contributes each element as a separate candidate.
/// Throws Error{AllCandidatesRejected} when nothing survives, and passes
/// Error{BackendUnavailable} through.
std::vector<ActionInstance> propose(DecisionBackend& backend, const PromptBundle& prompt, int k);

// In-process policies.

struct OracleOptions {
  double alpha = 0.8;  ///< fraction of the gap to the optimum closed per touch
  double noise = 0.1;  ///< std-dev of the per-touch perturbation of alpha
  std::uint64_t seed = 1;
};

/// Policy that knows the synthetic model's planted optimum. Adjustments move
/// each touched knob a fraction alpha (perturbed) toward its optimum; A1
/// orders clusters by their weight in the model; proposals stay within the
/// model's resource budgets, and the A4 verdict flags any knob over budget.
class OracleBackend : public DecisionBackend {
 public:
  OracleBackend(std::shared_ptr<const SyntheticModel> model, OracleOptions options = {});

  std::string name() const override { return "oracle"; }
  bool supports_sampling() const override { return true; }

  nlohmann::json save_state() const override;
  void load_state(const nlohmann::json& j) override;

  /// One move toward the optimum with gap fraction f, rounded toward the
  /// target on integer grids. Categorical knobs jump when f > 0.
  Value step_toward(const Knob& knob, const Value& current, double f) const;

 protected:
  Completion do_query(const PromptBundle& prompt, int k) override;

 private:
  double fraction();
  nlohmann::json assign(const SearchState& state, const std::vector<std::string>& knobs);
  std::vector<std::string> knobs_by_loss(const SearchState& state) const;

  std::shared_ptr<const SyntheticModel> model_;
  OracleOptions options_;
  Rng rng_;
};

struct RandomOptions {
  std::uint64_t seed = 1;
  double p_invalid = 0.1;  ///< chance that a proposed value is out of domain or malformed
};

/// Uninformed policy: uniform in-domain values with occasional invalid ones.
class RandomBackend : public DecisionBackend {
 public:
  RandomBackend(const ConfigSpace& space, RandomOptions options = {});

  std::string name() const override { return "random"; }
  bool supports_sampling() const override { return true; }

  nlohmann::json save_state() const override;
  void load_state(const nlohmann::json& j) override;

 protected:
  Completion do_query(const PromptBundle& prompt, int k) override;

 private:
  nlohmann::json random_value(const Knob& knob, bool allow_invalid);

  const ConfigSpace* space_;
  RandomOptions options_;
  Rng rng_;
};

/// Replays fixed reply texts in order. Each call consumes up to k entries;
/// an exhausted script raises Error{BackendUnavailable}.
class ScriptedBackend : public DecisionBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies, bool sampling = true);

  std::string name() const override { return "scripted"; }
  bool supports_sampling() const override { return sampling_; }
  std::size_t remaining() const { return replies_.size(); }
  /// Prompts seen so far, rendered.
  const std::vector<std::string>& prompts() const { return prompts_; }

  nlohmann::json save_state() const override;
  void load_state(const nlohmann::json& j) override;

 protected:
  Completion do_complete(const std::string& prompt, int n) override;

 private:
  std::deque<std::string> replies_;
  std::vector<std::string> prompts_;
  std::size_t consumed_ = 0;
  bool sampling_;
};

// Remote chat-completion client.

struct RemoteOptions {
  std::string url;  ///< full endpoint, e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key;
  double temperature = 0.7;
  bool supports_sampling = true;
  int retries = 2;
  std::vector<std::chrono::milliseconds> backoff = {std::chrono::seconds(1), std::chrono::seconds(4)};
  std::chrono::seconds timeout{120};
  /// Replaced in tests to avoid real waiting.
  std::function<void(std::chrono::milliseconds)> sleep;

  /// Reads KNOBTUNER_LLM_URL, KNOBTUNER_LLM_MODEL and KNOBTUNER_LLM_KEY.
  /// Throws Error{BackendUnavailable} when the URL or model is unset.
  static RemoteOptions from_env();
};

class RemoteBackend : public DecisionBackend {
 public:
  explicit RemoteBackend(RemoteOptions options);

  std::string name() const override { return "remote"; }
  bool supports_sampling() const override { return options_.supports_sampling; }

 protected:
  Completion do_complete(const std::string& prompt, int n) override;

 private:
  nlohmann::json post(const nlohmann::json& body);

  RemoteOptions options_;
  std::string base_;
  std::string path_;
};

}  // namespace knobtuner
