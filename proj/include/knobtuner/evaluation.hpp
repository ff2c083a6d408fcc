#pragma once

// Throughput evaluation: the Eval(system, configuration, workload) contract,
// a synthetic pipeline model with a planted optimum, and an adapter that runs
// an external benchmark command.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/config_model.hpp"
#include "knobtuner/knowledge.hpp"

namespace knobtuner {

struct RunError {
  std::string stage;
  std::string message;

  friend bool operator==(const RunError&, const RunError&) = default;
};

struct EvalResult {
  double throughput = 0.0;  ///< committed transactions per second
  std::vector<RunError> run_errors;
  bool failed = false;
  double wall_seconds = 0.0;
  /// Deployment/benchmark split when the evaluator can attribute it.
  std::optional<double> deploy_seconds;
  std::optional<double> eval_seconds;

  static EvalResult failure(std::string stage, std::string message);

  /// Deterministic fields only (no timings).
  nlohmann::json to_json() const;
  nlohmann::json to_record() const;
  static EvalResult from_record(const nlohmann::json& j);
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;

  virtual std::string name() const = 0;
  virtual EvalResult evaluate(const Configuration& config, const WorkloadSpec& workload) = 0;
};

// Synthetic model.

struct KnobTerm {
  std::string knob;
  std::string cluster;
  double weight = 0.0;   ///< share of the total loss budget
  Value optimum;
  bool categorical = false;
};

struct InteractionTerm {
  std::string first;
  std::string second;
  double weight = 0.0;
};

enum class Resource { Cpu, Memory };

struct ResourceConstraint {
  std::string knob;
  Resource resource = Resource::Cpu;
  double cap = 0.0;  ///< values strictly above cap fail deployment
};

/// Multi-stage pipeline stand-in: each cluster contributes a unimodal loss,
/// designated cross-cluster knob pairs add a coupling penalty, and resource
/// caps derived from hardware knowledge make some regions undeployable.
///
///   T(C) = T_max * (1 - scale * (sum_k w_k d_k^2 + sum_p g_p (s_a - s_b)^2))
///
/// where d_k is the normalized distance of knob k from its planted value
/// (0/1 for categorical knobs) and s is the signed normalized offset.
/// T is clamped at zero. The maximum T_max is attained only at the planted
/// optimum.
class SyntheticModel {
 public:
  SyntheticModel(const ConfigSpace& space, std::vector<KnobTerm> terms,
                 std::vector<InteractionTerm> interactions, std::vector<ResourceConstraint> constraints,
                 std::vector<std::pair<std::string, double>> cluster_weights, double t_max,
                 double target_default_ratio, double noise, std::uint64_t seed);

  const Configuration& optimum() const noexcept { return optimum_; }
  double t_max() const noexcept { return t_max_; }
  double noise() const noexcept { return noise_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<KnobTerm>& terms() const noexcept { return terms_; }
  const std::vector<InteractionTerm>& interactions() const noexcept { return interactions_; }
  const std::vector<ResourceConstraint>& constraints() const noexcept { return constraints_; }
  /// Clusters with their contribution weights, heaviest first.
  const std::vector<std::pair<std::string, double>>& cluster_weights() const noexcept { return cluster_weights_; }
  const ConfigSpace& space() const noexcept { return space_; }

  /// Weighted loss of one knob's current value, before global scaling.
  double knob_loss(const std::string& knob, const Value& v) const;
  /// Normalized position of a numeric value within its knob's range.
  double normalized(const Knob& knob, const Value& v) const;

  EvalResult evaluate(const Configuration& config) const;

 private:
  double raw_loss(const Configuration& config) const;

  ConfigSpace space_;
  std::vector<KnobTerm> terms_;
  std::vector<InteractionTerm> interactions_;
  std::vector<ResourceConstraint> constraints_;
  std::vector<std::pair<std::string, double>> cluster_weights_;
  Configuration optimum_;
  double t_max_;
  double scale_ = 1.0;
  double noise_;
  std::uint64_t seed_;
};

struct SyntheticOptions {
  std::uint64_t seed = 1;
  double difficulty = 0.5;  ///< in [0, 1]; raises coupling and lowers T_default / T_max
  double noise = 0.0;
  double t_max = 0.0;       ///< 0 picks a seeded value in [1600, 2400)
};

/// Plants an optimum over the space and derives weights, couplings and
/// resource caps. Throws Error{InvalidArgument} when the space has fewer than
/// two clusters.
SyntheticModel build_synthetic(const ConfigSpace& space, const KnowledgeBundle& bundle,
                               const SyntheticOptions& options);

class SyntheticEvaluator : public Evaluator {
 public:
  explicit SyntheticEvaluator(std::shared_ptr<const SyntheticModel> model) : model_(std::move(model)) {}

  std::string name() const override { return "synthetic"; }
  EvalResult evaluate(const Configuration& config, const WorkloadSpec& workload) override;

  const SyntheticModel& model() const { return *model_; }

 private:
  std::shared_ptr<const SyntheticModel> model_;
};

// External benchmark adapter.

struct ExternalOptions {
  /// Shell command; `{config_path}` and `{workload_path}` are substituted.
  std::string command_template;
  std::chrono::duration<double> timeout = std::chrono::minutes(30);
  /// Directory for rendered config/workload files; a temp dir when empty.
  std::filesystem::path work_dir;
};

/// Parsed final line of a benchmark run: {"tps": number, "errors": [string]}
/// plus optional {"timestamps": {"deployed": t, "finished": t}} (epoch secs).
struct MetricsLine {
  double tps = 0.0;
  std::vector<std::string> errors;
  std::optional<double> deployed_at;
  std::optional<double> finished_at;
};

/// Throws Error{ParseError} when the line is not a valid metrics object.
MetricsLine parse_metrics_line(const std::string& line);

class ExternalEvaluator : public Evaluator {
 public:
  /// Throws Error{InvalidArgument} when the template lacks a placeholder.
  explicit ExternalEvaluator(ExternalOptions options);

  std::string name() const override { return "external"; }
  EvalResult evaluate(const Configuration& config, const WorkloadSpec& workload) override;

 private:
  ExternalOptions options_;
  std::uint64_t run_counter_ = 0;
};

}  // namespace knobtuner
