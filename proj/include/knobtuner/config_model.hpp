#pragma once

// Knobs, value domains, configurations, clusters, and the deployment context
// records shared by every other module. All types are plain values.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace knobtuner {

using Value = std::variant<std::int64_t, double, bool, std::string>;

/// Relative tolerance used when comparing real-valued knob values.
inline constexpr double kRealTolerance = 1e-9;

bool values_equal(const Value& a, const Value& b);
std::string value_to_string(const Value& v);
nlohmann::json value_to_json(const Value& v);
/// Throws Error{ParseError} for objects, arrays and null.
Value value_from_json(const nlohmann::json& j);
/// Numeric view of a value; nullopt for bool/string.
std::optional<double> as_number(const Value& v);

struct IntRange {
  std::int64_t min = 0;
  std::int64_t max = 0;
  std::optional<std::int64_t> step;
};

struct RealRange {
  double min = 0.0;
  double max = 0.0;
};

struct BoolDomain {};

struct EnumDomain {
  std::vector<std::string> values;
};

struct StringDomain {
  std::string pattern = ".*";
};

using Domain = std::variant<IntRange, RealRange, BoolDomain, EnumDomain, StringDomain>;

struct SpecialValue {
  Value value;
  std::string meaning;
};

struct Knob {
  std::string name;
  Domain domain;
  std::string unit;
  Value default_value;
  std::vector<SpecialValue> special_values;
  std::string cluster_id;
  std::string description;
  bool performance_relevant = true;

  bool is_numeric() const {
    return std::holds_alternative<IntRange>(domain) || std::holds_alternative<RealRange>(domain);
  }
};

/// Fallback range for a numeric knob whose documentation gives none:
/// [0.1 x default, 10 x default], ordered so that min <= max.
RealRange default_real_range(double default_value);
IntRange default_int_range(std::int64_t default_value);

bool value_in_domain(const Knob& knob, const Value& v);
bool is_special_value(const Knob& knob, const Value& v);

/// Moves `v` onto the knob's domain: numeric values are clamped to the range
/// and step-quantized integers rounded to the nearest grid point, ties going
/// toward the knob default. Categorical values outside the domain fall back
/// to the default. Values already in the domain are returned unchanged.
Value snap_to_domain(const Knob& knob, const Value& v);

/// Integral doubles become integers for integer knobs and integers become
/// doubles for real knobs; other values pass through.
Value canonical_value(const Knob& knob, const Value& v);

struct Cluster {
  std::string id;
  std::string role;
  std::string description;
};

using Assignment = std::map<std::string, Value>;

enum class Provenance { Default, Tuned };

class ConfigSpace;

class Configuration {
 public:
  Configuration() = default;

  const Assignment& assignments() const noexcept { return assignments_; }
  const std::map<std::string, Provenance>& provenance() const noexcept { return provenance_; }
  bool unvalidated() const noexcept { return unvalidated_; }

  const Value& at(const std::string& knob) const;
  bool contains(const std::string& knob) const { return assignments_.count(knob) != 0; }
  bool is_tuned(const std::string& knob) const;
  std::size_t size() const noexcept { return assignments_.size(); }

  /// Flat {knob: value} object.
  nlohmann::json to_json() const;
  /// Full record including provenance, for checkpoints.
  nlohmann::json to_record() const;
  static Configuration from_record(const nlohmann::json& j);

  friend bool operator==(const Configuration& a, const Configuration& b);

 private:
  friend class ConfigSpace;
  friend Configuration merge_subconfig(const ConfigSpace&, const Configuration&, const Assignment&);

  Assignment assignments_;
  std::map<std::string, Provenance> provenance_;
  bool unvalidated_ = false;
};

class ConfigSpace {
 public:
  ConfigSpace() = default;

  /// Validates invariants (unique names, ranges, defaults, cluster partition);
  /// throws SchemaViolation listing every problem.
  static ConfigSpace create(std::vector<Knob> knobs, std::vector<Cluster> clusters);

  const std::vector<Knob>& knobs() const noexcept { return knobs_; }
  const std::vector<Cluster>& clusters() const noexcept { return clusters_; }
  std::size_t size() const noexcept { return knobs_.size(); }

  const Knob* find(const std::string& name) const;
  const Knob& knob(const std::string& name) const;
  const Cluster* find_cluster(const std::string& id) const;
  std::vector<std::string> knobs_in_cluster(const std::string& cluster_id) const;

  Configuration default_configuration() const;
  /// Builds a configuration from a flat JSON object; missing knobs take their
  /// defaults, unknown keys raise UnknownKnob.
  Configuration configuration_from_json(const nlohmann::json& flat) const;

 private:
  std::vector<Knob> knobs_;
  std::vector<Cluster> clusters_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Returns `base` with `delta` written over it; touched knobs become Tuned.
/// Throws Error{UnknownKnob} for keys outside the space. The result is
/// flagged unvalidated when any merged value falls outside its domain.
Configuration merge_subconfig(const ConfigSpace& space, const Configuration& base,
                              const Assignment& delta);

struct KnobChange {
  std::string knob;
  Value old_value;
  Value new_value;
};

/// Knobs whose values differ between `a` and `b`, in name order.
/// Throws Error{SpaceMismatch} when the two cover different knob sets.
std::vector<KnobChange> diff_configs(const Configuration& a, const Configuration& b);

Assignment diff_as_assignment(const std::vector<KnobChange>& diff);

// Deployment context.

struct HardwareNode {
  std::string node;
  int cpus = 0;
  std::int64_t memory_mb = 0;
  std::int64_t storage_gb = 0;
  std::string notes;
};

enum class NodeRole { Peer, Orderer, Other };

std::string_view to_string(NodeRole role) noexcept;

struct NetworkNode {
  std::string name;
  NodeRole role = NodeRole::Other;
  std::string org;
};

struct NetworkTopology {
  std::vector<NetworkNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
};

struct WorkloadSpec {
  std::string name;
  std::int64_t transaction_count = 1;
  std::string rate_mode;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct SystemContext {
  std::vector<HardwareNode> hardware;
  NetworkTopology network;
  WorkloadSpec workload;

  int min_cpus() const;
  std::int64_t min_memory_mb() const;
};

}  // namespace knobtuner
