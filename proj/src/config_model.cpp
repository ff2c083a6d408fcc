#include "knobtuner/config_model.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

namespace {

bool close_enough(double a, double b) {
  const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) <= kRealTolerance * scale;
}

std::optional<std::int64_t> as_integral(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v)) {
    if (std::isfinite(*d) && std::nearbyint(*d) == *d &&
        std::fabs(*d) < 9.0e18) {
      return static_cast<std::int64_t>(*d);
    }
  }
  return std::nullopt;
}

bool regex_full_match(const std::string& pattern, const std::string& s) {
  try {
    return std::regex_match(s, std::regex(pattern));
  } catch (const std::regex_error&) {
    return false;
  }
}

struct InDomain {
  const Value& v;

  bool operator()(const IntRange& r) const {
    const auto i = as_integral(v);
    if (!i || *i < r.min || *i > r.max) return false;
    if (r.step && *r.step > 0) return (*i - r.min) % *r.step == 0;
    return true;
  }
  bool operator()(const RealRange& r) const {
    const auto d = as_number(v);
    if (!d || !std::isfinite(*d)) return false;
    const double tol = kRealTolerance * std::max({1.0, std::fabs(r.min), std::fabs(r.max)});
    return *d >= r.min - tol && *d <= r.max + tol;
  }
  bool operator()(const BoolDomain&) const { return std::holds_alternative<bool>(v); }
  bool operator()(const EnumDomain& e) const {
    const auto* s = std::get_if<std::string>(&v);
    return s && std::find(e.values.begin(), e.values.end(), *s) != e.values.end();
  }
  bool operator()(const StringDomain& d) const {
    const auto* s = std::get_if<std::string>(&v);
    return s && regex_full_match(d.pattern, *s);
  }
};

}  // namespace

bool values_equal(const Value& a, const Value& b) {
  if (a.index() == b.index()) {
    if (const auto* da = std::get_if<double>(&a)) return close_enough(*da, std::get<double>(b));
    return a == b;
  }
  const auto na = as_number(a);
  const auto nb = as_number(b);
  if (na && nb) return close_enough(*na, *nb);
  return false;
}

std::optional<double> as_number(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::nullopt;
}

std::string value_to_string(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return x;
        } else if constexpr (std::is_same_v<T, double>) {
          return fmt::format("{}", x);
        } else {
          return std::to_string(x);
        }
      },
      v);
}

nlohmann::json value_to_json(const Value& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_unsigned()) return static_cast<std::int64_t>(j.get<std::uint64_t>());
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw Error(ErrorCode::ParseError, "expected a scalar value, got " + std::string(j.type_name()));
}

RealRange default_real_range(double default_value) {
  const double a = 0.1 * default_value;
  const double b = 10.0 * default_value;
  return {std::min(a, b), std::max(a, b)};
}

IntRange default_int_range(std::int64_t default_value) {
  const auto r = default_real_range(static_cast<double>(default_value));
  return {static_cast<std::int64_t>(std::floor(r.min)), static_cast<std::int64_t>(std::ceil(r.max)),
          std::nullopt};
}

bool is_special_value(const Knob& knob, const Value& v) {
  return std::any_of(knob.special_values.begin(), knob.special_values.end(),
                     [&](const SpecialValue& s) { return values_equal(s.value, v); });
}

bool value_in_domain(const Knob& knob, const Value& v) {
  return std::visit(InDomain{v}, knob.domain) || is_special_value(knob, v);
}

Value snap_to_domain(const Knob& knob, const Value& v) {
  if (value_in_domain(knob, v)) return canonical_value(knob, v);
  if (const auto* r = std::get_if<IntRange>(&knob.domain)) {
    const auto num = as_number(v);
    if (!num || !std::isfinite(*num)) return knob.default_value;
    const double step = static_cast<double>(r->step && *r->step > 0 ? *r->step : 1);
    const double def = as_number(knob.default_value).value_or(static_cast<double>(r->min));
    const double clamped = std::clamp(*num, static_cast<double>(r->min), static_cast<double>(r->max));
    const double k = std::floor((clamped - static_cast<double>(r->min)) / step);
    double lower = static_cast<double>(r->min) + k * step;
    double upper = lower + step;
    if (upper > static_cast<double>(r->max)) upper = lower;
    const double dl = clamped - lower;
    const double du = upper - clamped;
    double pick;
    if (dl < du) {
      pick = lower;
    } else if (du < dl) {
      pick = upper;
    } else {
      pick = std::fabs(lower - def) <= std::fabs(upper - def) ? lower : upper;
    }
    return static_cast<std::int64_t>(pick);
  }
  if (const auto* r = std::get_if<RealRange>(&knob.domain)) {
    const auto num = as_number(v);
    if (!num || !std::isfinite(*num)) return knob.default_value;
    return std::clamp(*num, r->min, r->max);
  }
  return knob.default_value;
}

Value canonical_value(const Knob& knob, const Value& v) {
  if (std::holds_alternative<IntRange>(knob.domain)) {
    if (const auto i = as_integral(v)) return *i;
  } else if (std::holds_alternative<RealRange>(knob.domain)) {
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  }
  return v;
}

// Configuration

const Value& Configuration::at(const std::string& knob) const {
  const auto it = assignments_.find(knob);
  if (it == assignments_.end()) throw Error(ErrorCode::UnknownKnob, "unknown knob '" + knob + "'");
  return it->second;
}

bool Configuration::is_tuned(const std::string& knob) const {
  const auto it = provenance_.find(knob);
  return it != provenance_.end() && it->second == Provenance::Tuned;
}

nlohmann::json Configuration::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : assignments_) j[name] = value_to_json(v);
  return j;
}

nlohmann::json Configuration::to_record() const {
  nlohmann::json tuned = nlohmann::json::array();
  for (const auto& [name, p] : provenance_) {
    if (p == Provenance::Tuned) tuned.push_back(name);
  }
  return {{"values", to_json()}, {"tuned", tuned}, {"unvalidated", unvalidated_}};
}

Configuration Configuration::from_record(const nlohmann::json& j) {
  Configuration c;
  for (const auto& [name, v] : j.at("values").items()) {
    c.assignments_[name] = value_from_json(v);
    c.provenance_[name] = Provenance::Default;
  }
  for (const auto& name : j.at("tuned")) c.provenance_[name.get<std::string>()] = Provenance::Tuned;
  c.unvalidated_ = j.value("unvalidated", false);
  return c;
}

bool operator==(const Configuration& a, const Configuration& b) {
  if (a.assignments_.size() != b.assignments_.size()) return false;
  for (const auto& [name, v] : a.assignments_) {
    const auto it = b.assignments_.find(name);
    if (it == b.assignments_.end() || !values_equal(v, it->second)) return false;
  }
  return true;
}

// ConfigSpace

ConfigSpace ConfigSpace::create(std::vector<Knob> knobs, std::vector<Cluster> clusters) {
  std::vector<std::string> problems;
  std::set<std::string> cluster_ids;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i].id.empty()) problems.push_back(fmt::format("/clusters/{}/id: empty cluster id", i));
    if (!cluster_ids.insert(clusters[i].id).second) {
      problems.push_back(fmt::format("/clusters/{}/id: duplicate cluster '{}'", i, clusters[i].id));
    }
  }

  ConfigSpace space;
  std::set<std::string> used_clusters;
  for (std::size_t i = 0; i < knobs.size(); ++i) {
    const Knob& k = knobs[i];
    const std::string path = fmt::format("/knobs/{}", i);
    if (k.name.empty()) problems.push_back(path + "/name: empty knob name");
    if (!space.index_.emplace(k.name, i).second) {
      problems.push_back(fmt::format("{}/name: duplicate knob '{}'", path, k.name));
    }
    if (const auto* r = std::get_if<IntRange>(&k.domain)) {
      if (r->min > r->max) problems.push_back(fmt::format("{}/range: min > max for '{}'", path, k.name));
      if (r->step && *r->step <= 0) problems.push_back(fmt::format("{}/range/step: step must be > 0 for '{}'", path, k.name));
    } else if (const auto* rr = std::get_if<RealRange>(&k.domain)) {
      if (rr->min > rr->max) problems.push_back(fmt::format("{}/range: min > max for '{}'", path, k.name));
    } else if (const auto* e = std::get_if<EnumDomain>(&k.domain)) {
      if (e->values.empty()) problems.push_back(fmt::format("{}/values: empty enumeration for '{}'", path, k.name));
    }
    if (!value_in_domain(k, k.default_value)) {
      problems.push_back(fmt::format("{}/default: default {} of '{}' outside its domain", path,
                                     value_to_string(k.default_value), k.name));
    }
    if (!cluster_ids.count(k.cluster_id)) {
      problems.push_back(fmt::format("{}/cluster: knob '{}' references unknown cluster '{}'", path,
                                     k.name, k.cluster_id));
    }
    used_clusters.insert(k.cluster_id);
  }
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (!used_clusters.count(clusters[i].id)) {
      problems.push_back(fmt::format("/clusters/{}: cluster '{}' has no knobs", i, clusters[i].id));
    }
  }
  if (!problems.empty()) throw SchemaViolation(std::move(problems));

  space.knobs_ = std::move(knobs);
  space.clusters_ = std::move(clusters);
  return space;
}

const Knob* ConfigSpace::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &knobs_[it->second];
}

const Knob& ConfigSpace::knob(const std::string& name) const {
  if (const Knob* k = find(name)) return *k;
  throw Error(ErrorCode::UnknownKnob, "unknown knob '" + name + "'");
}

const Cluster* ConfigSpace::find_cluster(const std::string& id) const {
  for (const auto& c : clusters_) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<std::string> ConfigSpace::knobs_in_cluster(const std::string& cluster_id) const {
  std::vector<std::string> out;
  for (const auto& k : knobs_) {
    if (k.cluster_id == cluster_id) out.push_back(k.name);
  }
  return out;
}

Configuration ConfigSpace::default_configuration() const {
  Configuration c;
  for (const auto& k : knobs_) {
    c.assignments_[k.name] = k.default_value;
    c.provenance_[k.name] = Provenance::Default;
  }
  return c;
}

Configuration ConfigSpace::configuration_from_json(const nlohmann::json& flat) const {
  if (!flat.is_object()) throw Error(ErrorCode::ParseError, "configuration must be a JSON object");
  Assignment delta;
  for (const auto& [name, v] : flat.items()) delta[name] = value_from_json(v);
  return merge_subconfig(*this, default_configuration(), delta);
}

Configuration merge_subconfig(const ConfigSpace& space, const Configuration& base,
                              const Assignment& delta) {
  for (const auto& [name, v] : delta) {
    if (!space.find(name)) throw Error(ErrorCode::UnknownKnob, "unknown knob '" + name + "'");
  }
  Configuration out = base;
  for (const auto& [name, v] : delta) {
    out.assignments_[name] = v;
    out.provenance_[name] = Provenance::Tuned;
  }
  out.unvalidated_ = std::any_of(out.assignments_.begin(), out.assignments_.end(), [&](const auto& kv) {
    return !value_in_domain(space.knob(kv.first), kv.second);
  });
  return out;
}

std::vector<KnobChange> diff_configs(const Configuration& a, const Configuration& b) {
  const auto& aa = a.assignments();
  const auto& bb = b.assignments();
  const bool same_keys = aa.size() == bb.size() &&
                         std::equal(aa.begin(), aa.end(), bb.begin(),
                                    [](const auto& x, const auto& y) { return x.first == y.first; });
  if (!same_keys) throw Error(ErrorCode::SpaceMismatch, "configurations cover different knob sets");

  std::vector<KnobChange> out;
  auto it = bb.begin();
  for (const auto& [name, v] : aa) {
    if (!values_equal(v, it->second)) out.push_back({name, v, it->second});
    ++it;
  }
  return out;
}

Assignment diff_as_assignment(const std::vector<KnobChange>& diff) {
  Assignment out;
  for (const auto& c : diff) out[c.knob] = c.new_value;
  return out;
}

std::string_view to_string(NodeRole role) noexcept {
  switch (role) {
    case NodeRole::Peer: return "peer";
    case NodeRole::Orderer: return "orderer";
    case NodeRole::Other: return "other";
  }
  return "other";
}

nlohmann::json WorkloadSpec::to_json() const {
  return {{"name", name}, {"transaction_count", transaction_count}, {"rate_mode", rate_mode}, {"extra", extra}};
}

int SystemContext::min_cpus() const {
  int out = 0;
  for (const auto& h : hardware) {
    if (h.cpus > 0 && (out == 0 || h.cpus < out)) out = h.cpus;
  }
  return out;
}

std::int64_t SystemContext::min_memory_mb() const {
  std::int64_t out = 0;
  for (const auto& h : hardware) {
    if (h.memory_mb > 0 && (out == 0 || h.memory_mb < out)) out = h.memory_mb;
  }
  return out;
}

}  // namespace knobtuner
