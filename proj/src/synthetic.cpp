#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "knobtuner/errors.hpp"
#include "knobtuner/evaluation.hpp"
#include "knobtuner/rng.hpp"

namespace knobtuner {

namespace {

std::pair<double, double> numeric_bounds(const Knob& k) {
  if (const auto* r = std::get_if<IntRange>(&k.domain)) {
    return {static_cast<double>(r->min), static_cast<double>(r->max)};
  }
  const auto& r = std::get<RealRange>(k.domain);
  return {r.min, r.max};
}

Value value_at(const Knob& k, double u) {
  const auto [lo, hi] = numeric_bounds(k);
  const double x = lo + u * (hi - lo);
  if (std::holds_alternative<IntRange>(k.domain)) return snap_to_domain(k, Value{std::nearbyint(x)});
  return std::clamp(x, lo, hi);
}

std::string_view resource_name(Resource r) { return r == Resource::Cpu ? "cpu" : "memory"; }

}  // namespace

EvalResult EvalResult::failure(std::string stage, std::string message) {
  EvalResult r;
  r.failed = true;
  r.throughput = 0.0;
  r.run_errors.push_back({std::move(stage), std::move(message)});
  return r;
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : run_errors) errors.push_back({{"stage", e.stage}, {"message", e.message}});
  return {{"throughput", throughput}, {"failed", failed}, {"errors", errors}};
}

nlohmann::json EvalResult::to_record() const {
  auto j = to_json();
  j["wall_seconds"] = wall_seconds;
  if (deploy_seconds) j["deploy_seconds"] = *deploy_seconds;
  if (eval_seconds) j["eval_seconds"] = *eval_seconds;
  return j;
}

EvalResult EvalResult::from_record(const nlohmann::json& j) {
  EvalResult r;
  r.throughput = j.at("throughput").get<double>();
  r.failed = j.at("failed").get<bool>();
  for (const auto& e : j.at("errors")) r.run_errors.push_back({e.at("stage"), e.at("message")});
  r.wall_seconds = j.value("wall_seconds", 0.0);
  if (j.contains("deploy_seconds")) r.deploy_seconds = j["deploy_seconds"].get<double>();
  if (j.contains("eval_seconds")) r.eval_seconds = j["eval_seconds"].get<double>();
  return r;
}

SyntheticModel::SyntheticModel(const ConfigSpace& space, std::vector<KnobTerm> terms,
                               std::vector<InteractionTerm> interactions,
                               std::vector<ResourceConstraint> constraints,
                               std::vector<std::pair<std::string, double>> cluster_weights, double t_max,
                               double target_default_ratio, double noise, std::uint64_t seed)
    : space_(space),
      terms_(std::move(terms)),
      interactions_(std::move(interactions)),
      constraints_(std::move(constraints)),
      cluster_weights_(std::move(cluster_weights)),
      t_max_(t_max),
      noise_(noise),
      seed_(seed) {
  Assignment opt;
  for (const auto& t : terms_) opt[t.knob] = t.optimum;
  optimum_ = merge_subconfig(space_, space_.default_configuration(), opt);
  const double base = raw_loss(space_.default_configuration());
  scale_ = base > 0.0 ? (1.0 - target_default_ratio) / base : 1.0;
}

double SyntheticModel::normalized(const Knob& knob, const Value& v) const {
  const auto [lo, hi] = numeric_bounds(knob);
  const auto x = as_number(v);
  if (!x) return 0.0;
  return hi > lo ? (*x - lo) / (hi - lo) : 0.0;
}

double SyntheticModel::knob_loss(const std::string& name, const Value& v) const {
  const auto it = std::find_if(terms_.begin(), terms_.end(), [&](const KnobTerm& t) { return t.knob == name; });
  if (it == terms_.end()) return 0.0;
  const Knob& k = space_.knob(name);
  if (it->categorical) return values_equal(v, it->optimum) ? 0.0 : it->weight;
  if (is_special_value(k, v) && !values_equal(v, it->optimum)) return it->weight;
  const double d = normalized(k, v) - normalized(k, it->optimum);
  return it->weight * d * d;
}

double SyntheticModel::raw_loss(const Configuration& config) const {
  double loss = 0.0;
  for (const auto& t : terms_) loss += knob_loss(t.knob, config.at(t.knob));
  for (const auto& p : interactions_) {
    const Knob& a = space_.knob(p.first);
    const Knob& b = space_.knob(p.second);
    const double sa = normalized(a, config.at(p.first)) - normalized(a, optimum_.at(p.first));
    const double sb = normalized(b, config.at(p.second)) - normalized(b, optimum_.at(p.second));
    loss += p.weight * (sa - sb) * (sa - sb);
  }
  return loss;
}

EvalResult SyntheticModel::evaluate(const Configuration& config) const {
  EvalResult result;
  for (const auto& k : space_.knobs()) {
    if (!config.contains(k.name)) {
      result.run_errors.push_back({"config", "missing knob " + k.name});
    } else if (!value_in_domain(k, config.at(k.name))) {
      result.run_errors.push_back(
          {"config", fmt::format("{}={} rejected: outside valid domain", k.name, value_to_string(config.at(k.name)))});
    }
  }
  if (result.run_errors.empty()) {
    for (const auto& c : constraints_) {
      const auto x = as_number(config.at(c.knob));
      if (x && *x > c.cap) {
        result.run_errors.push_back({"resource", fmt::format("{}={} exceeds the {} budget ({})", c.knob,
                                                             value_to_string(config.at(c.knob)),
                                                             resource_name(c.resource), c.cap)});
      }
    }
  }
  if (!result.run_errors.empty()) {
    result.failed = true;
    result.throughput = 0.0;
    return result;
  }
  double t = t_max_ * (1.0 - scale_ * raw_loss(config));
  if (noise_ > 0.0) {
    Rng rng(hash_string(config.to_json().dump(), seed_));
    t *= 1.0 + noise_ * rng.normal();
  }
  result.throughput = std::max(0.0, t);
  return result;
}

EvalResult SyntheticEvaluator::evaluate(const Configuration& config, const WorkloadSpec&) {
  return model_->evaluate(config);
}

SyntheticModel build_synthetic(const ConfigSpace& space, const KnowledgeBundle& bundle,
                               const SyntheticOptions& options) {
  if (space.clusters().size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "synthetic model needs a space with at least two clusters");
  }
  Rng rng(options.seed ^ 0x5eed5eedULL);
  const double difficulty = std::clamp(options.difficulty, 0.0, 1.0);
  const double t_max = options.t_max > 0.0 ? options.t_max : 1600.0 + 800.0 * rng.uniform();

  std::vector<std::pair<std::string, double>> cluster_weights;
  double cw_total = 0.0;
  for (const auto& c : space.clusters()) {
    const double w = 0.5 + rng.uniform();
    cluster_weights.emplace_back(c.id, w);
    cw_total += w;
  }
  for (auto& [id, w] : cluster_weights) w /= cw_total;

  std::vector<KnobTerm> terms;
  for (const auto& [cluster, cw] : cluster_weights) {
    std::vector<std::pair<const Knob*, double>> members;
    double total = 0.0;
    for (const auto& k : space.knobs()) {
      if (k.cluster_id != cluster) continue;
      const double w = k.performance_relevant ? 1.0 + rng.uniform() : 0.15;
      members.emplace_back(&k, w);
      total += w;
    }
    for (const auto& [k, w] : members) {
      KnobTerm term;
      term.knob = k->name;
      term.cluster = cluster;
      term.weight = cw * w / total;
      term.categorical = !k->is_numeric();
      term.optimum = k->default_value;
      if (k->performance_relevant) {
        if (k->is_numeric()) {
          const auto [lo, hi] = numeric_bounds(*k);
          if (hi > lo) {
            const double u_def = is_special_value(*k, k->default_value)
                                     ? 0.5
                                     : (as_number(k->default_value).value_or(lo) - lo) / (hi - lo);
            double u = rng.uniform();
            for (int attempt = 0; attempt < 32 && std::fabs(u - u_def) < 0.25; ++attempt) u = rng.uniform();
            if (std::fabs(u - u_def) < 0.25) u = u_def < 0.5 ? 1.0 : 0.0;
            term.optimum = value_at(*k, u);
          }
        } else if (std::holds_alternative<BoolDomain>(k->domain)) {
          term.optimum = !std::get<bool>(k->default_value);
        } else if (const auto* e = std::get_if<EnumDomain>(&k->domain); e && e->values.size() > 1) {
          std::vector<std::string> others;
          for (const auto& v : e->values) {
            if (!values_equal(Value{v}, k->default_value)) others.push_back(v);
          }
          term.optimum = others[rng.index(others.size())];
        }
      }
      terms.push_back(std::move(term));
    }
  }
  std::sort(cluster_weights.begin(), cluster_weights.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });

  // Couplings between numeric knobs of different clusters.
  std::vector<const Knob*> numeric;
  for (const auto& k : space.knobs()) {
    if (!k.is_numeric()) continue;
    const auto [lo, hi] = numeric_bounds(k);
    if (hi > lo) numeric.push_back(&k);
  }
  std::vector<InteractionTerm> interactions;
  const std::size_t want_pairs = (space.size() + 9) / 10;
  std::set<std::pair<std::string, std::string>> used;
  for (int attempt = 0; numeric.size() >= 2 && interactions.size() < want_pairs && attempt < 200; ++attempt) {
    const Knob* a = numeric[rng.index(numeric.size())];
    const Knob* b = numeric[rng.index(numeric.size())];
    if (a->cluster_id == b->cluster_id) continue;
    auto key = std::minmax(a->name, b->name);
    if (!used.insert({key.first, key.second}).second) continue;
    auto weight_of = [&](const std::string& name) {
      for (const auto& t : terms) {
        if (t.knob == name) return t.weight;
      }
      return 0.0;
    };
    interactions.push_back({a->name, b->name, 0.5 * difficulty * (weight_of(a->name) + weight_of(b->name))});
  }

  // Resource caps from hardware knowledge.
  const int cpus = bundle.system.min_cpus() > 0 ? bundle.system.min_cpus() : 8;
  const double memory_mb =
      bundle.system.min_memory_mb() > 0 ? static_cast<double>(bundle.system.min_memory_mb()) : 16384.0;
  const std::regex cpu_pattern("thread|worker|concurren|parallel|pool|goroutine", std::regex::icase);
  const std::regex mem_pattern("cache|buffer|memory|mem_", std::regex::icase);
  std::vector<std::pair<const Knob*, Resource>> limited;
  for (const Knob* k : numeric) {
    if (std::regex_search(k->name, cpu_pattern)) {
      limited.emplace_back(k, Resource::Cpu);
    } else if (std::regex_search(k->name, mem_pattern)) {
      limited.emplace_back(k, Resource::Memory);
    }
  }
  if (limited.empty() && !numeric.empty()) {
    std::vector<const Knob*> pool = numeric;
    rng.shuffle(pool);
    const std::size_t n = std::max<std::size_t>(1, (space.size() + 19) / 20);
    for (std::size_t i = 0; i < std::min(n, pool.size()); ++i) limited.emplace_back(pool[i], Resource::Cpu);
  }
  std::vector<ResourceConstraint> constraints;
  for (const auto& [k, resource] : limited) {
    const auto [lo, hi] = numeric_bounds(*k);
    double needed = as_number(k->default_value).value_or(lo);
    for (const auto& t : terms) {
      if (t.knob == k->name) needed = std::max(needed, as_number(t.optimum).value_or(lo));
    }
    if (needed >= hi) continue;
    double budget = resource == Resource::Cpu ? 8.0 * cpus : 0.5 * memory_mb;
    if (resource == Resource::Memory && (k->unit == "GB" || k->unit == "gb")) budget /= 1024.0;
    if (resource == Resource::Memory && (k->unit == "KB" || k->unit == "kb")) budget *= 1024.0;
    double cap = std::max(budget, needed);
    if (cap >= hi) cap = needed + 0.5 * (hi - needed);
    if (std::holds_alternative<IntRange>(k->domain)) cap = std::floor(cap);
    if (cap < needed) cap = needed;
    constraints.push_back({k->name, resource, cap});
  }

  return SyntheticModel(space, std::move(terms), std::move(interactions), std::move(constraints),
                        std::move(cluster_weights), t_max, 0.75 - 0.2 * difficulty, options.noise,
                        options.seed);
}

}  // namespace knobtuner
