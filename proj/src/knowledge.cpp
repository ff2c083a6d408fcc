#include "knobtuner/knowledge.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/errors.hpp"

namespace knobtuner {

namespace {

using nlohmann::json;

// Accumulates schema problems so a document is reported in one pass.
class Violations {
 public:
  explicit Violations(std::string source) : source_(std::move(source)) {}

  void add(const std::string& path, const std::string& what) {
    list_.push_back(source_.empty() ? path + ": " + what : source_ + ":" + path + ": " + what);
  }
  void absorb(const SchemaViolation& e) {
    for (const auto& v : e.violations()) list_.push_back(source_.empty() ? v : source_ + ":" + v);
  }
  bool empty() const { return list_.empty(); }
  void throw_if_any() {
    if (!list_.empty()) throw SchemaViolation(std::move(list_));
  }

 private:
  std::string source_;
  std::vector<std::string> list_;
};

std::optional<std::string> get_string(const json& obj, const char* key, const std::string& path,
                                      Violations& out, bool required) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) out.add(path + "/" + key, "missing required field");
    return std::nullopt;
  }
  if (!it->is_string()) {
    out.add(path + "/" + key, "expected string");
    return std::nullopt;
  }
  return it->get<std::string>();
}

std::optional<Value> get_scalar(const json& j, const std::string& path, Violations& out) {
  try {
    return value_from_json(j);
  } catch (const Error&) {
    out.add(path, "expected a scalar value");
    return std::nullopt;
  }
}

std::optional<Knob> parse_knob(const json& j, const std::string& path, Violations& out) {
  if (!j.is_object()) {
    out.add(path, "expected object");
    return std::nullopt;
  }
  Violations local("");
  Knob k;
  k.name = get_string(j, "name", path, local, true).value_or("");
  k.description = get_string(j, "description", path, local, false).value_or("");
  k.unit = get_string(j, "unit", path, local, false).value_or("");
  k.cluster_id = get_string(j, "cluster", path, local, true).value_or("");
  const std::string type = get_string(j, "type", path, local, true).value_or("");
  if (const auto it = j.find("performance_relevant"); it != j.end()) {
    if (it->is_boolean()) {
      k.performance_relevant = it->get<bool>();
    } else {
      local.add(path + "/performance_relevant", "expected boolean");
    }
  }

  std::optional<Value> def;
  if (const auto it = j.find("default"); it == j.end()) {
    local.add(path + "/default", "missing required field");
  } else {
    def = get_scalar(*it, path + "/default", local);
  }

  if (const auto it = j.find("special_values"); it != j.end()) {
    if (!it->is_array()) {
      local.add(path + "/special_values", "expected array");
    } else {
      for (std::size_t i = 0; i < it->size(); ++i) {
        const auto& sv = (*it)[i];
        const std::string sp = fmt::format("{}/special_values/{}", path, i);
        if (!sv.is_object() || !sv.contains("value")) {
          local.add(sp, "expected {\"value\", \"meaning\"}");
          continue;
        }
        if (auto v = get_scalar(sv["value"], sp + "/value", local)) {
          k.special_values.push_back({*v, sv.value("meaning", std::string{})});
        }
      }
    }
  }

  const auto range = j.find("range");
  const auto values = j.find("values");
  auto number_field = [&](const json& r, const char* key) -> std::optional<double> {
    const auto it = r.find(key);
    if (it == r.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) {
      local.add(path + "/range/" + key, "expected number");
      return std::nullopt;
    }
    return it->get<double>();
  };

  if (type == "integer" || type == "int") {
    const auto d = def ? as_number(*def) : std::nullopt;
    if (def && !d) local.add(path + "/default", "integer knob needs a numeric default");
    if (range != j.end() && range->is_object()) {
      IntRange r;
      const auto mn = number_field(*range, "min");
      const auto mx = number_field(*range, "max");
      const auto st = number_field(*range, "step");
      if (!mn || !mx) local.add(path + "/range", "range needs min and max");
      r.min = static_cast<std::int64_t>(mn.value_or(0));
      r.max = static_cast<std::int64_t>(mx.value_or(0));
      if (st) r.step = static_cast<std::int64_t>(*st);
      k.domain = r;
    } else {
      k.domain = default_int_range(static_cast<std::int64_t>(d.value_or(0)));
    }
    if (d && def && std::holds_alternative<double>(*def) && *d == std::nearbyint(*d)) {
      def = static_cast<std::int64_t>(*d);
    }
  } else if (type == "float" || type == "real" || type == "double") {
    const auto d = def ? as_number(*def) : std::nullopt;
    if (def && !d) local.add(path + "/default", "float knob needs a numeric default");
    if (range != j.end() && range->is_object()) {
      const auto mn = number_field(*range, "min");
      const auto mx = number_field(*range, "max");
      if (!mn || !mx) local.add(path + "/range", "range needs min and max");
      k.domain = RealRange{mn.value_or(0), mx.value_or(0)};
    } else {
      k.domain = default_real_range(d.value_or(0));
    }
    if (d) def = *d;
  } else if (type == "boolean" || type == "bool") {
    k.domain = BoolDomain{};
  } else if (type == "enum" || (type == "string" && values != j.end())) {
    EnumDomain e;
    if (values == j.end() || !values->is_array()) {
      local.add(path + "/values", "enumeration needs a values array");
    } else {
      for (const auto& v : *values) {
        if (v.is_string()) {
          e.values.push_back(v.get<std::string>());
        } else {
          local.add(path + "/values", "enumeration values must be strings");
        }
      }
    }
    k.domain = e;
  } else if (type == "string") {
    k.domain = StringDomain{j.value("pattern", std::string(".*"))};
  } else if (!type.empty()) {
    local.add(path + "/type", "unknown type '" + type + "'");
  }
  if (def) k.default_value = *def;

  if (!local.empty()) {
    try {
      local.throw_if_any();
    } catch (const SchemaViolation& e) {
      out.absorb(e);
    }
    return std::nullopt;
  }
  return k;
}

}  // namespace

const Knob* KnobKnowledge::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::string knob_type_name(const Domain& domain) {
  struct {
    std::string operator()(const IntRange&) const { return "integer"; }
    std::string operator()(const RealRange&) const { return "float"; }
    std::string operator()(const BoolDomain&) const { return "boolean"; }
    std::string operator()(const EnumDomain&) const { return "enum"; }
    std::string operator()(const StringDomain&) const { return "string"; }
  } visitor;
  return std::visit(visitor, domain);
}

KnobKnowledge parse_knob_knowledge(const json& doc, const std::string& source) {
  Violations out(source);
  KnobKnowledge k;
  if (!doc.is_object()) {
    out.add("", "expected object");
    out.throw_if_any();
  }
  const auto knobs = doc.find("knobs");
  if (knobs == doc.end() || !knobs->is_array()) {
    out.add("/knobs", "missing knobs array");
  } else {
    for (std::size_t i = 0; i < knobs->size(); ++i) {
      if (auto knob = parse_knob((*knobs)[i], fmt::format("/knobs/{}", i), out)) {
        k.records.push_back(std::move(*knob));
      }
    }
  }
  const auto clusters = doc.find("clusters");
  if (clusters == doc.end() || !clusters->is_array()) {
    out.add("/clusters", "missing clusters array");
  } else {
    for (std::size_t i = 0; i < clusters->size(); ++i) {
      const auto& c = (*clusters)[i];
      const std::string path = fmt::format("/clusters/{}", i);
      if (!c.is_object()) {
        out.add(path, "expected object");
        continue;
      }
      Cluster cl;
      cl.id = get_string(c, "id", path, out, true).value_or("");
      cl.role = get_string(c, "role", path, out, false).value_or("");
      cl.description = get_string(c, "description", path, out, false).value_or("");
      k.clusters.push_back(std::move(cl));
    }
  }
  // Cross-record checks run on whatever parsed, so one bad record does not
  // hide problems elsewhere.
  try {
    (void)build_space(k);
  } catch (const SchemaViolation& e) {
    out.absorb(e);
  }
  out.throw_if_any();
  return k;
}

json knob_to_json(const Knob& k) {
  json j = {{"name", k.name},
            {"description", k.description},
            {"type", knob_type_name(k.domain)},
            {"unit", k.unit},
            {"default", value_to_json(k.default_value)},
            {"cluster", k.cluster_id},
            {"performance_relevant", k.performance_relevant}};
  json specials = json::array();
  for (const auto& s : k.special_values) specials.push_back({{"value", value_to_json(s.value)}, {"meaning", s.meaning}});
  j["special_values"] = specials;
  if (const auto* r = std::get_if<IntRange>(&k.domain)) {
    j["range"] = {{"min", r->min}, {"max", r->max}};
    if (r->step) j["range"]["step"] = *r->step;
  } else if (const auto* rr = std::get_if<RealRange>(&k.domain)) {
    j["range"] = {{"min", rr->min}, {"max", rr->max}};
  } else if (const auto* e = std::get_if<EnumDomain>(&k.domain)) {
    j["values"] = e->values;
  } else if (const auto* s = std::get_if<StringDomain>(&k.domain)) {
    j["pattern"] = s->pattern;
  }
  return j;
}

json knob_knowledge_to_json(const KnobKnowledge& knowledge) {
  json knobs = json::array();
  for (const auto& k : knowledge.records) knobs.push_back(knob_to_json(k));
  json clusters = json::array();
  for (const auto& c : knowledge.clusters) {
    clusters.push_back({{"id", c.id}, {"role", c.role}, {"description", c.description}});
  }
  return {{"knobs", knobs}, {"clusters", clusters}};
}

SystemContext parse_system_context(const json& doc, const std::string& source) {
  Violations out(source);
  SystemContext sys;
  if (!doc.is_object()) {
    out.add("", "expected object");
    out.throw_if_any();
  }

  if (const auto hw = doc.find("hardware"); hw != doc.end()) {
    if (!hw->is_array()) {
      out.add("/hardware", "expected array");
    } else {
      for (std::size_t i = 0; i < hw->size(); ++i) {
        const auto& h = (*hw)[i];
        const std::string path = fmt::format("/hardware/{}", i);
        if (!h.is_object()) {
          out.add(path, "expected object");
          continue;
        }
        HardwareNode node;
        node.node = get_string(h, "node", path, out, true).value_or("");
        auto int_field = [&](const char* key) -> std::int64_t {
          const auto it = h.find(key);
          if (it == h.end()) return 0;
          if (!it->is_number() || it->get<double>() < 0) {
            out.add(path + "/" + key, "expected non-negative number");
            return 0;
          }
          return static_cast<std::int64_t>(it->get<double>());
        };
        node.cpus = static_cast<int>(int_field("cpus"));
        node.memory_mb = int_field("memory_mb");
        node.storage_gb = int_field("storage_gb");
        node.notes = get_string(h, "notes", path, out, false).value_or("");
        sys.hardware.push_back(std::move(node));
      }
    }
  }

  std::set<std::string> declared;
  if (const auto net = doc.find("network"); net != doc.end()) {
    if (!net->is_object()) {
      out.add("/network", "expected object");
    } else {
      if (const auto nodes = net->find("nodes"); nodes != net->end() && nodes->is_array()) {
        for (std::size_t i = 0; i < nodes->size(); ++i) {
          const auto& n = (*nodes)[i];
          const std::string path = fmt::format("/network/nodes/{}", i);
          if (!n.is_object()) {
            out.add(path, "expected object");
            continue;
          }
          NetworkNode node;
          node.name = get_string(n, "name", path, out, true).value_or("");
          const auto role = get_string(n, "role", path, out, true).value_or("");
          if (role == "peer") {
            node.role = NodeRole::Peer;
          } else if (role == "orderer") {
            node.role = NodeRole::Orderer;
          } else if (role == "other") {
            node.role = NodeRole::Other;
          } else if (!role.empty()) {
            out.add(path + "/role", "role must be peer, orderer or other");
          }
          node.org = get_string(n, "org", path, out, false).value_or("");
          if (!declared.insert(node.name).second) out.add(path + "/name", "duplicate node '" + node.name + "'");
          sys.network.nodes.push_back(std::move(node));
        }
      } else if (net->contains("nodes")) {
        out.add("/network/nodes", "expected array");
      }
      if (const auto edges = net->find("edges"); edges != net->end()) {
        if (!edges->is_array()) {
          out.add("/network/edges", "expected array");
        } else {
          for (std::size_t i = 0; i < edges->size(); ++i) {
            const auto& e = (*edges)[i];
            const std::string path = fmt::format("/network/edges/{}", i);
            if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) {
              out.add(path, "edge must be [\"a\", \"b\"]");
              continue;
            }
            const auto a = e[0].get<std::string>();
            const auto b = e[1].get<std::string>();
            if (!declared.count(a)) out.add(path, "edge references undeclared node '" + a + "'");
            if (!declared.count(b)) out.add(path, "edge references undeclared node '" + b + "'");
            sys.network.edges.emplace_back(a, b);
          }
        }
      }
    }
  }

  if (const auto wl = doc.find("workload"); wl != doc.end()) {
    if (!wl->is_object()) {
      out.add("/workload", "expected object");
    } else {
      sys.workload.name = get_string(*wl, "name", "/workload", out, true).value_or("");
      sys.workload.rate_mode = get_string(*wl, "rate_mode", "/workload", out, false).value_or("");
      const auto tc = wl->find("transaction_count");
      if (tc == wl->end() || !tc->is_number_integer() || tc->get<std::int64_t>() <= 0) {
        out.add("/workload/transaction_count", "must be a positive integer");
      } else {
        sys.workload.transaction_count = tc->get<std::int64_t>();
      }
      if (const auto ex = wl->find("extra"); ex != wl->end()) {
        if (ex->is_object()) {
          sys.workload.extra = *ex;
        } else {
          out.add("/workload/extra", "expected object");
        }
      }
    }
  } else {
    out.add("/workload", "missing required field");
  }

  out.throw_if_any();
  return sys;
}

json system_context_to_json(const SystemContext& sys) {
  json hw = json::array();
  for (const auto& h : sys.hardware) {
    hw.push_back({{"node", h.node}, {"cpus", h.cpus}, {"memory_mb", h.memory_mb}, {"storage_gb", h.storage_gb}});
    if (!h.notes.empty()) hw.back()["notes"] = h.notes;
  }
  json nodes = json::array();
  for (const auto& n : sys.network.nodes) {
    nodes.push_back({{"name", n.name}, {"role", std::string(to_string(n.role))}, {"org", n.org}});
  }
  json edges = json::array();
  for (const auto& [a, b] : sys.network.edges) edges.push_back({a, b});
  return {{"hardware", hw}, {"network", {{"nodes", nodes}, {"edges", edges}}}, {"workload", sys.workload.to_json()}};
}

ConfigSpace build_space(const KnobKnowledge& knowledge) {
  return ConfigSpace::create(knowledge.records, knowledge.clusters);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

KnowledgeBundle make_bundle(KnobKnowledge knob, SystemContext system) {
  KnowledgeBundle b;
  b.space = build_space(knob);
  b.knob = std::move(knob);
  b.system = std::move(system);
  return b;
}

namespace {

bool same_domain(const Domain& a, const Domain& b) {
  if (a.index() != b.index()) return false;
  if (const auto* x = std::get_if<IntRange>(&a)) {
    const auto& y = std::get<IntRange>(b);
    return x->min == y.min && x->max == y.max && x->step == y.step;
  }
  if (const auto* x = std::get_if<RealRange>(&a)) {
    const auto& y = std::get<RealRange>(b);
    return values_equal(x->min, y.min) && values_equal(x->max, y.max);
  }
  if (const auto* x = std::get_if<EnumDomain>(&a)) return x->values == std::get<EnumDomain>(b).values;
  if (const auto* x = std::get_if<StringDomain>(&a)) return x->pattern == std::get<StringDomain>(b).pattern;
  return true;
}

}  // namespace

KnowledgeBundle load_bundle(const BundlePaths& paths) {
  std::vector<std::string> problems;
  std::optional<KnobKnowledge> knob;
  std::optional<SystemContext> system;
  try {
    knob = parse_knob_knowledge(read_json_file(paths.space), paths.space.filename().string());
  } catch (const SchemaViolation& e) {
    problems.insert(problems.end(), e.violations().begin(), e.violations().end());
  }
  try {
    system = parse_system_context(read_json_file(paths.system), paths.system.filename().string());
  } catch (const SchemaViolation& e) {
    problems.insert(problems.end(), e.violations().begin(), e.violations().end());
  }
  if (knob && paths.admin_knobs) {
    try {
      // Administrator records may be partial documents: clusters are taken from
      // the space file when absent.
      auto doc = read_json_file(*paths.admin_knobs);
      if (!doc.contains("clusters")) doc["clusters"] = knob_knowledge_to_json(*knob)["clusters"];
      const auto admin = parse_knob_knowledge(doc, paths.admin_knobs->filename().string());
      for (const auto& rec : admin.records) {
        auto it = std::find_if(knob->records.begin(), knob->records.end(),
                               [&](const Knob& k) { return k.name == rec.name; });
        if (it == knob->records.end()) {
          spdlog::warn("administrator record for unknown knob '{}' ignored", rec.name);
          continue;
        }
        if (!same_domain(it->domain, rec.domain) || !values_equal(it->default_value, rec.default_value)) {
          spdlog::warn("knowledge conflict on '{}': administrator range/default overrides manual-derived one",
                       rec.name);
        }
        *it = rec;
      }
    } catch (const SchemaViolation& e) {
      problems.insert(problems.end(), e.violations().begin(), e.violations().end());
    }
  }
  if (!problems.empty()) throw SchemaViolation(std::move(problems));
  try {
    return make_bundle(std::move(*knob), std::move(*system));
  } catch (const SchemaViolation& e) {
    throw SchemaViolation(e.violations());
  }
}

KnowledgeBundle load_bundle(const std::filesystem::path& space_file, const std::filesystem::path& knowledge_dir) {
  BundlePaths paths{space_file, knowledge_dir / "system.json", std::nullopt};
  if (std::filesystem::exists(knowledge_dir / "knobs.json")) paths.admin_knobs = knowledge_dir / "knobs.json";
  return load_bundle(paths);
}

}  // namespace knobtuner
