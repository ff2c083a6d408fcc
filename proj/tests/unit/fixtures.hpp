#pragma once

// Small hand-built spaces shared by the unit tests.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/knowledge.hpp"

namespace knobtuner::fixtures {

inline Knob int_knob(std::string name, std::string cluster, std::int64_t lo, std::int64_t hi, std::int64_t def,
                     std::optional<std::int64_t> step = std::nullopt) {
  Knob k;
  k.name = std::move(name);
  k.cluster_id = std::move(cluster);
  k.domain = IntRange{lo, hi, step};
  k.default_value = def;
  return k;
}

inline Knob real_knob(std::string name, std::string cluster, double lo, double hi, double def) {
  Knob k;
  k.name = std::move(name);
  k.cluster_id = std::move(cluster);
  k.domain = RealRange{lo, hi};
  k.default_value = def;
  return k;
}

inline Knob bool_knob(std::string name, std::string cluster, bool def) {
  Knob k;
  k.name = std::move(name);
  k.cluster_id = std::move(cluster);
  k.domain = BoolDomain{};
  k.default_value = def;
  return k;
}

inline Knob enum_knob(std::string name, std::string cluster, std::vector<std::string> values, std::string def) {
  Knob k;
  k.name = std::move(name);
  k.cluster_id = std::move(cluster);
  k.domain = EnumDomain{std::move(values)};
  k.default_value = std::move(def);
  return k;
}

/// Two clusters, five knobs.
inline KnobKnowledge small_knowledge() {
  KnobKnowledge kk;
  kk.clusters = {{"order", "ordering", "block cutting"}, {"peer", "validation", "commit path"}};
  kk.records = {int_knob("BatchSize", "order", 1, 1000, 100), int_knob("BatchTimeoutMs", "order", 100, 5000, 2000, 100),
                real_knob("GossipInterval", "peer", 0.5, 10.0, 4.0), bool_knob("HistoryDb", "peer", true),
                enum_knob("StateDb", "peer", {"leveldb", "couchdb"}, "leveldb")};
  return kk;
}

inline SystemContext small_system() {
  SystemContext s;
  s.hardware = {{"n0", 4, 8192, 100, ""}, {"n1", 8, 16384, 200, ""}};
  s.network.nodes = {{"n0", NodeRole::Orderer, "o"}, {"n1", NodeRole::Peer, "p"}};
  s.network.edges = {{"n0", "n1"}};
  s.workload.name = "smallbank";
  s.workload.transaction_count = 1000;
  s.workload.rate_mode = "fixed-load";
  return s;
}

inline KnowledgeBundle small_bundle() { return make_bundle(small_knowledge(), small_system()); }

}  // namespace knobtuner::fixtures
