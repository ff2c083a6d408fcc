#include "knobtuner/space_gen.hpp"

#include <array>
#include <set>

#include <fmt/format.h>

#include "knobtuner/errors.hpp"
#include "knobtuner/rng.hpp"

namespace knobtuner {

namespace {

struct Role {
  const char* id;
  const char* role;
  const char* description;
};

constexpr std::array<Role, 8> kRoles = {{
    {"gateway", "transaction gateway", "client connections and proposal intake"},
    {"execution", "endorsement and execution", "chaincode execution and endorsement"},
    {"ordering", "ordering service", "block cutting and consensus"},
    {"commit", "validation and commit", "block validation and ledger commit"},
    {"network", "networking", "gossip and peer-to-peer transport"},
    {"resources", "resource management", "threads, caches and memory pools"},
    {"ledger", "state storage", "state database and history"},
    {"security", "identity and crypto", "signature verification and membership"},
}};

constexpr std::array<const char*, 16> kBases = {
    "batch_size",      "batch_timeout_ms", "max_message_count", "worker_threads", "cache_size_mb",  "queue_length",
    "request_timeout", "concurrency_limit", "buffer_size_kb",  "retry_interval", "pool_size",      "max_connections",
    "flush_interval",  "window_size",       "prefetch_depth",  "gc_interval_s"};

}  // namespace

KnobKnowledge generate_knob_knowledge(const SpaceGenOptions& options) {
  if (options.clusters < 1 || options.knobs < options.clusters) {
    throw Error(ErrorCode::InvalidArgument, "need at least one cluster and no more clusters than knobs");
  }
  Rng rng(options.seed ^ 0x6b6e6f62ULL);
  KnobKnowledge k;
  for (int c = 0; c < options.clusters; ++c) {
    const Role& r = kRoles[static_cast<std::size_t>(c) % kRoles.size()];
    const std::string id = c < static_cast<int>(kRoles.size()) ? r.id : fmt::format("{}{}", r.id, c / kRoles.size());
    k.clusters.push_back({id, r.role, r.description});
  }
  std::set<std::string> names;
  for (int i = 0; i < options.knobs; ++i) {
    const Cluster& cluster = k.clusters[static_cast<std::size_t>(i) % k.clusters.size()];
    Knob knob;
    knob.cluster_id = cluster.id;
    knob.performance_relevant = rng.uniform() < options.relevant_fraction;
    const double kind = rng.uniform();
    std::string base;
    if (kind < 0.6) {
      base = kBases[rng.index(kBases.size())];
      const std::int64_t lo = rng.uniform_int(0, 4);
      const std::int64_t span = 50 * rng.uniform_int(2, 40);
      std::optional<std::int64_t> step;
      if (rng.chance(0.25)) step = 5;
      std::int64_t def = lo + (span / 4);
      if (step) def = lo + (def - lo) / *step * *step;
      knob.domain = IntRange{lo, lo + (step ? span / *step * *step : span), step};
      knob.default_value = def;
      if (base.find("timeout") != std::string::npos || base.find("interval") != std::string::npos) knob.unit = "ms";
      if (base.ends_with("_mb")) knob.unit = "MB";
      if (base.ends_with("_kb")) knob.unit = "KB";
    } else if (kind < 0.85) {
      base = rng.chance(0.5) ? "load_factor" : "backoff_multiplier";
      const double hi = rng.uniform(2.0, 10.0);
      knob.domain = RealRange{0.1, hi};
      knob.default_value = 0.1 + (hi - 0.1) * rng.uniform(0.2, 0.4);
    } else if (kind < 0.95) {
      base = rng.chance(0.5) ? "enable_compression" : "enable_pipelining";
      knob.domain = BoolDomain{};
      knob.default_value = false;
    } else {
      base = "scheduler_policy";
      knob.domain = EnumDomain{{"fifo", "priority", "fair"}};
      knob.default_value = std::string("fifo");
    }
    std::string name = cluster.id + "." + base;
    for (int n = 2; names.count(name); ++n) name = fmt::format("{}.{}_{}", cluster.id, base, n);
    names.insert(name);
    knob.name = name;
    knob.description = fmt::format("{} setting of the {}", base, cluster.role);
    k.records.push_back(std::move(knob));
  }
  return k;
}

SystemContext default_system_context() {
  SystemContext s;
  for (const char* n : {"peer0", "peer1", "peer2", "peer3", "orderer0"}) {
    s.hardware.push_back({n, 8, 16384, 200, ""});
  }
  s.network.nodes = {{"peer0", NodeRole::Peer, "org1"},
                     {"peer1", NodeRole::Peer, "org1"},
                     {"peer2", NodeRole::Peer, "org2"},
                     {"peer3", NodeRole::Peer, "org2"},
                     {"orderer0", NodeRole::Orderer, "ordererorg"}};
  for (const char* p : {"peer0", "peer1", "peer2", "peer3"}) s.network.edges.emplace_back(p, "orderer0");
  s.workload.name = "transfer";
  s.workload.transaction_count = 10000;
  s.workload.rate_mode = "fixed-load";
  return s;
}

KnowledgeBundle generate_bundle(const SpaceGenOptions& options) {
  return make_bundle(generate_knob_knowledge(options), default_system_context());
}

}  // namespace knobtuner
