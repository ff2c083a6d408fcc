#pragma once

// Multi-source knowledge: knob-level records, hardware and network context,
// and the functional clusters that group knobs.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knobtuner/config_model.hpp"

namespace knobtuner {

/// Knob-level knowledge. Each record is a fully typed Knob (description, type,
/// unit, special values, relevance flag, cluster assignment).
struct KnobKnowledge {
  std::vector<Knob> records;
  std::vector<Cluster> clusters;

  const Knob* find(const std::string& name) const;
};

struct KnowledgeBundle {
  KnobKnowledge knob;
  SystemContext system;
  /// Space bound to `knob`; one knob per record, clusters mirrored.
  ConfigSpace space;

  const std::vector<Cluster>& clusters() const { return space.clusters(); }
};

/// Wire type names accepted in knowledge files.
std::string knob_type_name(const Domain& domain);

/// Parses a knob-knowledge document. Every problem is collected and reported
/// together in a SchemaViolation; `source` prefixes each path.
KnobKnowledge parse_knob_knowledge(const nlohmann::json& doc, const std::string& source = "");
nlohmann::json knob_knowledge_to_json(const KnobKnowledge& knowledge);
nlohmann::json knob_to_json(const Knob& knob);

SystemContext parse_system_context(const nlohmann::json& doc, const std::string& source = "");
nlohmann::json system_context_to_json(const SystemContext& system);

/// Builds the configuration space described by the knob knowledge.
ConfigSpace build_space(const KnobKnowledge& knowledge);

struct BundlePaths {
  std::filesystem::path space;
  std::filesystem::path system;
  /// Administrator-supplied knob records. Where they disagree with `space`,
  /// the administrator record wins and the conflict is logged.
  std::optional<std::filesystem::path> admin_knobs;
};

/// Loads and validates all knowledge files. Throws Error{ParseError} on
/// unreadable or malformed JSON and SchemaViolation listing every problem.
KnowledgeBundle load_bundle(const BundlePaths& paths);

/// Conventional layout: `<dir>/system.json` and optional `<dir>/knobs.json`.
KnowledgeBundle load_bundle(const std::filesystem::path& space_file,
                            const std::filesystem::path& knowledge_dir);

KnowledgeBundle make_bundle(KnobKnowledge knob, SystemContext system);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace knobtuner
