#pragma once

// Building knob knowledge from component manuals with a decision backend:
// identify performance-related knobs, infer their attributes, then group
// them into clusters.

#include <filesystem>
#include <string>
#include <vector>

#include "knobtuner/backend.hpp"
#include "knobtuner/knowledge.hpp"

namespace knobtuner {

inline constexpr std::size_t kManualChunkCap = 8000;

/// Splits text into chunks of at most `cap` characters, preferring
/// paragraph and then line boundaries.
std::vector<std::string> chunk_manual_text(const std::string& text, std::size_t cap = kManualChunkCap);

/// Reads every regular file in `dir` (sorted by name) as UTF-8 text and
/// chunks it. Throws Error{ParseError} when nothing readable is found.
std::vector<std::string> load_manual_dir(const std::filesystem::path& dir, std::size_t cap = kManualChunkCap);

/// Runs the three-stage pipeline on each chunk with one backend query per
/// stage. A reply that fails its schema is retried once; a second failure
/// raises Error{ExtractionRejected}. Records that do not validate are
/// dropped with a warning, as are clusters left without knobs.
KnobKnowledge extract_knob_knowledge(const std::vector<std::string>& chunks, DecisionBackend& backend);

}  // namespace knobtuner
