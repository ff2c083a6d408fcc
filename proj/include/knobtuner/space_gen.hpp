#pragma once

// Seeded generation of knob knowledge and a deployment context, for
// synthetic experiments and tests.

#include <cstdint>

#include "knobtuner/knowledge.hpp"

namespace knobtuner {

struct SpaceGenOptions {
  int knobs = 40;
  int clusters = 5;
  std::uint64_t seed = 1;
  double relevant_fraction = 0.8;
};

/// Mixed integer, real, boolean and enum knobs spread round-robin over the
/// clusters. Throws Error{InvalidArgument} unless 1 <= clusters <= knobs.
KnobKnowledge generate_knob_knowledge(const SpaceGenOptions& options);

/// Four peers and one orderer on 8-CPU, 16 GB nodes.
SystemContext default_system_context();

KnowledgeBundle generate_bundle(const SpaceGenOptions& options);

}  // namespace knobtuner
