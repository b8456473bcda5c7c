#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "iconsal/backbone/backbone.hpp"

namespace iconsal {

/// Identifiers the toolkit can instantiate. "RN50x16" and "ViT-B/32" have the
/// published input sizes and tap shapes; "RN-tiny" and "ViT-tiny" are small
/// stand-ins for quick runs and tests.
std::vector<std::string> known_backbones();
BackboneFamily backbone_family(const std::string& identifier);

/// Weights are synthesized deterministically from `seed` (0 keeps the
/// built-in default). Throws BackboneError for an unknown identifier.
std::unique_ptr<Backbone> make_backbone(const std::string& identifier, std::uint64_t seed = 0);

}  // namespace iconsal
