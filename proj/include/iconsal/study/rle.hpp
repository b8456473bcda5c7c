#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iconsal/core/grid.hpp"

namespace iconsal {

/// Binary mask as alternating run lengths over the row-major pixels, starting
/// with a run of zeros (possibly of length 0). Wire form:
///   {"width": W, "height": H, "rle": [z0, o1, z2, o3, ...]}
/// Runs sum to W * H. Encoding emits no zero-length run except the leading one.
struct RleMask {
    int width = 0;
    int height = 0;
    std::vector<std::int64_t> runs;
    bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const MaskGrid& mask);

/// Throws StudyError on negative runs or a total other than W * H. Nonzero
/// pixels of the input count as on.
MaskGrid rle_decode(const RleMask& rle);

std::int64_t rle_on_pixels(const RleMask& rle);

std::string rle_to_json(const RleMask& rle);
RleMask rle_from_json(const std::string& text);

}  // namespace iconsal
