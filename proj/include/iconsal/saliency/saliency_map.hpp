#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iconsal/backbone/backbone.hpp"
#include "iconsal/core/grid.hpp"

namespace iconsal {

/// Ordered by method id so that iteration order is the canonical output order.
enum class MethodId { clip_surgery, grad_cam, grad_cam_pp, gscore_cam, layer_cam, legrad, score_cam };

inline constexpr std::array<MethodId, 7> kAllMethods{
    MethodId::clip_surgery, MethodId::grad_cam,  MethodId::grad_cam_pp, MethodId::gscore_cam,
    MethodId::layer_cam,    MethodId::legrad,    MethodId::score_cam,
};

enum class Paradigm { gradient, score_based, model_specific };

std::string_view method_id_string(MethodId m);
std::string_view method_display_name(MethodId m);
Paradigm method_paradigm(MethodId m);
MethodId parse_method_id(std::string_view text);

class SaliencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SaliencyMap {
    RealGrid values;  // original-image pixel space, each value in [0, 1]
    MethodId method = MethodId::grad_cam;
    std::string prompt;
    std::string image_id;
    bool degenerate = false;  // raw map was identically zero
    PassCounter passes;
};

struct MethodConfig {
    int top_k = 300;          // gScoreCAM only
    int channel_batch = 16;   // masked inputs scored per batch
    std::optional<std::string> layer_override;
    std::vector<std::string> layercam_taps;  // empty: the single default tap
    bool scorecam_softmax = false;
    int legrad_first_layer = 0;
    int surgery_depth = 0;  // 0: half the blocks, at least one
    ResizeMode resize_mode = ResizeMode::squash;
};

inline constexpr double kEpsilon = 1e-8;

RealGrid rectify(RealGrid g);

/// Min-max normalization to [0, 1]. A grid whose range is within epsilon maps
/// to all ones when its maximum is positive, otherwise to all zeros (and sets
/// `degenerate`).
RealGrid minmax_normalize(const RealGrid& g, bool* degenerate = nullptr);

bool satisfies_map_invariants(const SaliencyMap& m, int image_height, int image_width);

}  // namespace iconsal
