#include "iconsal/saliency/saliency_map.hpp"

#include <algorithm>
#include <cmath>

namespace iconsal {

std::string_view method_id_string(MethodId m) {
    switch (m) {
        case MethodId::clip_surgery: return "clip-surgery";
        case MethodId::grad_cam: return "gradcam";
        case MethodId::grad_cam_pp: return "gradcam-pp";
        case MethodId::gscore_cam: return "gscorecam";
        case MethodId::layer_cam: return "layercam";
        case MethodId::legrad: return "legrad";
        case MethodId::score_cam: return "scorecam";
    }
    return "unknown";
}

std::string_view method_display_name(MethodId m) {
    switch (m) {
        case MethodId::clip_surgery: return "CLIP Surgery";
        case MethodId::grad_cam: return "GradCAM";
        case MethodId::grad_cam_pp: return "GradCAM++";
        case MethodId::gscore_cam: return "gScoreCAM";
        case MethodId::layer_cam: return "LayerCAM";
        case MethodId::legrad: return "LeGrad";
        case MethodId::score_cam: return "ScoreCAM";
    }
    return "unknown";
}

Paradigm method_paradigm(MethodId m) {
    switch (m) {
        case MethodId::score_cam:
        case MethodId::gscore_cam: return Paradigm::score_based;
        case MethodId::clip_surgery: return Paradigm::model_specific;
        default: return Paradigm::gradient;
    }
}

MethodId parse_method_id(std::string_view text) {
    for (MethodId m : kAllMethods)
        if (text == method_id_string(m) || text == method_display_name(m)) return m;
    throw SaliencyError("unknown method id: " + std::string(text));
}

RealGrid rectify(RealGrid g) {
    for (auto& v : g.values()) v = std::max(v, 0.0);
    return g;
}

RealGrid minmax_normalize(const RealGrid& g, bool* degenerate) {
    if (degenerate) *degenerate = false;
    if (g.empty()) return g;
    const auto [lo_it, hi_it] = std::minmax_element(g.values().begin(), g.values().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    RealGrid out(g.height(), g.width(), 0.0);
    if (hi - lo > kEpsilon) {
        const double range = hi - lo;
        for (std::size_t i = 0; i < g.size(); ++i) out.storage()[i] = (g.storage()[i] - lo) / range;
    } else if (hi > kEpsilon) {
        std::fill(out.storage().begin(), out.storage().end(), 1.0);
    } else if (degenerate) {
        *degenerate = true;
    }
    return out;
}

bool satisfies_map_invariants(const SaliencyMap& m, int image_height, int image_width) {
    if (m.values.height() != image_height || m.values.width() != image_width) return false;
    double hi = 0.0;
    for (double v : m.values.values()) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
        hi = std::max(hi, v);
    }
    return hi == 1.0 || hi == 0.0;
}

}  // namespace iconsal
