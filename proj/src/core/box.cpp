#include "iconsal/core/box.hpp"

#include <algorithm>

namespace iconsal {

double iou(const BoundingBox& a, const BoundingBox& b) {
    const long long iw = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const long long ih = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const long long inter = iw * ih;
    const long long uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string_view to_string(SizeBucket b) {
    switch (b) {
        case SizeBucket::S: return "S";
        case SizeBucket::M: return "M";
        case SizeBucket::L: return "L";
    }
    return "?";
}

SizeBucket size_bucket(const BoundingBox& box, int image_width, int image_height, const SizeCutoffs& cutoffs) {
    const double fraction =
        static_cast<double>(box.area()) / (static_cast<double>(image_width) * static_cast<double>(image_height));
    if (fraction <= cutoffs.small) return SizeBucket::S;
    if (fraction <= cutoffs.medium) return SizeBucket::M;
    return SizeBucket::L;
}

}  // namespace iconsal
