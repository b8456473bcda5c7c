#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace iconsal {

/// Pixel box, half-open on the max edges: covers x in [x_min, x_max).
struct BoundingBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    long long area() const { return static_cast<long long>(x_max - x_min) * (y_max - y_min); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
    bool within(int width, int height) const {
        return valid() && x_min >= 0 && y_min >= 0 && x_max <= width && y_max <= height;
    }
    auto operator<=>(const BoundingBox&) const = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

enum class SizeBucket { S, M, L };

std::string_view to_string(SizeBucket b);

struct SizeCutoffs {
    double small = 0.01;   // area fraction <= small -> S
    double medium = 0.10;  // area fraction <= medium -> M, otherwise L
};

SizeBucket size_bucket(const BoundingBox& box, int image_width, int image_height, const SizeCutoffs& cutoffs = {});

}  // namespace iconsal
