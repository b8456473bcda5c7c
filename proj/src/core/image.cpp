#include "iconsal/core/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iconsal {

namespace {

struct Tap {
    int lo;
    int hi;
    double frac;
};

// Source tap for a destination sample at continuous source coordinate `pos`.
Tap source_tap(double pos, int extent) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, extent - 1);
    return {lo, hi, pos - lo};
}

}  // namespace

ResizeMode parse_resize_mode(const std::string& text) {
    if (text == "squash" || text == "resize") return ResizeMode::squash;
    if (text == "center-crop" || text == "center_crop" || text == "crop") return ResizeMode::center_crop;
    throw std::invalid_argument("unknown resize mode: " + text);
}

std::string to_string(ResizeMode mode) {
    return mode == ResizeMode::squash ? "squash" : "center-crop";
}

Image resize_bilinear(const Image& src, int out_width, int out_height) {
    if (src.empty() || out_width <= 0 || out_height <= 0)
        throw std::invalid_argument("resize_bilinear: empty source or target");
    Image out(out_width, out_height);
    const double sy_scale = static_cast<double>(src.height) / out_height;
    const double sx_scale = static_cast<double>(src.width) / out_width;
    for (int oy = 0; oy < out_height; ++oy) {
        const Tap ty = source_tap((oy + 0.5) * sy_scale - 0.5, src.height);
        for (int ox = 0; ox < out_width; ++ox) {
            const Tap tx = source_tap((ox + 0.5) * sx_scale - 0.5, src.width);
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(ty.lo, tx.lo, c) * (1 - tx.frac) + src.at(ty.lo, tx.hi, c) * tx.frac;
                const double bot = src.at(ty.hi, tx.lo, c) * (1 - tx.frac) + src.at(ty.hi, tx.hi, c) * tx.frac;
                out.at(oy, ox, c) = static_cast<float>(top * (1 - ty.frac) + bot * ty.frac);
            }
        }
    }
    return out;
}

PreprocessedImage preprocess(const Image& src, int input_resolution, ResizeMode mode, const Normalization& norm) {
    if (src.empty()) throw std::invalid_argument("preprocess: empty image");
    if (input_resolution <= 0) throw std::invalid_argument("preprocess: input resolution must be positive");

    PreprocessTransform t;
    t.mode = mode;
    t.original_width = src.width;
    t.original_height = src.height;
    t.input_resolution = input_resolution;
    if (mode == ResizeMode::squash) {
        t.crop_w = src.width;
        t.crop_h = src.height;
    } else {
        const double side = std::min(src.width, src.height);
        t.crop_x = (src.width - side) / 2.0;
        t.crop_y = (src.height - side) / 2.0;
        t.crop_w = side;
        t.crop_h = side;
    }

    Image out(input_resolution, input_resolution);
    const double sy_scale = t.crop_h / input_resolution;
    const double sx_scale = t.crop_w / input_resolution;
    for (int oy = 0; oy < input_resolution; ++oy) {
        const Tap ty = source_tap(t.crop_y + (oy + 0.5) * sy_scale - 0.5, src.height);
        for (int ox = 0; ox < input_resolution; ++ox) {
            const Tap tx = source_tap(t.crop_x + (ox + 0.5) * sx_scale - 0.5, src.width);
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(ty.lo, tx.lo, c) * (1 - tx.frac) + src.at(ty.lo, tx.hi, c) * tx.frac;
                const double bot = src.at(ty.hi, tx.lo, c) * (1 - tx.frac) + src.at(ty.hi, tx.hi, c) * tx.frac;
                const double v = top * (1 - ty.frac) + bot * ty.frac;
                out.at(oy, ox, c) = static_cast<float>((v - norm.mean[c]) / norm.stddev[c]);
            }
        }
    }
    return {std::move(out), t};
}

RealGrid upsample_bilinear(const RealGrid& src, int out_height, int out_width) {
    if (src.empty()) throw std::invalid_argument("upsample_bilinear: empty source");
    RealGrid out(out_height, out_width);
    const double sy_scale = static_cast<double>(src.height()) / out_height;
    const double sx_scale = static_cast<double>(src.width()) / out_width;
    for (int oy = 0; oy < out_height; ++oy) {
        const Tap ty = source_tap((oy + 0.5) * sy_scale - 0.5, src.height());
        for (int ox = 0; ox < out_width; ++ox) {
            const Tap tx = source_tap((ox + 0.5) * sx_scale - 0.5, src.width());
            const double top = src(ty.lo, tx.lo) * (1 - tx.frac) + src(ty.lo, tx.hi) * tx.frac;
            const double bot = src(ty.hi, tx.lo) * (1 - tx.frac) + src(ty.hi, tx.hi) * tx.frac;
            out(oy, ox) = top * (1 - ty.frac) + bot * ty.frac;
        }
    }
    return out;
}

RealGrid to_original_space(const RealGrid& input_space, const PreprocessTransform& t) {
    if (input_space.empty()) throw std::invalid_argument("to_original_space: empty grid");
    if (t.mode == ResizeMode::squash)
        return upsample_bilinear(input_space, t.original_height, t.original_width);

    RealGrid out(t.original_height, t.original_width, 0.0);
    const double gy_scale = input_space.height() / t.crop_h;
    const double gx_scale = input_space.width() / t.crop_w;
    for (int y = 0; y < t.original_height; ++y) {
        const double cy = y + 0.5;
        if (cy < t.crop_y || cy >= t.crop_y + t.crop_h) continue;
        const Tap ty = source_tap((cy - t.crop_y) * gy_scale - 0.5, input_space.height());
        for (int x = 0; x < t.original_width; ++x) {
            const double cx = x + 0.5;
            if (cx < t.crop_x || cx >= t.crop_x + t.crop_w) continue;
            const Tap tx = source_tap((cx - t.crop_x) * gx_scale - 0.5, input_space.width());
            const double top = input_space(ty.lo, tx.lo) * (1 - tx.frac) + input_space(ty.lo, tx.hi) * tx.frac;
            const double bot = input_space(ty.hi, tx.lo) * (1 - tx.frac) + input_space(ty.hi, tx.hi) * tx.frac;
            out(y, x) = top * (1 - ty.frac) + bot * ty.frac;
        }
    }
    return out;
}

}  // namespace iconsal
