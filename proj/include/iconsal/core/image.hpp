#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "iconsal/core/grid.hpp"

namespace iconsal {

/// Interleaved RGB float image, row-major, HWC.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // size = width * height * 3

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool empty() const { return pixels.empty(); }
};

enum class ResizeMode { squash, center_crop };

ResizeMode parse_resize_mode(const std::string& text);
std::string to_string(ResizeMode mode);

/// Maps model-input coordinates back to the original image. The model input
/// covers the rectangle [crop_x, crop_x + crop_w) x [crop_y, crop_y + crop_h)
/// of the original image, in continuous pixel coordinates.
struct PreprocessTransform {
    ResizeMode mode = ResizeMode::squash;
    int original_width = 0;
    int original_height = 0;
    int input_resolution = 0;
    double crop_x = 0.0;
    double crop_y = 0.0;
    double crop_w = 0.0;
    double crop_h = 0.0;
};

struct PreprocessedImage {
    Image input;
    PreprocessTransform transform;
};

struct Normalization {
    std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
    std::array<float, 3> stddev{0.26862954f, 0.26130258f, 0.27577711f};
};

/// Bilinear resampling with half-pixel centers (align_corners = false).
Image resize_bilinear(const Image& src, int out_width, int out_height);

/// Resizes (or center-crops then resizes) to a square model input and applies
/// per-channel normalization.
PreprocessedImage preprocess(const Image& src, int input_resolution, ResizeMode mode,
                             const Normalization& norm = {});

/// Bilinear upsampling of a grid with half-pixel centers; source samples are
/// clamped at the border.
RealGrid upsample_bilinear(const RealGrid& src, int out_height, int out_width);

/// Resamples a grid that spans the model input onto original-image pixels.
/// Pixels outside the cropped region receive zero.
RealGrid to_original_space(const RealGrid& input_space, const PreprocessTransform& transform);

}  // namespace iconsal
