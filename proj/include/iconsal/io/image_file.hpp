#pragma once

#include <filesystem>
#include <stdexcept>

#include "iconsal/core/grid.hpp"
#include "iconsal/core/image.hpp"

namespace iconsal {

class ImageFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Decodes any format OpenCV reads into RGB floats in [0, 1].
Image load_image(const std::filesystem::path& file);

/// Writes an 8-bit RGB image; the encoder follows the extension.
void save_image(const std::filesystem::path& file, const Image& image);

/// Heatmap overlay: each pixel's map value v picks a colour on a blue (0) to
/// red (1) ramp, blended over the artwork with weight `alpha`.
Image render_overlay(const Image& image, const RealGrid& map, double alpha = 0.5);

}  // namespace iconsal
