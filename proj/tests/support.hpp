#pragma once

#include <random>

#include "iconsal/backbone/residual.hpp"
#include "iconsal/backbone/vit.hpp"
#include "iconsal/core/hash.hpp"
#include "iconsal/core/image.hpp"

namespace test_support {

inline iconsal::Image random_image(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    iconsal::Image img(w, h);
    for (auto& p : img.pixels) p = static_cast<float>(0.5 + 0.5 * iconsal::symmetric_unit(rng));
    return img;
}

inline iconsal::ResidualConfig small_residual_config() {
    iconsal::ResidualConfig c;
    c.identifier = "RN-small";
    c.input_resolution = 64;
    c.grid = 4;
    c.mid_channels = 6;
    c.channels = 32;
    c.embed_dim = 16;
    return c;
}

inline iconsal::VitConfig small_vit_config() {
    iconsal::VitConfig c;
    c.identifier = "ViT-small";
    c.input_resolution = 32;
    c.patch = 8;
    c.width = 16;
    c.heads = 2;
    c.layers = 2;
    c.mlp_width = 24;
    c.embed_dim = 8;
    return c;
}

}  // namespace test_support
