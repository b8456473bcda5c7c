#include "iconsal/backbone/registry.hpp"

#include "iconsal/backbone/residual.hpp"
#include "iconsal/backbone/vit.hpp"

namespace iconsal {

namespace {

ResidualConfig residual_config(const std::string& id) {
    ResidualConfig c;
    if (id == "RN-tiny") {
        c.identifier = id;
        c.input_resolution = 64;
        c.grid = 4;
        c.channels = 32;
        c.embed_dim = 32;
    }
    return c;
}

VitConfig vit_config(const std::string& id) {
    VitConfig c;
    if (id == "ViT-tiny") {
        c.identifier = id;
        c.input_resolution = 64;
        c.patch = 16;
        c.width = 32;
        c.heads = 2;
        c.layers = 2;
        c.mlp_width = 64;
        c.embed_dim = 32;
    }
    return c;
}

}  // namespace

std::vector<std::string> known_backbones() { return {"RN50x16", "RN-tiny", "ViT-B/32", "ViT-tiny"}; }

BackboneFamily backbone_family(const std::string& id) {
    if (id == "RN50x16" || id == "RN-tiny") return BackboneFamily::residual;
    if (id == "ViT-B/32" || id == "ViT-tiny") return BackboneFamily::transformer;
    throw BackboneError("unknown backbone '" + id + "'");
}

std::unique_ptr<Backbone> make_backbone(const std::string& id, std::uint64_t seed) {
    if (backbone_family(id) == BackboneFamily::residual) {
        auto c = residual_config(id);
        if (seed != 0) c.seed = seed;
        return std::make_unique<ResidualBackbone>(c);
    }
    auto c = vit_config(id);
    if (seed != 0) c.seed = seed ^ 0x7669740000000000ULL;
    return std::make_unique<VitBackbone>(c);
}

}  // namespace iconsal
