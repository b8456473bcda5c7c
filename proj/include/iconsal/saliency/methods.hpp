#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iconsal/backbone/backbone.hpp"
#include "iconsal/core/image.hpp"
#include "iconsal/saliency/saliency_map.hpp"

namespace iconsal {

// Each method takes the original image, preprocesses it for the backbone,
// and returns a map in original-image pixel space. The map's PassCounter
// holds the model executions charged to the call.

SaliencyMap grad_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);
SaliencyMap grad_cam_pp(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);
SaliencyMap layer_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);
SaliencyMap legrad(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);
SaliencyMap score_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);
SaliencyMap gscore_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);
SaliencyMap clip_surgery(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg);

// Raw (pre-rectification) channel combinations, exposed for inspection.
std::vector<double> grad_cam_weights(const FeatureStack& gradients);
std::vector<double> grad_cam_pp_weights(const FeatureStack& activations, const FeatureStack& gradients);
RealGrid weighted_channel_sum(const FeatureStack& activations, const std::vector<double>& weights);
RealGrid layer_cam_raw(const FeatureStack& activations, const FeatureStack& gradients);

/// Channel order for gScoreCAM: descending |spatial mean gradient|, ties to
/// the lower channel index.
std::vector<int> rank_channels_by_gradient(const FeatureStack& gradients);

using MethodFn = std::function<SaliencyMap(const Image&, std::string_view, const MethodConfig&)>;

struct MethodRegistry {
    std::vector<std::pair<MethodId, MethodFn>> entries;

    void add(MethodId id, MethodFn fn);
    std::size_t size() const { return entries.size(); }
};

/// Binds the seven methods: LeGrad and CLIP Surgery to the transformer
/// backbone, the five CAM variants to the residual backbone.
MethodRegistry default_registry(Backbone& residual, Backbone& transformer);

struct MethodFailure {
    MethodId method;
    std::string message;
};

struct GeneratedMaps {
    std::vector<SaliencyMap> maps;  // ordered by method id
    std::vector<MethodFailure> failures;
};

/// Runs every registered method; a method that throws is recorded as a
/// failure and does not stop the others.
GeneratedMaps generate_all(const Image& image, std::string_view image_id, std::string_view prompt,
                           const MethodRegistry& registry, const MethodConfig& cfg);

}  // namespace iconsal
