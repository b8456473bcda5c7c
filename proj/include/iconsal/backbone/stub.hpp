#pragma once

#include <functional>
#include <string>
#include <vector>

#include "iconsal/backbone/backbone.hpp"

namespace iconsal {

/// Token-count text encoder: "a b c" -> (3, 0, ..., 0).
std::vector<double> token_count_embedding(std::string_view prompt, int dim);

/// Hand-specified backbone for analytic checks. Every tap returns fixed
/// activation and gradient volumes regardless of the input. Image scores
/// (the masked-input scores used by score-based methods) are
/// mean(input[..., 0] * relevance) over all pixels.
class StubBackbone final : public Backbone {
public:
    struct Tap {
        std::string name;
        FeatureStack activations;
        FeatureStack gradients;
    };

    StubBackbone(int resolution, std::vector<Tap> taps, RealGrid relevance);

    std::vector<std::string> tap_points() const override;
    TapShape tap_shape(const std::string& tap) const override;
    Normalization normalization() const override { return {{0, 0, 0}, {1, 1, 1}}; }

    double masked_score(const Image& input) const;

protected:
    Embedding do_encode_text(std::string_view prompt) override;
    Embedding do_encode_image(const Image& input) override;
    ActivationCapture do_forward_with_activations(const Image& input, const std::string& tap) override;
    std::vector<FeatureStack> do_capture(const Image& input, std::span<const std::string> taps) override;
    GradientCapture do_grad_of_score(const Image& input, const Embedding& text,
                                     std::span<const std::string> taps) override;
    std::vector<double> do_score_batch(std::span<const Image> inputs, const Embedding& text) override;

private:
    const Tap& find(const std::string& name) const;

    std::vector<Tap> taps_;
    RealGrid relevance_;
};

/// Linear stub: channel c of the single tap "linear" is input colour plane
/// (c mod 3); the score is the weighted activation sum sum_c w_c * sum A_c, so
/// the score gradient is w_c everywhere.
class LinearStubBackbone final : public Backbone {
public:
    LinearStubBackbone(int resolution, std::vector<double> channel_weights);

    std::vector<std::string> tap_points() const override { return {"linear"}; }
    TapShape tap_shape(const std::string& tap) const override;
    Normalization normalization() const override { return {{0, 0, 0}, {1, 1, 1}}; }

    double score_from_activations(const FeatureStack& a) const;

protected:
    Embedding do_encode_text(std::string_view prompt) override;
    Embedding do_encode_image(const Image& input) override;
    ActivationCapture do_forward_with_activations(const Image& input, const std::string& tap) override;
    std::vector<FeatureStack> do_capture(const Image& input, std::span<const std::string> taps) override;
    GradientCapture do_grad_of_score(const Image& input, const Embedding& text,
                                     std::span<const std::string> taps) override;

private:
    FeatureStack activations(const Image& input) const;

    std::vector<double> weights_;
};

}  // namespace iconsal
