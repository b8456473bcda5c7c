#include "iconsal/backbone/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace iconsal {

std::string to_string(BackboneFamily family) {
    return family == BackboneFamily::residual ? "convolutional-residual" : "vision-transformer";
}

BackboneFamily parse_backbone_family(const std::string& text) {
    if (text == "convolutional-residual" || text == "residual" || text == "resnet") return BackboneFamily::residual;
    if (text == "vision-transformer" || text == "transformer" || text == "vit") return BackboneFamily::transformer;
    throw BackboneError("unknown backbone family: " + text);
}

std::string default_tap_point(BackboneFamily family, int depth) {
    if (family == BackboneFamily::residual) return "layer4.2.relu3";
    if (depth <= 0) throw BackboneError("transformer depth must be positive");
    return "resblocks." + std::to_string(depth - 1) + ".ln_1";
}

double Embedding::norm() const {
    return std::sqrt(std::inner_product(values.begin(), values.end(), values.begin(), 0.0));
}

double similarity(const Embedding& a, const Embedding& b) {
    if (a.values.size() != b.values.size()) throw BackboneError("similarity: dimension mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw BackboneError("similarity: zero-norm embedding");
    const double dot = std::inner_product(a.values.begin(), a.values.end(), b.values.begin(), 0.0);
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

RealGrid FeatureStack::plane(int c) const {
    const auto v = plane_values(c);
    return RealGrid(height, width, std::vector<double>(v.begin(), v.end()));
}

bool FeatureStack::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Backbone::Backbone(BackboneSpec spec) : spec_(std::move(spec)) {
    if (spec_.input_resolution <= 0) throw BackboneError("backbone input resolution must be positive");
}

std::string Backbone::tap_point() const {
    if (!spec_.tap_point.empty()) return spec_.tap_point;
    const auto taps = tap_points();
    if (taps.empty()) throw BackboneError("backbone exposes no tap points");
    return taps.back();
}

void Backbone::check_input(const Image& input) const {
    if (input.width != spec_.input_resolution || input.height != spec_.input_resolution)
        throw BackboneError("input resolution mismatch after preprocessing: expected " +
                            std::to_string(spec_.input_resolution) + ", got " + std::to_string(input.width) +
                            "x" + std::to_string(input.height));
}

void Backbone::check_tap(const std::string& tap) const {
    const auto taps = tap_points();
    if (std::find(taps.begin(), taps.end(), tap) == taps.end())
        throw BackboneError("unknown tap point '" + tap + "' for " + spec_.identifier);
}

Embedding Backbone::encode_text(std::string_view prompt) {
    if (prompt.empty()) throw BackboneError("encode_text: empty prompt");
    auto e = do_encode_text(prompt);
    e.modality = Modality::text;
    ++counter_.text_passes;
    return e;
}

Embedding Backbone::encode_image(const Image& input) {
    check_input(input);
    auto e = do_encode_image(input);
    e.modality = Modality::image;
    ++counter_.forward_passes;
    return e;
}

ActivationCapture Backbone::forward_with_activations(const Image& input, const std::string& tap) {
    check_input(input);
    check_tap(tap);
    auto cap = do_forward_with_activations(input, tap);
    cap.embedding.modality = Modality::image;
    if (!cap.activations.all_finite()) throw BackboneError("non-finite activations at " + tap);
    ++counter_.forward_passes;
    return cap;
}

std::vector<FeatureStack> Backbone::capture_activations(const Image& input, std::span<const std::string> taps) {
    check_input(input);
    for (const auto& t : taps) check_tap(t);
    auto out = do_capture(input, taps);
    ++counter_.partial_passes;
    return out;
}

GradientCapture Backbone::grad_of_score(const Image& input, const Embedding& text,
                                        std::span<const std::string> taps) {
    check_input(input);
    for (const auto& t : taps) check_tap(t);
    auto cap = do_grad_of_score(input, text, taps);
    ++counter_.forward_passes;
    ++counter_.backward_passes;
    for (const auto& t : cap.taps) {
        if (!t.gradients.all_finite()) throw BackboneError("non-finite gradients at " + t.gradients.tap_point);
        if (!t.gradients.same_shape(t.activations)) throw BackboneError("gradient/activation shape mismatch");
    }
    return cap;
}

std::vector<double> Backbone::score_batch(std::span<const Image> inputs, const Embedding& text) {
    for (const auto& in : inputs) check_input(in);
    auto out = do_score_batch(inputs, text);
    counter_.forward_passes += static_cast<std::int64_t>(inputs.size());
    return out;
}

std::vector<double> Backbone::do_score_batch(std::span<const Image> inputs, const Embedding& text) {
    std::vector<double> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) out.push_back(score(do_encode_image(in), text));
    return out;
}

double Backbone::score(const Embedding& image, const Embedding& text) const {
    const double cos = similarity(image, text);
    return score_mode_ == ScoreMode::cosine ? cos : logit_scale_ * cos;
}

std::vector<double> Backbone::score_gradient(const Embedding& image, const Embedding& text) const {
    const double ne = image.norm();
    const double nt = text.norm();
    if (!(ne > 0.0) || !(nt > 0.0)) throw BackboneError("score gradient: zero-norm embedding");
    const double dot = std::inner_product(image.values.begin(), image.values.end(), text.values.begin(), 0.0);
    const double cos = dot / (ne * nt);
    const double scale = score_mode_ == ScoreMode::cosine ? 1.0 : logit_scale_;
    std::vector<double> g(image.values.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = scale * (text.values[i] / (ne * nt) - cos * image.values[i] / (ne * ne));
    return g;
}

}  // namespace iconsal
