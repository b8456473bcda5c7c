#include "iconsal/backbone/stub.hpp"

#include <algorithm>
#include <numeric>

#include "iconsal/backbone/text_encoder.hpp"

namespace iconsal {

std::vector<double> token_count_embedding(std::string_view prompt, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
    if (dim > 0) v[0] = static_cast<double>(tokenize_prompt(prompt).size());
    return v;
}

StubBackbone::StubBackbone(int resolution, std::vector<Tap> taps, RealGrid relevance)
    : Backbone(BackboneSpec{BackboneFamily::residual, "stub", resolution, taps.empty() ? "" : taps.back().name}),
      taps_(std::move(taps)),
      relevance_(std::move(relevance)) {
    if (taps_.empty()) throw BackboneError("stub backbone needs at least one tap");
    for (auto& t : taps_) {
        if (!t.activations.same_shape(t.gradients)) throw BackboneError("stub tap: gradient shape mismatch");
        t.activations.tap_point = t.gradients.tap_point = t.name;
        t.activations.backbone = t.gradients.backbone = "stub";
    }
    if (relevance_.height() != resolution || relevance_.width() != resolution)
        throw BackboneError("stub backbone: relevance grid must match the input resolution");
}

std::vector<std::string> StubBackbone::tap_points() const {
    std::vector<std::string> names;
    for (const auto& t : taps_) names.push_back(t.name);
    return names;
}

const StubBackbone::Tap& StubBackbone::find(const std::string& name) const {
    for (const auto& t : taps_)
        if (t.name == name) return t;
    throw BackboneError("unknown tap point '" + name + "' for stub");
}

TapShape StubBackbone::tap_shape(const std::string& tap) const {
    const auto& t = find(tap);
    return {t.activations.channels, t.activations.height, t.activations.width};
}

double StubBackbone::masked_score(const Image& input) const {
    double sum = 0.0;
    for (int y = 0; y < input.height; ++y)
        for (int x = 0; x < input.width; ++x) sum += input.at(y, x, 0) * relevance_(y, x);
    return sum / (static_cast<double>(input.width) * input.height);
}

Embedding StubBackbone::do_encode_text(std::string_view prompt) {
    return Embedding{token_count_embedding(prompt, 2), Modality::text};
}

Embedding StubBackbone::do_encode_image(const Image& input) {
    return Embedding{{masked_score(input), 1.0}, Modality::image};
}

ActivationCapture StubBackbone::do_forward_with_activations(const Image& input, const std::string& tap) {
    return {do_encode_image(input), find(tap).activations};
}

std::vector<FeatureStack> StubBackbone::do_capture(const Image&, std::span<const std::string> taps) {
    std::vector<FeatureStack> out;
    for (const auto& t : taps) out.push_back(find(t).activations);
    return out;
}

GradientCapture StubBackbone::do_grad_of_score(const Image& input, const Embedding&,
                                               std::span<const std::string> taps) {
    GradientCapture cap;
    cap.embedding = do_encode_image(input);
    cap.score = masked_score(input);
    for (const auto& t : taps) {
        const auto& tap = find(t);
        cap.taps.push_back({tap.activations, tap.gradients});
    }
    return cap;
}

std::vector<double> StubBackbone::do_score_batch(std::span<const Image> inputs, const Embedding&) {
    std::vector<double> out;
    for (const auto& in : inputs) out.push_back(masked_score(in));
    return out;
}

LinearStubBackbone::LinearStubBackbone(int resolution, std::vector<double> channel_weights)
    : Backbone(BackboneSpec{BackboneFamily::residual, "linear-stub", resolution, "linear"}),
      weights_(std::move(channel_weights)) {
    if (weights_.empty()) throw BackboneError("linear stub needs at least one channel");
}

TapShape LinearStubBackbone::tap_shape(const std::string& tap) const {
    if (tap != "linear") throw BackboneError("unknown tap point '" + tap + "' for linear stub");
    return {static_cast<int>(weights_.size()), spec().input_resolution, spec().input_resolution};
}

FeatureStack LinearStubBackbone::activations(const Image& input) const {
    FeatureStack fs(static_cast<int>(weights_.size()), input.height, input.width);
    for (int c = 0; c < fs.channels; ++c)
        for (int y = 0; y < input.height; ++y)
            for (int x = 0; x < input.width; ++x) fs.at(c, y, x) = input.at(y, x, c % 3);
    fs.tap_point = "linear";
    fs.backbone = "linear-stub";
    return fs;
}

double LinearStubBackbone::score_from_activations(const FeatureStack& a) const {
    double s = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const auto plane = a.plane_values(c);
        s += weights_[static_cast<std::size_t>(c)] * std::accumulate(plane.begin(), plane.end(), 0.0);
    }
    return s;
}

Embedding LinearStubBackbone::do_encode_text(std::string_view prompt) {
    return Embedding{token_count_embedding(prompt, 2), Modality::text};
}

Embedding LinearStubBackbone::do_encode_image(const Image& input) {
    return Embedding{{score_from_activations(activations(input)), 1.0}, Modality::image};
}

ActivationCapture LinearStubBackbone::do_forward_with_activations(const Image& input, const std::string&) {
    auto a = activations(input);
    Embedding e{{score_from_activations(a), 1.0}, Modality::image};
    return {std::move(e), std::move(a)};
}

std::vector<FeatureStack> LinearStubBackbone::do_capture(const Image& input, std::span<const std::string> taps) {
    return std::vector<FeatureStack>(taps.size(), activations(input));
}

GradientCapture LinearStubBackbone::do_grad_of_score(const Image& input, const Embedding&,
                                                     std::span<const std::string> taps) {
    GradientCapture cap;
    auto a = activations(input);
    cap.score = score_from_activations(a);
    cap.embedding = Embedding{{cap.score, 1.0}, Modality::image};
    FeatureStack g(a.channels, a.height, a.width);
    for (int c = 0; c < a.channels; ++c)
        std::fill_n(g.values.begin() + static_cast<std::ptrdiff_t>(c) * a.height * a.width,
                    a.height * a.width, weights_[static_cast<std::size_t>(c)]);
    g.tap_point = a.tap_point;
    g.backbone = a.backbone;
    for (std::size_t i = 0; i < taps.size(); ++i) cap.taps.push_back({a, g});
    return cap;
}

}  // namespace iconsal
