#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iconsal/core/grid.hpp"
#include "iconsal/core/image.hpp"

namespace iconsal {

class BackboneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class BackboneFamily { residual, transformer };

std::string to_string(BackboneFamily family);
BackboneFamily parse_backbone_family(const std::string& text);

struct BackboneSpec {
    BackboneFamily family = BackboneFamily::residual;
    std::string identifier;
    int input_resolution = 0;
    std::string tap_point;  // empty selects the family default
};

/// Default activation tap for a family. Residual: third rectification of the
/// last bottleneck in the final stage. Transformer: the input normalization of
/// the final self-attention block.
std::string default_tap_point(BackboneFamily family, int depth);

enum class Modality { image, text };

struct Embedding {
    std::vector<double> values;
    Modality modality = Modality::image;

    double norm() const;
    friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Cosine similarity. Throws BackboneError on a zero-norm operand.
double similarity(const Embedding& a, const Embedding& b);

/// C x H x W activation (or gradient) volume captured at a tap point.
struct FeatureStack {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::string tap_point;
    std::string backbone;

    FeatureStack() = default;
    FeatureStack(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::span<const double> plane_values(int c) const {
        return std::span<const double>(values).subspan(static_cast<std::size_t>(c) * height * width,
                                                       static_cast<std::size_t>(height) * width);
    }
    RealGrid plane(int c) const;
    bool same_shape(const FeatureStack& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool all_finite() const;
};

struct TapShape {
    int channels = 0;
    int height = 0;
    int width = 0;
};

/// Model executions charged to one attribution call. `forward_passes` counts
/// full image-encoder passes that end in an embedding; `partial_passes` counts
/// trunk evaluations that stop at a tap; `text_passes` counts text encodings.
struct PassCounter {
    std::int64_t forward_passes = 0;
    std::int64_t backward_passes = 0;
    std::int64_t partial_passes = 0;
    std::int64_t text_passes = 0;

    friend bool operator==(const PassCounter&, const PassCounter&) = default;
};

enum class ScoreMode { cosine, scaled_logit };

struct ActivationCapture {
    Embedding embedding;
    FeatureStack activations;
};

struct TapGradient {
    FeatureStack activations;
    FeatureStack gradients;
};

struct GradientCapture {
    double score = 0.0;
    Embedding embedding;
    std::vector<TapGradient> taps;  // same order as requested
};

/// Frozen dual-encoder. Image arguments are model inputs, i.e. already
/// preprocessed to input_resolution x input_resolution.
class Backbone {
public:
    explicit Backbone(BackboneSpec spec);
    virtual ~Backbone() = default;

    Backbone(const Backbone&) = delete;
    Backbone& operator=(const Backbone&) = delete;

    const BackboneSpec& spec() const { return spec_; }
    std::string tap_point() const;
    virtual std::vector<std::string> tap_points() const = 0;
    virtual TapShape tap_shape(const std::string& tap) const = 0;
    virtual Normalization normalization() const { return {}; }

    Embedding encode_text(std::string_view prompt);
    Embedding encode_image(const Image& input);
    ActivationCapture forward_with_activations(const Image& input, const std::string& tap);

    /// Trunk-only evaluation up to the given taps (no embedding).
    std::vector<FeatureStack> capture_activations(const Image& input, std::span<const std::string> taps);

    /// One forward and one backward pass: gradients of the image-text score
    /// with respect to the activations at each tap.
    GradientCapture grad_of_score(const Image& input, const Embedding& text, std::span<const std::string> taps);

    /// Image-text score for a batch of inputs; one forward pass per input.
    std::vector<double> score_batch(std::span<const Image> inputs, const Embedding& text);

    double score(const Embedding& image, const Embedding& text) const;

    ScoreMode score_mode() const { return score_mode_; }
    void set_score_mode(ScoreMode mode, double logit_scale = 100.0) {
        score_mode_ = mode;
        logit_scale_ = logit_scale;
    }
    double logit_scale() const { return logit_scale_; }

    PassCounter& counter() { return counter_; }
    const PassCounter& counter() const { return counter_; }
    void reset_counter() { counter_ = {}; }

protected:
    virtual Embedding do_encode_text(std::string_view prompt) = 0;
    virtual Embedding do_encode_image(const Image& input) = 0;
    virtual ActivationCapture do_forward_with_activations(const Image& input, const std::string& tap) = 0;
    virtual std::vector<FeatureStack> do_capture(const Image& input, std::span<const std::string> taps) = 0;
    virtual GradientCapture do_grad_of_score(const Image& input, const Embedding& text,
                                             std::span<const std::string> taps) = 0;
    virtual std::vector<double> do_score_batch(std::span<const Image> inputs, const Embedding& text);

    void check_input(const Image& input) const;
    void check_tap(const std::string& tap) const;
    /// d score / d embedding for the configured score mode.
    std::vector<double> score_gradient(const Embedding& image, const Embedding& text) const;

private:
    BackboneSpec spec_;
    ScoreMode score_mode_ = ScoreMode::cosine;
    double logit_scale_ = 100.0;
    PassCounter counter_;
};

}  // namespace iconsal
