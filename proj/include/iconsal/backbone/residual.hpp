#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "iconsal/backbone/backbone.hpp"
#include "iconsal/backbone/text_encoder.hpp"

namespace iconsal {

struct ResidualConfig {
    std::string identifier = "RN50x16";
    int input_resolution = 384;
    int grid = 12;            // spatial size of the final-stage feature map
    int mid_channels = 8;     // width of the second rectification
    int channels = 3072;      // width of the final-stage output (tap channels)
    int embed_dim = 768;
    std::uint64_t seed = 0x5eed0001ULL;
};

/// Tap-shape-faithful residual-family stand-in. The trunk pools the input into
/// a grid x grid cell map, applies two 1x1 projection + rectification stages
/// (taps "layer4.2.relu2" and "layer4.2.relu3"), then global-average-pools and
/// projects into the joint embedding space.
class ResidualBackbone final : public Backbone {
public:
    explicit ResidualBackbone(const ResidualConfig& cfg);

    std::vector<std::string> tap_points() const override;
    TapShape tap_shape(const std::string& tap) const override;
    const ResidualConfig& config() const { return cfg_; }

    /// Score computed from a (possibly edited) final-stage activation volume.
    /// Used for finite-difference checks; not charged to the pass counter.
    double score_from_final_activations(const FeatureStack& a2, const Embedding& text) const;

    struct Weights {
        Eigen::MatrixXd w1;  // mid x 3
        Eigen::VectorXd b1;
        Eigen::MatrixXd w2;  // channels x mid
        Eigen::VectorXd b2;
        Eigen::MatrixXd proj;  // embed x channels
    };
    const Weights& weights() const { return weights_; }

protected:
    Embedding do_encode_text(std::string_view prompt) override;
    Embedding do_encode_image(const Image& input) override;
    ActivationCapture do_forward_with_activations(const Image& input, const std::string& tap) override;
    std::vector<FeatureStack> do_capture(const Image& input, std::span<const std::string> taps) override;
    GradientCapture do_grad_of_score(const Image& input, const Embedding& text,
                                     std::span<const std::string> taps) override;
    std::vector<double> do_score_batch(std::span<const Image> inputs, const Embedding& text) override;

private:
    struct Trace {
        Eigen::MatrixXd cells;  // 3 x cells
        Eigen::MatrixXd pre1;   // mid x cells
        Eigen::MatrixXd a1;
        Eigen::MatrixXd pre2;   // channels x cells
        Eigen::MatrixXd a2;
    };
    Eigen::MatrixXd pool_cells(const Image& input) const;
    Trace run(const Image& input) const;
    Embedding head(const Eigen::MatrixXd& a2) const;
    FeatureStack to_stack(const Eigen::MatrixXd& m, const std::string& tap) const;

    ResidualConfig cfg_;
    Weights weights_;
    HashTextEncoder text_;
};

}  // namespace iconsal
