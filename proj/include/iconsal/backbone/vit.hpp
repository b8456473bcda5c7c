#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iconsal/backbone/backbone.hpp"
#include "iconsal/backbone/text_encoder.hpp"

namespace iconsal {

struct VitConfig {
    std::string identifier = "ViT-B/32";
    int input_resolution = 224;
    int patch = 32;
    int width = 96;
    int heads = 4;
    int layers = 4;
    int mlp_width = 192;
    int embed_dim = 64;
    bool layer_norm = true;
    std::uint64_t seed = 0x5eed0002ULL;

    int grid() const { return input_resolution / patch; }
    int tokens() const { return grid() * grid() + 1; }
};

struct VitBlockWeights {
    Eigen::RowVectorXd ln1_gamma, ln1_beta;
    Eigen::MatrixXd wq, wk, wv;  // width x width, applied as X * W
    Eigen::RowVectorXd bq, bk, bv;
    Eigen::MatrixXd wo;
    Eigen::RowVectorXd bo;
    Eigen::RowVectorXd ln2_gamma, ln2_beta;
    Eigen::MatrixXd w1;  // width x mlp_width
    Eigen::RowVectorXd b1;
    Eigen::MatrixXd w2;  // mlp_width x width
    Eigen::RowVectorXd b2;
};

struct VitWeights {
    Eigen::MatrixXd patch_embed;  // (3 * patch * patch) x width
    Eigen::RowVectorXd cls;
    Eigen::MatrixXd positional;   // tokens x width
    Eigen::RowVectorXd ln_pre_gamma, ln_pre_beta;
    std::vector<VitBlockWeights> blocks;
    Eigen::RowVectorXd ln_post_gamma, ln_post_beta;
    Eigen::MatrixXd proj;  // width x embed_dim
};

/// Random weights with the configured shapes, deterministic in cfg.seed.
VitWeights synthesize_vit_weights(const VitConfig& cfg);

/// Attention-probability gradient of one block: heads x tokens x tokens.
struct AttentionGradient {
    int layer = 0;
    int heads = 0;
    int tokens = 0;
    std::vector<double> values;

    double at(int h, int query, int key) const {
        return values[(static_cast<std::size_t>(h) * tokens + query) * tokens + key];
    }
};

struct SurgeryOutput {
    Embedding image;                        // original-path class embedding
    std::vector<Embedding> patch_embeddings;  // surgery-path patch tokens, row-major over the grid
    int grid = 0;
};

/// Pre-norm vision transformer (class token, QuickGELU MLP, optional layer
/// norms) with an exact manual backward pass.
class VitBackbone final : public Backbone {
public:
    VitBackbone(const VitConfig& cfg, VitWeights weights);
    explicit VitBackbone(const VitConfig& cfg) : VitBackbone(cfg, synthesize_vit_weights(cfg)) {}

    std::vector<std::string> tap_points() const override;
    TapShape tap_shape(const std::string& tap) const override;
    const VitConfig& config() const { return cfg_; }
    const VitWeights& weights() const { return weights_; }

    /// Gradients of the per-block intermediate scores with respect to each
    /// block's attention probabilities. The score of block l embeds the
    /// token-mean of that block's output through the final norm and
    /// projection. One forward and one backward pass.
    std::vector<AttentionGradient> intermediate_attention_gradients(const Image& input, const Embedding& text,
                                                                    int first_layer);

    /// Forward with the last `depth` blocks rewritten: value-value attention
    /// on a second residual path that skips the feed-forward. One forward pass.
    SurgeryOutput surgery_forward(const Image& input, int depth);

    /// Token matrix (tokens x width) fed to the first block, before ln_pre.
    Eigen::MatrixXd embed_tokens(const Image& input) const;
    /// Score of a token matrix entering block `first_block`; uncharged.
    double score_from_tokens(const Eigen::MatrixXd& tokens, int first_block, const Embedding& text) const;
    /// d score / d tokens entering block `first_block`; uncharged.
    Eigen::MatrixXd grad_tokens(const Eigen::MatrixXd& tokens, int first_block, const Embedding& text) const;

    struct BlockCache {
        Eigen::MatrixXd x_in, xhat1, h1, q, k, v;
        Eigen::VectorXd rstd1;
        std::vector<Eigen::MatrixXd> attn;  // per head, tokens x tokens
        Eigen::MatrixXd ctx, x_mid, xhat2, h2, u, g, x_out;
        Eigen::VectorXd rstd2;
    };
    struct BlockGrad {
        Eigen::MatrixXd d_in;
        Eigen::MatrixXd d_h1;
        std::vector<Eigen::MatrixXd> d_attn;
    };

protected:
    Embedding do_encode_text(std::string_view prompt) override;
    Embedding do_encode_image(const Image& input) override;
    ActivationCapture do_forward_with_activations(const Image& input, const std::string& tap) override;
    std::vector<FeatureStack> do_capture(const Image& input, std::span<const std::string> taps) override;
    GradientCapture do_grad_of_score(const Image& input, const Embedding& text,
                                     std::span<const std::string> taps) override;

private:
    struct Trace {
        Eigen::MatrixXd x0;  // after ln_pre
        std::vector<BlockCache> blocks;
        Eigen::RowVectorXd post_xhat;
        double post_rstd = 1.0;
        Embedding embedding;
    };
    Trace run(const Eigen::MatrixXd& tokens, int first_block) const;
    BlockCache block_forward(const VitBlockWeights& w, const Eigen::MatrixXd& x) const;
    BlockGrad block_backward(const VitBlockWeights& w, const BlockCache& c, const Eigen::MatrixXd& d_out) const;
    Eigen::RowVectorXd post_backward(const Trace& t, const std::vector<double>& d_emb) const;
    Embedding project(const Eigen::RowVectorXd& token, Eigen::RowVectorXd* xhat, double* rstd) const;
    FeatureStack patch_stack(const Eigen::MatrixXd& tokens, const std::string& tap) const;
    struct TapRef {
        int block;
        bool ln1;
    };
    TapRef parse_tap(const std::string& tap) const;

    VitConfig cfg_;
    VitWeights weights_;
    HashTextEncoder text_;
};

}  // namespace iconsal
