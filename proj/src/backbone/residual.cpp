#include "iconsal/backbone/residual.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "iconsal/core/hash.hpp"

namespace iconsal {

namespace {

constexpr const char* kMidTap = "layer4.2.relu2";
constexpr const char* kFinalTap = "layer4.2.relu3";
constexpr int kBatch = 16;

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = scale * symmetric_unit(rng);
    return m;
}

}  // namespace

ResidualBackbone::ResidualBackbone(const ResidualConfig& cfg)
    : Backbone(BackboneSpec{BackboneFamily::residual, cfg.identifier, cfg.input_resolution, kFinalTap}),
      cfg_(cfg),
      text_(cfg.embed_dim, cfg.seed) {
    if (cfg.grid <= 0 || cfg.input_resolution % cfg.grid != 0)
        throw BackboneError("residual backbone: input resolution must be a multiple of the grid");
    if (cfg.mid_channels <= 0 || cfg.channels <= 0 || cfg.embed_dim <= 0)
        throw BackboneError("residual backbone: channel counts must be positive");
    std::mt19937_64 rng(cfg.seed);
    weights_.w1 = random_matrix(rng, cfg.mid_channels, 3, 1.0);
    weights_.b1 = random_matrix(rng, cfg.mid_channels, 1, 0.5);
    weights_.w2 = random_matrix(rng, cfg.channels, cfg.mid_channels, std::sqrt(3.0 / cfg.mid_channels));
    weights_.b2 = random_matrix(rng, cfg.channels, 1, 0.2);
    weights_.proj = random_matrix(rng, cfg.embed_dim, cfg.channels, 1.0 / std::sqrt(cfg.channels));
}

std::vector<std::string> ResidualBackbone::tap_points() const { return {kMidTap, kFinalTap}; }

TapShape ResidualBackbone::tap_shape(const std::string& tap) const {
    if (tap == kMidTap) return {cfg_.mid_channels, cfg_.grid, cfg_.grid};
    if (tap == kFinalTap) return {cfg_.channels, cfg_.grid, cfg_.grid};
    throw BackboneError("unknown tap point '" + tap + "' for " + cfg_.identifier);
}

Eigen::MatrixXd ResidualBackbone::pool_cells(const Image& input) const {
    const int g = cfg_.grid;
    const int cell = cfg_.input_resolution / g;
    Eigen::MatrixXd cells = Eigen::MatrixXd::Zero(3, g * g);
    for (int y = 0; y < input.height; ++y) {
        const int cy = y / cell;
        const float* row = &input.pixels[static_cast<std::size_t>(y) * input.width * 3];
        for (int x = 0; x < input.width; ++x) {
            const int idx = cy * g + x / cell;
            cells(0, idx) += row[3 * x];
            cells(1, idx) += row[3 * x + 1];
            cells(2, idx) += row[3 * x + 2];
        }
    }
    cells /= static_cast<double>(cell * cell);
    return cells;
}

ResidualBackbone::Trace ResidualBackbone::run(const Image& input) const {
    Trace t;
    t.cells = pool_cells(input);
    t.pre1 = (weights_.w1 * t.cells).colwise() + weights_.b1;
    t.a1 = t.pre1.cwiseMax(0.0);
    t.pre2 = (weights_.w2 * t.a1).colwise() + weights_.b2;
    t.a2 = t.pre2.cwiseMax(0.0);
    return t;
}

Embedding ResidualBackbone::head(const Eigen::MatrixXd& a2) const {
    const Eigen::VectorXd pooled = a2.rowwise().mean();
    const Eigen::VectorXd e = weights_.proj * pooled;
    return Embedding{std::vector<double>(e.data(), e.data() + e.size()), Modality::image};
}

FeatureStack ResidualBackbone::to_stack(const Eigen::MatrixXd& m, const std::string& tap) const {
    FeatureStack fs(static_cast<int>(m.rows()), cfg_.grid, cfg_.grid);
    for (int c = 0; c < m.rows(); ++c)
        for (int i = 0; i < m.cols(); ++i) fs.values[static_cast<std::size_t>(c) * m.cols() + i] = m(c, i);
    fs.tap_point = tap;
    fs.backbone = cfg_.identifier;
    return fs;
}

Embedding ResidualBackbone::do_encode_text(std::string_view prompt) {
    return Embedding{text_.encode(prompt), Modality::text};
}

Embedding ResidualBackbone::do_encode_image(const Image& input) { return head(run(input).a2); }

ActivationCapture ResidualBackbone::do_forward_with_activations(const Image& input, const std::string& tap) {
    const Trace t = run(input);
    return {head(t.a2), to_stack(tap == kMidTap ? t.a1 : t.a2, tap)};
}

std::vector<FeatureStack> ResidualBackbone::do_capture(const Image& input, std::span<const std::string> taps) {
    const Trace t = run(input);
    std::vector<FeatureStack> out;
    for (const auto& tap : taps) out.push_back(to_stack(tap == kMidTap ? t.a1 : t.a2, tap));
    return out;
}

GradientCapture ResidualBackbone::do_grad_of_score(const Image& input, const Embedding& text,
                                                   std::span<const std::string> taps) {
    const Trace t = run(input);
    GradientCapture cap;
    cap.embedding = head(t.a2);
    cap.score = score(cap.embedding, text);

    const auto g_emb_v = score_gradient(cap.embedding, text);
    const Eigen::Map<const Eigen::VectorXd> g_emb(g_emb_v.data(), static_cast<Eigen::Index>(g_emb_v.size()));
    const Eigen::VectorXd g_pooled = weights_.proj.transpose() * g_emb;
    const double cells = static_cast<double>(t.a2.cols());
    Eigen::MatrixXd g_a2 = (g_pooled / cells).replicate(1, t.a2.cols());
    const Eigen::MatrixXd g_pre2 = g_a2.cwiseProduct((t.pre2.array() > 0.0).cast<double>().matrix());
    const Eigen::MatrixXd g_a1 = weights_.w2.transpose() * g_pre2;

    for (const auto& tap : taps) {
        if (tap == kMidTap)
            cap.taps.push_back({to_stack(t.a1, tap), to_stack(g_a1, tap)});
        else
            cap.taps.push_back({to_stack(t.a2, tap), to_stack(g_a2, tap)});
    }
    return cap;
}

std::vector<double> ResidualBackbone::do_score_batch(std::span<const Image> inputs, const Embedding& text) {
    std::vector<double> out;
    out.reserve(inputs.size());
    const int per = cfg_.grid * cfg_.grid;
    for (std::size_t start = 0; start < inputs.size(); start += kBatch) {
        const int n = static_cast<int>(std::min<std::size_t>(kBatch, inputs.size() - start));
        Eigen::MatrixXd cells(3, per * n);
        for (int b = 0; b < n; ++b) cells.middleCols(b * per, per) = pool_cells(inputs[start + b]);
        const Eigen::MatrixXd a1 = ((weights_.w1 * cells).colwise() + weights_.b1).cwiseMax(0.0);
        const Eigen::MatrixXd a2 = ((weights_.w2 * a1).colwise() + weights_.b2).cwiseMax(0.0);
        for (int b = 0; b < n; ++b) out.push_back(score(head(a2.middleCols(b * per, per)), text));
    }
    return out;
}

double ResidualBackbone::score_from_final_activations(const FeatureStack& a2, const Embedding& text) const {
    const TapShape s = tap_shape(kFinalTap);
    if (a2.channels != s.channels || a2.height != s.height || a2.width != s.width)
        throw BackboneError("score_from_final_activations: shape mismatch");
    Eigen::MatrixXd m(a2.channels, a2.height * a2.width);
    for (int c = 0; c < a2.channels; ++c)
        for (int i = 0; i < a2.height * a2.width; ++i) m(c, i) = a2.values[static_cast<std::size_t>(c) * m.cols() + i];
    return score(head(m), text);
}

}  // namespace iconsal
