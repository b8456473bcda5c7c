#include "iconsal/backbone/vit.hpp"

#include <cmath>
#include <random>
#include <string>

#include "iconsal/core/hash.hpp"

namespace iconsal {

namespace {

constexpr double kLnEps = 1e-5;

struct NormOut {
    Eigen::MatrixXd y;
    Eigen::MatrixXd xhat;
    Eigen::VectorXd rstd;
};

NormOut layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                   bool enabled) {
    NormOut out;
    if (!enabled) {
        out.y = x;
        out.xhat = x;
        out.rstd = Eigen::VectorXd::Ones(x.rows());
        return out;
    }
    const Eigen::Index d = x.cols();
    out.xhat.resize(x.rows(), d);
    out.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const Eigen::RowVectorXd centered = x.row(r).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(d);
        out.rstd(r) = 1.0 / std::sqrt(var + kLnEps);
        out.xhat.row(r) = centered * out.rstd(r);
    }
    out.y = (out.xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
    return out;
}

Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat, const Eigen::VectorXd& rstd,
                                    const Eigen::RowVectorXd& gamma, bool enabled) {
    if (!enabled) return dy;
    const double d = static_cast<double>(dy.cols());
    Eigen::MatrixXd dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma);
        const double m1 = dxhat.sum() / d;
        const double m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / d;
        dx.row(r) = rstd(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
    }
    return dx;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& s) {
    Eigen::MatrixXd out(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (s.row(r).array() - mx).exp().matrix();
        out.row(r) = e / e.sum();
    }
    return out;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = scale * symmetric_unit(rng);
    return m;
}

Eigen::RowVectorXd random_row(std::mt19937_64& rng, int n, double scale) {
    Eigen::RowVectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = scale * symmetric_unit(rng);
    return v;
}

}  // namespace

VitWeights synthesize_vit_weights(const VitConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    const int d = cfg.width;
    const int patch_dim = 3 * cfg.patch * cfg.patch;
    VitWeights w;
    w.patch_embed = random_matrix(rng, patch_dim, d, 1.0 / std::sqrt(patch_dim));
    w.cls = random_row(rng, d, 0.5);
    w.positional = random_matrix(rng, cfg.tokens(), d, 0.5);
    w.ln_pre_gamma = Eigen::RowVectorXd::Ones(d);
    w.ln_pre_beta = Eigen::RowVectorXd::Zero(d);
    const double s = 1.0 / std::sqrt(d);
    for (int l = 0; l < cfg.layers; ++l) {
        VitBlockWeights b;
        b.ln1_gamma = Eigen::RowVectorXd::Ones(d);
        b.ln1_beta = Eigen::RowVectorXd::Zero(d);
        b.wq = random_matrix(rng, d, d, 2.0 * s);
        b.wk = random_matrix(rng, d, d, 2.0 * s);
        b.wv = random_matrix(rng, d, d, s);
        b.bq = random_row(rng, d, 0.1);
        b.bk = random_row(rng, d, 0.1);
        b.bv = random_row(rng, d, 0.1);
        b.wo = random_matrix(rng, d, d, s);
        b.bo = random_row(rng, d, 0.1);
        b.ln2_gamma = Eigen::RowVectorXd::Ones(d);
        b.ln2_beta = Eigen::RowVectorXd::Zero(d);
        b.w1 = random_matrix(rng, d, cfg.mlp_width, s);
        b.b1 = random_row(rng, cfg.mlp_width, 0.1);
        b.w2 = random_matrix(rng, cfg.mlp_width, d, 1.0 / std::sqrt(cfg.mlp_width));
        b.b2 = random_row(rng, d, 0.1);
        w.blocks.push_back(std::move(b));
    }
    w.ln_post_gamma = Eigen::RowVectorXd::Ones(d);
    w.ln_post_beta = Eigen::RowVectorXd::Zero(d);
    w.proj = random_matrix(rng, d, cfg.embed_dim, s);
    return w;
}

VitBackbone::VitBackbone(const VitConfig& cfg, VitWeights weights)
    : Backbone(BackboneSpec{BackboneFamily::transformer, cfg.identifier, cfg.input_resolution,
                            default_tap_point(BackboneFamily::transformer, cfg.layers)}),
      cfg_(cfg),
      weights_(std::move(weights)),
      text_(cfg.embed_dim, cfg.seed) {
    if (cfg.patch <= 0 || cfg.input_resolution % cfg.patch != 0)
        throw BackboneError("vit: input resolution must be a multiple of the patch size");
    if (cfg.heads <= 0 || cfg.width % cfg.heads != 0) throw BackboneError("vit: width must divide into heads");
    if (static_cast<int>(weights_.blocks.size()) != cfg.layers) throw BackboneError("vit: block count mismatch");
    if (weights_.patch_embed.rows() != 3 * cfg.patch * cfg.patch || weights_.patch_embed.cols() != cfg.width)
        throw BackboneError("vit: patch embedding shape mismatch");
    if (weights_.positional.rows() != cfg.tokens()) throw BackboneError("vit: positional embedding shape mismatch");
    if (weights_.proj.cols() != cfg.embed_dim) throw BackboneError("vit: projection shape mismatch");
}

std::vector<std::string> VitBackbone::tap_points() const {
    std::vector<std::string> taps;
    for (int l = 0; l < cfg_.layers; ++l) {
        taps.push_back("resblocks." + std::to_string(l) + ".ln_1");
        taps.push_back("resblocks." + std::to_string(l));
    }
    return taps;
}

VitBackbone::TapRef VitBackbone::parse_tap(const std::string& tap) const {
    const std::string prefix = "resblocks.";
    if (tap.rfind(prefix, 0) != 0) throw BackboneError("unknown tap point '" + tap + "'");
    std::string rest = tap.substr(prefix.size());
    bool ln1 = false;
    if (const auto dot = rest.find('.'); dot != std::string::npos) {
        if (rest.substr(dot) != ".ln_1") throw BackboneError("unknown tap point '" + tap + "'");
        ln1 = true;
        rest = rest.substr(0, dot);
    }
    int block = -1;
    try {
        block = std::stoi(rest);
    } catch (const std::exception&) {
        throw BackboneError("unknown tap point '" + tap + "'");
    }
    if (block < 0 || block >= cfg_.layers) throw BackboneError("unknown tap point '" + tap + "'");
    return {block, ln1};
}

TapShape VitBackbone::tap_shape(const std::string& tap) const {
    parse_tap(tap);
    return {cfg_.width, cfg_.grid(), cfg_.grid()};
}

Eigen::MatrixXd VitBackbone::embed_tokens(const Image& input) const {
    const int g = cfg_.grid();
    const int p = cfg_.patch;
    Eigen::MatrixXd patches(g * g, 3 * p * p);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            const int row = gy * g + gx;
            int col = 0;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int c = 0; c < 3; ++c) patches(row, col++) = input.at(gy * p + py, gx * p + px, c);
        }
    Eigen::MatrixXd tokens(cfg_.tokens(), cfg_.width);
    tokens.row(0) = weights_.cls;
    tokens.bottomRows(g * g) = patches * weights_.patch_embed;
    tokens += weights_.positional;
    return tokens;
}

VitBackbone::BlockCache VitBackbone::block_forward(const VitBlockWeights& w, const Eigen::MatrixXd& x) const {
    BlockCache c;
    const int hd = cfg_.width / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    c.x_in = x;
    auto n1 = layer_norm(x, w.ln1_gamma, w.ln1_beta, cfg_.layer_norm);
    c.h1 = std::move(n1.y);
    c.xhat1 = std::move(n1.xhat);
    c.rstd1 = std::move(n1.rstd);
    c.q = (c.h1 * w.wq).rowwise() + w.bq;
    c.k = (c.h1 * w.wk).rowwise() + w.bk;
    c.v = (c.h1 * w.wv).rowwise() + w.bv;
    c.ctx.resize(x.rows(), x.cols());
    for (int h = 0; h < cfg_.heads; ++h) {
        const auto qh = c.q.middleCols(h * hd, hd);
        const auto kh = c.k.middleCols(h * hd, hd);
        const auto vh = c.v.middleCols(h * hd, hd);
        c.attn.push_back(softmax_rows(scale * qh * kh.transpose()));
        c.ctx.middleCols(h * hd, hd) = c.attn.back() * vh;
    }
    c.x_mid = x + ((c.ctx * w.wo).rowwise() + w.bo);
    auto n2 = layer_norm(c.x_mid, w.ln2_gamma, w.ln2_beta, cfg_.layer_norm);
    c.h2 = std::move(n2.y);
    c.xhat2 = std::move(n2.xhat);
    c.rstd2 = std::move(n2.rstd);
    c.u = (c.h2 * w.w1).rowwise() + w.b1;
    c.g = c.u.unaryExpr([](double z) { return z * sigmoid(1.702 * z); });
    c.x_out = c.x_mid + ((c.g * w.w2).rowwise() + w.b2);
    return c;
}

VitBackbone::BlockGrad VitBackbone::block_backward(const VitBlockWeights& w, const BlockCache& c,
                                                   const Eigen::MatrixXd& d_out) const {
    const int hd = cfg_.width / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    BlockGrad bg;

    const Eigen::MatrixXd d_g = d_out * w.w2.transpose();
    const Eigen::MatrixXd gelu_prime = c.u.unaryExpr([](double z) {
        const double s = sigmoid(1.702 * z);
        return s + 1.702 * z * s * (1.0 - s);
    });
    const Eigen::MatrixXd d_u = d_g.cwiseProduct(gelu_prime);
    const Eigen::MatrixXd d_h2 = d_u * w.w1.transpose();
    const Eigen::MatrixXd d_mid = d_out + layer_norm_backward(d_h2, c.xhat2, c.rstd2, w.ln2_gamma, cfg_.layer_norm);

    const Eigen::MatrixXd d_ctx = d_mid * w.wo.transpose();
    Eigen::MatrixXd d_q(c.q.rows(), c.q.cols());
    Eigen::MatrixXd d_k(c.k.rows(), c.k.cols());
    Eigen::MatrixXd d_v(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg_.heads; ++h) {
        const Eigen::MatrixXd& a = c.attn[static_cast<std::size_t>(h)];
        const auto vh = c.v.middleCols(h * hd, hd);
        const auto qh = c.q.middleCols(h * hd, hd);
        const auto kh = c.k.middleCols(h * hd, hd);
        const auto dctx_h = d_ctx.middleCols(h * hd, hd);
        Eigen::MatrixXd d_a = dctx_h * vh.transpose();
        d_v.middleCols(h * hd, hd) = a.transpose() * dctx_h;
        const Eigen::VectorXd row_dot = d_a.cwiseProduct(a).rowwise().sum();
        const Eigen::MatrixXd d_s = a.cwiseProduct(d_a.colwise() - row_dot);
        d_q.middleCols(h * hd, hd) = scale * d_s * kh;
        d_k.middleCols(h * hd, hd) = scale * d_s.transpose() * qh;
        bg.d_attn.push_back(std::move(d_a));
    }
    bg.d_h1 = d_q * w.wq.transpose() + d_k * w.wk.transpose() + d_v * w.wv.transpose();
    bg.d_in = d_mid + layer_norm_backward(bg.d_h1, c.xhat1, c.rstd1, w.ln1_gamma, cfg_.layer_norm);
    return bg;
}

Embedding VitBackbone::project(const Eigen::RowVectorXd& token, Eigen::RowVectorXd* xhat, double* rstd) const {
    auto n = layer_norm(token, weights_.ln_post_gamma, weights_.ln_post_beta, cfg_.layer_norm);
    if (xhat) *xhat = n.xhat.row(0);
    if (rstd) *rstd = n.rstd(0);
    const Eigen::RowVectorXd e = n.y.row(0) * weights_.proj;
    return Embedding{std::vector<double>(e.data(), e.data() + e.size()), Modality::image};
}

VitBackbone::Trace VitBackbone::run(const Eigen::MatrixXd& tokens, int first_block) const {
    Trace t;
    if (first_block == 0)
        t.x0 = layer_norm(tokens, weights_.ln_pre_gamma, weights_.ln_pre_beta, cfg_.layer_norm).y;
    else
        t.x0 = tokens;
    const Eigen::MatrixXd* x = &t.x0;
    t.blocks.reserve(static_cast<std::size_t>(cfg_.layers - first_block));
    for (int l = first_block; l < cfg_.layers; ++l) {
        t.blocks.push_back(block_forward(weights_.blocks[static_cast<std::size_t>(l)], *x));
        x = &t.blocks.back().x_out;
    }
    t.embedding = project(x->row(0), &t.post_xhat, &t.post_rstd);
    return t;
}

Eigen::RowVectorXd VitBackbone::post_backward(const Trace& t, const std::vector<double>& d_emb) const {
    const Eigen::Map<const Eigen::RowVectorXd> de(d_emb.data(), static_cast<Eigen::Index>(d_emb.size()));
    const Eigen::RowVectorXd d_y = de * weights_.proj.transpose();
    Eigen::VectorXd rstd(1);
    rstd(0) = t.post_rstd;
    return layer_norm_backward(d_y, t.post_xhat, rstd, weights_.ln_post_gamma, cfg_.layer_norm);
}

FeatureStack VitBackbone::patch_stack(const Eigen::MatrixXd& tokens, const std::string& tap) const {
    const int g = cfg_.grid();
    FeatureStack fs(cfg_.width, g, g);
    for (int c = 0; c < cfg_.width; ++c)
        for (int i = 0; i < g * g; ++i) fs.values[static_cast<std::size_t>(c) * g * g + i] = tokens(1 + i, c);
    fs.tap_point = tap;
    fs.backbone = cfg_.identifier;
    return fs;
}

Embedding VitBackbone::do_encode_text(std::string_view prompt) {
    return Embedding{text_.encode(prompt), Modality::text};
}

Embedding VitBackbone::do_encode_image(const Image& input) { return run(embed_tokens(input), 0).embedding; }

ActivationCapture VitBackbone::do_forward_with_activations(const Image& input, const std::string& tap) {
    const Trace t = run(embed_tokens(input), 0);
    const TapRef ref = parse_tap(tap);
    const auto& c = t.blocks[static_cast<std::size_t>(ref.block)];
    return {t.embedding, patch_stack(ref.ln1 ? c.h1 : c.x_out, tap)};
}

std::vector<FeatureStack> VitBackbone::do_capture(const Image& input, std::span<const std::string> taps) {
    const Trace t = run(embed_tokens(input), 0);
    std::vector<FeatureStack> out;
    for (const auto& tap : taps) {
        const TapRef ref = parse_tap(tap);
        const auto& c = t.blocks[static_cast<std::size_t>(ref.block)];
        out.push_back(patch_stack(ref.ln1 ? c.h1 : c.x_out, tap));
    }
    return out;
}

GradientCapture VitBackbone::do_grad_of_score(const Image& input, const Embedding& text,
                                              std::span<const std::string> taps) {
    const Trace t = run(embed_tokens(input), 0);
    GradientCapture cap;
    cap.embedding = t.embedding;
    cap.score = score(t.embedding, text);

    std::vector<TapRef> refs;
    int lowest = cfg_.layers;
    for (const auto& tap : taps) {
        refs.push_back(parse_tap(tap));
        lowest = std::min(lowest, refs.back().block);
    }
    cap.taps.resize(taps.size());

    Eigen::MatrixXd d_x = Eigen::MatrixXd::Zero(cfg_.tokens(), cfg_.width);
    d_x.row(0) = post_backward(t, score_gradient(t.embedding, text));
    for (int l = cfg_.layers - 1; l >= lowest; --l) {
        const auto& c = t.blocks[static_cast<std::size_t>(l)];
        const BlockGrad bg = block_backward(weights_.blocks[static_cast<std::size_t>(l)], c, d_x);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].block != l) continue;
            if (refs[i].ln1)
                cap.taps[i] = {patch_stack(c.h1, taps[i]), patch_stack(bg.d_h1, taps[i])};
            else
                cap.taps[i] = {patch_stack(c.x_out, taps[i]), patch_stack(d_x, taps[i])};
        }
        d_x = bg.d_in;
    }
    return cap;
}

std::vector<AttentionGradient> VitBackbone::intermediate_attention_gradients(const Image& input,
                                                                             const Embedding& text,
                                                                             int first_layer) {
    check_input(input);
    if (first_layer < 0 || first_layer >= cfg_.layers) throw BackboneError("legrad: first layer out of range");
    const Trace t = run(embed_tokens(input), 0);
    const int n = cfg_.tokens();
    std::vector<AttentionGradient> out;
    for (int l = first_layer; l < cfg_.layers; ++l) {
        const auto& c = t.blocks[static_cast<std::size_t>(l)];
        Eigen::RowVectorXd xhat;
        double rstd = 1.0;
        const Embedding e = project(c.x_out.colwise().mean(), &xhat, &rstd);
        Trace post;
        post.post_xhat = xhat;
        post.post_rstd = rstd;
        const Eigen::RowVectorXd d_mean = post_backward(post, score_gradient(e, text));
        const Eigen::MatrixXd d_out = (d_mean / static_cast<double>(n)).replicate(n, 1);
        const BlockGrad bg = block_backward(weights_.blocks[static_cast<std::size_t>(l)], c, d_out);

        AttentionGradient ag;
        ag.layer = l;
        ag.heads = cfg_.heads;
        ag.tokens = n;
        ag.values.resize(static_cast<std::size_t>(cfg_.heads) * n * n);
        for (int h = 0; h < cfg_.heads; ++h)
            for (int qi = 0; qi < n; ++qi)
                for (int ki = 0; ki < n; ++ki)
                    ag.values[(static_cast<std::size_t>(h) * n + qi) * n + ki] =
                        bg.d_attn[static_cast<std::size_t>(h)](qi, ki);
        out.push_back(std::move(ag));
    }
    ++counter().forward_passes;
    ++counter().backward_passes;
    return out;
}

SurgeryOutput VitBackbone::surgery_forward(const Image& input, int depth) {
    check_input(input);
    if (depth < 1 || depth > cfg_.layers) throw BackboneError("clip surgery: depth out of range");
    const int hd = cfg_.width / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int start = cfg_.layers - depth;

    Eigen::MatrixXd x = layer_norm(embed_tokens(input), weights_.ln_pre_gamma, weights_.ln_pre_beta,
                                   cfg_.layer_norm).y;
    Eigen::MatrixXd x_s;
    for (int l = 0; l < cfg_.layers; ++l) {
        const auto& w = weights_.blocks[static_cast<std::size_t>(l)];
        if (l >= start) {
            if (l == start) x_s = x;
            const Eigen::MatrixXd h1 = layer_norm(x, w.ln1_gamma, w.ln1_beta, cfg_.layer_norm).y;
            const Eigen::MatrixXd v = (h1 * w.wv).rowwise() + w.bv;
            Eigen::MatrixXd ctx(v.rows(), v.cols());
            for (int h = 0; h < cfg_.heads; ++h) {
                const auto vh = v.middleCols(h * hd, hd);
                ctx.middleCols(h * hd, hd) = softmax_rows(scale * vh * vh.transpose()) * vh;
            }
            x_s += (ctx * w.wo).rowwise() + w.bo;
        }
        x = block_forward(w, x).x_out;
    }

    SurgeryOutput out;
    out.image = project(x.row(0), nullptr, nullptr);
    out.grid = cfg_.grid();
    for (int i = 1; i < x_s.rows(); ++i) out.patch_embeddings.push_back(project(x_s.row(i), nullptr, nullptr));
    ++counter().forward_passes;
    return out;
}

double VitBackbone::score_from_tokens(const Eigen::MatrixXd& tokens, int first_block, const Embedding& text) const {
    return score(run(tokens, first_block).embedding, text);
}

Eigen::MatrixXd VitBackbone::grad_tokens(const Eigen::MatrixXd& tokens, int first_block, const Embedding& text) const {
    const Trace t = run(tokens, first_block);
    Eigen::MatrixXd d_x = Eigen::MatrixXd::Zero(tokens.rows(), tokens.cols());
    d_x.row(0) = post_backward(t, score_gradient(t.embedding, text));
    for (int l = cfg_.layers - 1; l >= first_block; --l)
        d_x = block_backward(weights_.blocks[static_cast<std::size_t>(l)],
                             t.blocks[static_cast<std::size_t>(l - first_block)], d_x)
                  .d_in;
    if (first_block == 0) {
        const auto n = layer_norm(tokens, weights_.ln_pre_gamma, weights_.ln_pre_beta, cfg_.layer_norm);
        d_x = layer_norm_backward(d_x, n.xhat, n.rstd, weights_.ln_pre_gamma, cfg_.layer_norm);
    }
    return d_x;
}

}  // namespace iconsal
