#pragma once

// Hand-specified one-block, one-head transformer and independent
// step-by-step traces of the LeGrad and CLIP Surgery computations. The traces
// use plain loops over std::vector and never call into the library's
// transformer code.

#include <algorithm>
#include <cmath>
#include <vector>

#include "iconsal/backbone/vit.hpp"

namespace toy {

using Mat = std::vector<std::vector<double>>;

// 2 x 2 patch grid, 1-pixel patches, width 2, one head, no layer norms.
inline iconsal::VitConfig config() {
    iconsal::VitConfig c;
    c.identifier = "toy-vit";
    c.input_resolution = 2;
    c.patch = 1;
    c.width = 2;
    c.heads = 1;
    c.layers = 1;
    c.mlp_width = 2;
    c.embed_dim = 2;
    c.layer_norm = false;
    return c;
}

inline Eigen::MatrixXd mat(const Mat& m) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
    for (std::size_t r = 0; r < m.size(); ++r)
        for (std::size_t c = 0; c < m[0].size(); ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r][c];
    return out;
}

inline Eigen::RowVectorXd row(std::vector<double> v) {
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
    return out;
}

struct Params {
    Mat patch_embed{{1.0, 0.0}, {0.0, 1.0}, {0.5, -0.5}};  // rgb -> width
    std::vector<double> cls{0.2, -0.1};
    Mat positional{{0.0, 0.0}, {0.1, 0.0}, {0.0, 0.1}, {-0.1, 0.0}, {0.0, -0.1}};
    Mat wq{{0.8, -0.3}, {0.4, 0.6}};
    Mat wk{{0.5, 0.2}, {-0.7, 0.9}};
    Mat wv{{1.1, -0.2}, {0.3, 0.7}};
    std::vector<double> bq{0.05, -0.02}, bk{0.0, 0.03}, bv{-0.04, 0.01};
    Mat wo{{0.9, 0.1}, {-0.2, 1.2}};
    std::vector<double> bo{0.02, 0.0};
    Mat w1{{0.6, -0.4}, {0.3, 0.8}};
    std::vector<double> b1{0.1, -0.05};
    Mat w2{{0.7, 0.2}, {-0.5, 0.4}};
    std::vector<double> b2{0.0, 0.01};
    Mat proj{{1.0, 0.3}, {-0.2, 0.8}};
};

inline iconsal::VitWeights weights(const Params& p) {
    iconsal::VitWeights w;
    w.patch_embed = mat(p.patch_embed);
    w.cls = row(p.cls);
    w.positional = mat(p.positional);
    w.ln_pre_gamma = Eigen::RowVectorXd::Ones(2);
    w.ln_pre_beta = Eigen::RowVectorXd::Zero(2);
    iconsal::VitBlockWeights b;
    b.ln1_gamma = b.ln2_gamma = Eigen::RowVectorXd::Ones(2);
    b.ln1_beta = b.ln2_beta = Eigen::RowVectorXd::Zero(2);
    b.wq = mat(p.wq);
    b.wk = mat(p.wk);
    b.wv = mat(p.wv);
    b.bq = row(p.bq);
    b.bk = row(p.bk);
    b.bv = row(p.bv);
    b.wo = mat(p.wo);
    b.bo = row(p.bo);
    b.w1 = mat(p.w1);
    b.b1 = row(p.b1);
    b.w2 = mat(p.w2);
    b.b2 = row(p.b2);
    w.blocks.push_back(b);
    w.ln_post_gamma = Eigen::RowVectorXd::Ones(2);
    w.ln_post_beta = Eigen::RowVectorXd::Zero(2);
    w.proj = mat(p.proj);
    return w;
}

inline iconsal::Image image() {
    iconsal::Image img(2, 2);
    const double px[4][3] = {{0.9, 0.1, 0.3}, {0.2, 0.8, 0.5}, {0.4, 0.4, 0.9}, {0.7, 0.6, 0.1}};
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 3; ++c) img.at(i / 2, i % 2, c) = static_cast<float>(px[i][c]);
    return img;
}

// ---- plain-loop trace -------------------------------------------------------

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Mat add_bias(Mat m, const std::vector<double>& b) {
    for (auto& r : m)
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    return m;
}

inline Mat transpose(const Mat& m) {
    Mat out(m[0].size(), std::vector<double>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[0].size(); ++j) out[j][i] = m[i][j];
    return out;
}

inline Mat softmax_rows(Mat s) {
    for (auto& r : s) {
        const double mx = *std::max_element(r.begin(), r.end());
        double sum = 0.0;
        for (auto& v : r) sum += (v = std::exp(v - mx));
        for (auto& v : r) v /= sum;
    }
    return s;
}

inline Mat tokens(const Params& p, const iconsal::Image& img) {
    // Model-input normalization, rounded to float like the stored input.
    const iconsal::Normalization norm;
    auto px = [&](int i, int c) {
        return static_cast<double>(static_cast<float>(
            (static_cast<double>(img.at(i / 2, i % 2, c)) - norm.mean[static_cast<std::size_t>(c)]) /
            norm.stddev[static_cast<std::size_t>(c)]));
    };
    Mat t{p.cls};
    for (int i = 0; i < 4; ++i) {
        std::vector<double> pix{px(i, 0), px(i, 1), px(i, 2)};
        t.push_back(matmul(Mat{pix}, p.patch_embed)[0]);
    }
    for (std::size_t r = 0; r < t.size(); ++r)
        for (int c = 0; c < 2; ++c) t[r][static_cast<std::size_t>(c)] += p.positional[r][static_cast<std::size_t>(c)];
    return t;
}

inline Mat attention(const Params& p, const Mat& x) {
    const Mat q = add_bias(matmul(x, p.wq), p.bq);
    const Mat k = add_bias(matmul(x, p.wk), p.bk);
    Mat s = matmul(q, transpose(k));
    for (auto& r : s)
        for (auto& v : r) v /= std::sqrt(2.0);
    return softmax_rows(s);
}

inline double quick_gelu(double z) { return z / (1.0 + std::exp(-1.702 * z)); }

// Block output with the attention probabilities supplied by the caller.
inline Mat block_with_attention(const Params& p, const Mat& x, const Mat& attn) {
    const Mat v = add_bias(matmul(x, p.wv), p.bv);
    const Mat o = add_bias(matmul(matmul(attn, v), p.wo), p.bo);
    Mat mid = x;
    for (std::size_t r = 0; r < x.size(); ++r)
        for (int c = 0; c < 2; ++c) mid[r][static_cast<std::size_t>(c)] += o[r][static_cast<std::size_t>(c)];
    Mat u = add_bias(matmul(mid, p.w1), p.b1);
    for (auto& r : u)
        for (auto& z : r) z = quick_gelu(z);
    const Mat m = add_bias(matmul(u, p.w2), p.b2);
    Mat out = mid;
    for (std::size_t r = 0; r < x.size(); ++r)
        for (int c = 0; c < 2; ++c) out[r][static_cast<std::size_t>(c)] += m[r][static_cast<std::size_t>(c)];
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

// Intermediate score: token-mean of the block output, projected, against text.
inline double layer_score(const Params& p, const Mat& out, const std::vector<double>& text) {
    std::vector<double> mean(2, 0.0);
    for (const auto& r : out)
        for (int c = 0; c < 2; ++c) mean[static_cast<std::size_t>(c)] += r[static_cast<std::size_t>(c)] / out.size();
    return cosine(matmul(Mat{mean}, p.proj)[0], text);
}

inline std::vector<double> minmax(std::vector<double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double l = *lo, h = *hi;
    for (auto& x : v) x = (x - l) / (h - l);
    return v;
}

/// LeGrad on the toy: d score / d attention by central differences, rectified,
/// averaged over query rows, class column dropped, min-max normalized.
inline std::vector<double> legrad_trace(const Params& p, const iconsal::Image& img, const std::vector<double>& text) {
    const Mat x = tokens(p, img);
    const Mat attn = attention(p, x);
    const double h = 1e-6;
    std::vector<double> rel(4, 0.0);
    for (std::size_t q = 0; q < 5; ++q)
        for (std::size_t k = 1; k < 5; ++k) {
            Mat plus = attn, minus = attn;
            plus[q][k] += h;
            minus[q][k] -= h;
            const double g = (layer_score(p, block_with_attention(p, x, plus), text) -
                              layer_score(p, block_with_attention(p, x, minus), text)) /
                             (2 * h);
            rel[k - 1] += std::max(g, 0.0) / 5.0;
        }
    return minmax(rel);
}

/// CLIP Surgery on the toy (depth 1): second path = tokens + value-value
/// attention output, no feed-forward; patch rows projected and compared to
/// the text by cosine; min-max normalized.
inline std::vector<double> surgery_trace(const Params& p, const iconsal::Image& img, const std::vector<double>& text) {
    const Mat x = tokens(p, img);
    const Mat v = add_bias(matmul(x, p.wv), p.bv);
    Mat s = matmul(v, transpose(v));
    for (auto& r : s)
        for (auto& e : r) e /= std::sqrt(2.0);
    const Mat o = add_bias(matmul(matmul(softmax_rows(s), v), p.wo), p.bo);
    std::vector<double> sims;
    for (std::size_t r = 1; r < 5; ++r) {
        std::vector<double> tok{x[r][0] + o[r][0], x[r][1] + o[r][1]};
        sims.push_back(cosine(matmul(Mat{tok}, p.proj)[0], text));
    }
    return minmax(sims);
}

}  // namespace toy
