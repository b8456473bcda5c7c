#include "iconsal/saliency/methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iconsal/backbone/vit.hpp"

namespace iconsal {

namespace {

PassCounter diff(const PassCounter& after, const PassCounter& before) {
    return {after.forward_passes - before.forward_passes, after.backward_passes - before.backward_passes,
            after.partial_passes - before.partial_passes, after.text_passes - before.text_passes};
}

PreprocessedImage prepare(const Image& image, const Backbone& backbone, const MethodConfig& cfg) {
    return preprocess(image, backbone.spec().input_resolution, cfg.resize_mode, backbone.normalization());
}

std::string select_tap(const Backbone& backbone, const MethodConfig& cfg) {
    return cfg.layer_override ? *cfg.layer_override : backbone.tap_point();
}

SaliencyMap finish(const RealGrid& raw, const PreprocessTransform& transform, MethodId method,
                   std::string_view prompt) {
    SaliencyMap m;
    m.values = minmax_normalize(to_original_space(raw, transform), &m.degenerate);
    m.method = method;
    m.prompt = std::string(prompt);
    return m;
}

RealGrid gradient_cam(const FeatureStack& a, const FeatureStack& g, MethodId method) {
    if (method == MethodId::grad_cam) return rectify(weighted_channel_sum(a, grad_cam_weights(g)));
    return rectify(weighted_channel_sum(a, grad_cam_pp_weights(a, g)));
}

SaliencyMap run_gradient_cam(const Image& image, std::string_view prompt, Backbone& backbone,
                             const MethodConfig& cfg, MethodId method) {
    const PassCounter before = backbone.counter();
    const auto prep = prepare(image, backbone, cfg);
    const Embedding text = backbone.encode_text(prompt);
    const std::string tap = select_tap(backbone, cfg);
    const auto cap = backbone.grad_of_score(prep.input, text, std::span<const std::string>(&tap, 1));
    const auto& tg = cap.taps.front();
    auto map = finish(gradient_cam(tg.activations, tg.gradients, method), prep.transform, method, prompt);
    map.passes = diff(backbone.counter(), before);
    return map;
}

/// Scores the preprocessed input masked by each selected channel's
/// normalized, upsampled activation. One forward pass per channel.
std::vector<double> masked_channel_scores(const Image& input, const FeatureStack& activations,
                                          const std::vector<int>& channels, const Embedding& text,
                                          Backbone& backbone, int batch_size) {
    if (batch_size <= 0) throw SaliencyError("channel_batch must be positive");
    std::vector<double> scores;
    scores.reserve(channels.size());
    std::vector<Image> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    const int res = input.width;
    auto flush = [&] {
        const auto s = backbone.score_batch(batch, text);
        scores.insert(scores.end(), s.begin(), s.end());
        batch.clear();
    };
    for (int c : channels) {
        const RealGrid mask = minmax_normalize(upsample_bilinear(activations.plane(c), res, res));
        Image masked = input;
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x) {
                const auto m = static_cast<float>(mask(y, x));
                for (int ch = 0; ch < 3; ++ch) masked.at(y, x, ch) *= m;
            }
        batch.push_back(std::move(masked));
        if (static_cast<int>(batch.size()) == batch_size) flush();
    }
    if (!batch.empty()) flush();
    return scores;
}

void softmax_inplace(std::vector<double>& v) {
    if (v.empty()) return;
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (auto& x : v) sum += (x = std::exp(x - mx));
    for (auto& x : v) x /= sum;
}

RealGrid selected_channel_sum(const FeatureStack& a, const std::vector<int>& channels,
                              const std::vector<double>& weights) {
    std::vector<double> full(static_cast<std::size_t>(a.channels), 0.0);
    for (std::size_t i = 0; i < channels.size(); ++i) full[static_cast<std::size_t>(channels[i])] = weights[i];
    return weighted_channel_sum(a, full);
}

VitBackbone& require_transformer(Backbone& backbone, std::string_view method) {
    auto* vit = dynamic_cast<VitBackbone*>(&backbone);
    if (!vit)
        throw SaliencyError(std::string(method) + " requires a vision-transformer backbone, got " +
                            backbone.spec().identifier);
    return *vit;
}

}  // namespace

std::vector<double> grad_cam_weights(const FeatureStack& g) {
    std::vector<double> w(static_cast<std::size_t>(g.channels));
    for (int c = 0; c < g.channels; ++c) {
        const auto p = g.plane_values(c);
        w[static_cast<std::size_t>(c)] = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
    }
    return w;
}

std::vector<double> grad_cam_pp_weights(const FeatureStack& a, const FeatureStack& g) {
    std::vector<double> w(static_cast<std::size_t>(g.channels), 0.0);
    for (int c = 0; c < g.channels; ++c) {
        const auto ap = a.plane_values(c);
        const auto gp = g.plane_values(c);
        const double sum_a = std::accumulate(ap.begin(), ap.end(), 0.0);
        double wc = 0.0;
        for (std::size_t i = 0; i < gp.size(); ++i) {
            const double gv = gp[i];
            if (gv == 0.0) continue;
            const double g2 = gv * gv;
            const double alpha = g2 / (2.0 * g2 + sum_a * g2 * gv + kEpsilon);
            wc += alpha * std::max(gv, 0.0);
        }
        w[static_cast<std::size_t>(c)] = wc;
    }
    return w;
}

RealGrid weighted_channel_sum(const FeatureStack& a, const std::vector<double>& weights) {
    if (static_cast<int>(weights.size()) != a.channels) throw SaliencyError("channel weight count mismatch");
    RealGrid out(a.height, a.width, 0.0);
    auto& o = out.storage();
    for (int c = 0; c < a.channels; ++c) {
        const double w = weights[static_cast<std::size_t>(c)];
        if (w == 0.0) continue;
        const auto p = a.plane_values(c);
        for (std::size_t i = 0; i < p.size(); ++i) o[i] += w * p[i];
    }
    return out;
}

RealGrid layer_cam_raw(const FeatureStack& a, const FeatureStack& g) {
    RealGrid out(a.height, a.width, 0.0);
    auto& o = out.storage();
    for (int c = 0; c < a.channels; ++c) {
        const auto ap = a.plane_values(c);
        const auto gp = g.plane_values(c);
        for (std::size_t i = 0; i < ap.size(); ++i) o[i] += std::max(gp[i], 0.0) * ap[i];
    }
    return rectify(std::move(out));
}

std::vector<int> rank_channels_by_gradient(const FeatureStack& gradients) {
    const auto means = grad_cam_weights(gradients);
    std::vector<int> order(means.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return std::abs(means[static_cast<std::size_t>(x)]) > std::abs(means[static_cast<std::size_t>(y)]);
    });
    return order;
}

SaliencyMap grad_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    return run_gradient_cam(image, prompt, backbone, cfg, MethodId::grad_cam);
}

SaliencyMap grad_cam_pp(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    return run_gradient_cam(image, prompt, backbone, cfg, MethodId::grad_cam_pp);
}

SaliencyMap layer_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    const PassCounter before = backbone.counter();
    std::vector<std::string> taps = cfg.layercam_taps;
    if (taps.empty()) taps.push_back(select_tap(backbone, cfg));
    const auto prep = prepare(image, backbone, cfg);
    const Embedding text = backbone.encode_text(prompt);
    const auto cap = backbone.grad_of_score(prep.input, text, taps);

    RealGrid sum(prep.transform.original_height, prep.transform.original_width, 0.0);
    for (const auto& tg : cap.taps) {
        const RealGrid per_tap = minmax_normalize(to_original_space(layer_cam_raw(tg.activations, tg.gradients),
                                                                    prep.transform));
        for (std::size_t i = 0; i < sum.size(); ++i) sum.storage()[i] += per_tap.storage()[i];
    }
    for (auto& v : sum.storage()) v /= static_cast<double>(cap.taps.size());

    SaliencyMap m;
    m.values = minmax_normalize(sum, &m.degenerate);
    m.method = MethodId::layer_cam;
    m.prompt = std::string(prompt);
    m.passes = diff(backbone.counter(), before);
    return m;
}

SaliencyMap legrad(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    VitBackbone& vit = require_transformer(backbone, "legrad");
    const PassCounter before = backbone.counter();
    const auto prep = prepare(image, backbone, cfg);
    const Embedding text = backbone.encode_text(prompt);
    const auto grads = vit.intermediate_attention_gradients(prep.input, text, cfg.legrad_first_layer);

    const int grid = vit.config().grid();
    RealGrid raw(grid, grid, 0.0);
    for (const auto& ag : grads) {
        // Rectified gradient, averaged over heads and query tokens; the class
        // token column is dropped.
        for (int key = 1; key < ag.tokens; ++key) {
            double acc = 0.0;
            for (int h = 0; h < ag.heads; ++h)
                for (int q = 0; q < ag.tokens; ++q) acc += std::max(ag.at(h, q, key), 0.0);
            raw.storage()[static_cast<std::size_t>(key - 1)] += acc / (static_cast<double>(ag.heads) * ag.tokens);
        }
    }
    auto map = finish(raw, prep.transform, MethodId::legrad, prompt);
    map.passes = diff(backbone.counter(), before);
    return map;
}

SaliencyMap score_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    const PassCounter before = backbone.counter();
    const auto prep = prepare(image, backbone, cfg);
    const Embedding text = backbone.encode_text(prompt);
    const std::string tap = select_tap(backbone, cfg);
    const FeatureStack acts =
        backbone.capture_activations(prep.input, std::span<const std::string>(&tap, 1)).front();
    if (acts.channels == 0) throw SaliencyError("scorecam: tap has no channels");

    std::vector<int> channels(static_cast<std::size_t>(acts.channels));
    std::iota(channels.begin(), channels.end(), 0);
    auto weights = masked_channel_scores(prep.input, acts, channels, text, backbone, cfg.channel_batch);
    if (cfg.scorecam_softmax) softmax_inplace(weights);

    auto map = finish(rectify(weighted_channel_sum(acts, weights)), prep.transform, MethodId::score_cam, prompt);
    map.passes = diff(backbone.counter(), before);
    return map;
}

SaliencyMap gscore_cam(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    const std::string tap = select_tap(backbone, cfg);
    const TapShape shape = backbone.tap_shape(tap);
    if (cfg.top_k < 1 || cfg.top_k > shape.channels)
        throw SaliencyError("gscorecam: top_k " + std::to_string(cfg.top_k) + " outside [1, " +
                            std::to_string(shape.channels) + "]");
    const PassCounter before = backbone.counter();
    const auto prep = prepare(image, backbone, cfg);
    const Embedding text = backbone.encode_text(prompt);
    const auto cap = backbone.grad_of_score(prep.input, text, std::span<const std::string>(&tap, 1));
    const auto& tg = cap.taps.front();

    auto order = rank_channels_by_gradient(tg.gradients);
    order.resize(static_cast<std::size_t>(cfg.top_k));
    auto weights = masked_channel_scores(prep.input, tg.activations, order, text, backbone, cfg.channel_batch);
    if (cfg.scorecam_softmax) softmax_inplace(weights);

    auto map = finish(rectify(selected_channel_sum(tg.activations, order, weights)), prep.transform,
                      MethodId::gscore_cam, prompt);
    map.passes = diff(backbone.counter(), before);
    return map;
}

SaliencyMap clip_surgery(const Image& image, std::string_view prompt, Backbone& backbone, const MethodConfig& cfg) {
    VitBackbone& vit = require_transformer(backbone, "clip-surgery");
    const PassCounter before = backbone.counter();
    const auto prep = prepare(image, backbone, cfg);
    const Embedding text = backbone.encode_text(prompt);
    const int depth = cfg.surgery_depth > 0 ? cfg.surgery_depth : std::max(1, vit.config().layers / 2);
    const SurgeryOutput out = vit.surgery_forward(prep.input, depth);

    // Patch-to-prompt cosine similarity; no rectification, negative evidence
    // maps to the low end of the normalized range.
    RealGrid raw(out.grid, out.grid, 0.0);
    for (std::size_t i = 0; i < out.patch_embeddings.size(); ++i)
        raw.storage()[i] = similarity(out.patch_embeddings[i], text);
    auto map = finish(raw, prep.transform, MethodId::clip_surgery, prompt);
    map.passes = diff(backbone.counter(), before);
    return map;
}

void MethodRegistry::add(MethodId id, MethodFn fn) {
    for (const auto& e : entries)
        if (e.first == id) throw SaliencyError("duplicate registry entry: " + std::string(method_id_string(id)));
    entries.emplace_back(id, std::move(fn));
    std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
}

MethodRegistry default_registry(Backbone& residual, Backbone& transformer) {
    MethodRegistry r;
    auto bind = [](auto fn, Backbone& b) {
        return [fn, &b](const Image& img, std::string_view prompt, const MethodConfig& cfg) {
            return fn(img, prompt, b, cfg);
        };
    };
    r.add(MethodId::clip_surgery, bind(clip_surgery, transformer));
    r.add(MethodId::grad_cam, bind(grad_cam, residual));
    r.add(MethodId::grad_cam_pp, bind(grad_cam_pp, residual));
    r.add(MethodId::gscore_cam, bind(gscore_cam, residual));
    r.add(MethodId::layer_cam, bind(layer_cam, residual));
    r.add(MethodId::legrad, bind(legrad, transformer));
    r.add(MethodId::score_cam, bind(score_cam, residual));
    return r;
}

GeneratedMaps generate_all(const Image& image, std::string_view image_id, std::string_view prompt,
                           const MethodRegistry& registry, const MethodConfig& cfg) {
    GeneratedMaps out;
    for (const auto& [id, fn] : registry.entries) {
        try {
            SaliencyMap m = fn(image, prompt, cfg);
            m.method = id;
            m.image_id = std::string(image_id);
            out.maps.push_back(std::move(m));
        } catch (const std::exception& e) {
            out.failures.push_back({id, e.what()});
        }
    }
    return out;
}

}  // namespace iconsal
