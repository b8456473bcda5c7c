#include "doctest.h"

#include <cmath>

#include "iconsal/backbone/residual.hpp"
#include "iconsal/backbone/stub.hpp"
#include "iconsal/backbone/vit.hpp"
#include "iconsal/saliency/methods.hpp"
#include "support.hpp"
#include "toy_transformer.hpp"

using namespace iconsal;

namespace {

FeatureStack stack(const std::vector<std::vector<std::vector<double>>>& planes) {
    const int c = static_cast<int>(planes.size());
    const int h = static_cast<int>(planes[0].size());
    const int w = static_cast<int>(planes[0][0].size());
    FeatureStack fs(c, h, w);
    for (int k = 0; k < c; ++k)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) fs.at(k, y, x) = planes[k][y][x];
    return fs;
}

FeatureStack constant_gradients(const std::vector<double>& per_channel, int h, int w) {
    FeatureStack fs(static_cast<int>(per_channel.size()), h, w);
    for (int c = 0; c < fs.channels; ++c)
        for (int i = 0; i < h * w; ++i) fs.values[static_cast<std::size_t>(c) * h * w + i] = per_channel[c];
    return fs;
}

void check_grid(const RealGrid& got, const std::vector<std::vector<double>>& want, double tol = 1e-6) {
    REQUIRE(got.height() == static_cast<int>(want.size()));
    REQUIRE(got.width() == static_cast<int>(want[0].size()));
    for (int y = 0; y < got.height(); ++y)
        for (int x = 0; x < got.width(); ++x) CHECK(std::abs(got(y, x) - want[y][x]) <= tol);
}

Image ones(int n) { return Image(n, n, 1.0f); }

RealGrid zero_relevance(int n) { return RealGrid(n, n, 0.0); }

}  // namespace

TEST_CASE("min-max normalization is idempotent and bounded") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        RealGrid g(5, 7);
        for (auto& v : g.storage()) v = 10 * symmetric_unit(rng);
        const auto once = minmax_normalize(g);
        CHECK(minmax_normalize(once) == once);
        for (double v : once.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    bool degenerate = false;
    const auto z = minmax_normalize(RealGrid(3, 3, 0.0), &degenerate);
    CHECK(degenerate);
    for (double v : z.values()) CHECK(v == 0.0);
    const auto c = minmax_normalize(RealGrid(3, 3, 0.4), &degenerate);
    CHECK_FALSE(degenerate);
    for (double v : c.values()) CHECK(v == 1.0);
}

TEST_CASE("grad_cam hand oracle") {
    // A1 = [[1,0],[0,0]], A2 = [[0,0],[0,1]], mean gradients (0.5, -0.25).
    const auto acts = stack({{{1, 0}, {0, 0}}, {{0, 0}, {0, 1}}});
    StubBackbone stub(2, {{"tap", acts, constant_gradients({0.5, -0.25}, 2, 2)}}, zero_relevance(2));
    CHECK(grad_cam_weights(constant_gradients({0.5, -0.25}, 2, 2)) == std::vector<double>{0.5, -0.25});
    const auto m = grad_cam(ones(2), "a snake", stub, {});
    check_grid(m.values, {{1, 0}, {0, 0}});
    CHECK(m.passes.forward_passes == 1);
    CHECK(m.passes.backward_passes == 1);
}

TEST_CASE("grad_cam single channel with constant gradient is proportional to the activation") {
    const auto acts = stack({{{0.2, 0.4}, {0.8, 0.0}}});
    StubBackbone stub(2, {{"tap", acts, constant_gradients({3.0}, 2, 2)}}, zero_relevance(2));
    check_grid(grad_cam(ones(2), "x", stub, {}).values, {{0.25, 0.5}, {1.0, 0.0}});
}

TEST_CASE("grad_cam_pp reduces to grad_cam for uniform positive gradients") {
    const auto acts = stack({{{0.2, 0.4}, {0.8, 0.1}}});
    StubBackbone stub(2, {{"tap", acts, constant_gradients({0.7}, 2, 2)}}, zero_relevance(2));
    const auto pp = grad_cam_pp(ones(2), "x", stub, {});
    const auto gc = grad_cam(ones(2), "x", stub, {});
    // Hand value: alpha = g^2 / (2 g^2 + sum(A) g^3) with g = 0.7, sum(A) = 1.5;
    // weight = 4 * alpha * g > 0, so the normalized map is A / max(A).
    const double g = 0.7;
    const double alpha = g * g / (2 * g * g + 1.5 * g * g * g + kEpsilon);
    CHECK(grad_cam_pp_weights(acts, constant_gradients({0.7}, 2, 2))[0] == doctest::Approx(4 * alpha * g));
    for (std::size_t i = 0; i < pp.values.size(); ++i)
        CHECK(std::abs(pp.values.storage()[i] - gc.values.storage()[i]) <= 1e-6);
    check_grid(pp.values, {{(0.2 - 0.1) / 0.7, (0.4 - 0.1) / 0.7}, {1.0, 0.0}});
    CHECK(pp.passes.forward_passes == 1);
    CHECK(pp.passes.backward_passes == 1);
}

TEST_CASE("grad_cam_pp with all-negative gradients gives an all-zero map") {
    const auto acts = stack({{{0.2, 0.4}, {0.8, 0.1}}, {{1, 1}, {0, 0}}});
    StubBackbone stub(2, {{"tap", acts, constant_gradients({-0.5, -2.0}, 2, 2)}}, zero_relevance(2));
    const auto m = grad_cam_pp(ones(2), "x", stub, {});
    CHECK(m.degenerate);
    for (double v : m.values.values()) CHECK(v == 0.0);
}

TEST_CASE("layer_cam hand oracle") {
    // G = [[1,-1],[2,0]], A = [[3,5],[1,4]] -> raw [[3,0],[2,0]].
    const auto acts = stack({{{3, 5}, {1, 4}}});
    const auto grads = stack({{{1, -1}, {2, 0}}});
    StubBackbone stub(2, {{"tap", acts, grads}}, zero_relevance(2));
    const auto raw = layer_cam_raw(acts, grads);
    check_grid(raw, {{3, 0}, {2, 0}});
    const auto m = layer_cam(ones(2), "x", stub, {});
    check_grid(m.values, {{1, 0}, {2.0 / 3.0, 0}});
    CHECK(m.passes.forward_passes == 1);
    CHECK(m.passes.backward_passes == 1);
}

TEST_CASE("layer_cam aggregation of identical taps equals the single-tap map") {
    const auto acts = stack({{{3, 5}, {1, 4}}});
    const auto grads = stack({{{1, -1}, {2, 0}}});
    StubBackbone stub(2, {{"a", acts, grads}, {"b", acts, grads}}, zero_relevance(2));
    MethodConfig multi;
    multi.layercam_taps = {"a", "b"};
    MethodConfig single;
    single.layer_override = "a";
    const auto m2 = layer_cam(ones(2), "x", stub, multi);
    const auto m1 = layer_cam(ones(2), "x", stub, single);
    CHECK(m2.values == m1.values);
    CHECK(m2.passes.forward_passes == 1);
    CHECK(m2.passes.backward_passes == 1);
    MethodConfig none;
    none.layercam_taps = {"missing"};
    CHECK_THROWS(layer_cam(ones(2), "x", stub, none));
}

TEST_CASE("score_cam hand oracle") {
    // Masked-input score = mean(mask * (A1 + A2)): both channels score 0.5.
    const auto acts = stack({{{1, 1}, {0, 0}}, {{0, 0}, {0, 2}}});
    RealGrid relevance(2, 2, std::vector<double>{1, 1, 0, 2});
    StubBackbone stub(2, {{"tap", acts, FeatureStack(2, 2, 2)}}, relevance);
    const auto m = score_cam(ones(2), "x", stub, {});
    check_grid(m.values, {{0.5, 0.5}, {0, 1}});
    CHECK(m.passes.forward_passes == 2);
    CHECK(m.passes.backward_passes == 0);
}

TEST_CASE("score_cam with one channel returns that channel normalized") {
    const auto acts = stack({{{0.3, 0.9}, {0.0, 0.6}}});
    RealGrid relevance(2, 2, 1.0);
    StubBackbone stub(2, {{"tap", acts, FeatureStack(1, 2, 2)}}, relevance);
    check_grid(score_cam(ones(2), "x", stub, {}).values, {{1.0 / 3.0, 1.0}, {0.0, 2.0 / 3.0}});
}

TEST_CASE("score_cam softmax weighting switch") {
    const auto acts = stack({{{1, 1}, {0, 0}}, {{0, 0}, {0, 2}}});
    RealGrid relevance(2, 2, std::vector<double>{1, 1, 0, 4});
    StubBackbone stub(2, {{"tap", acts, FeatureStack(2, 2, 2)}}, relevance);
    MethodConfig cfg;
    cfg.scorecam_softmax = true;
    // Scores 0.5 and 1.0 -> softmax weights e^0.5 / (e^0.5 + e), e / (e^0.5 + e).
    const double w1 = std::exp(0.5) / (std::exp(0.5) + std::exp(1.0));
    const double w2 = 1.0 - w1;
    const double hi = std::max(w1, 2 * w2);
    check_grid(score_cam(ones(2), "x", stub, cfg).values, {{w1 / hi, w1 / hi}, {0, 2 * w2 / hi}});
}

TEST_CASE("gscore_cam selects the dominant-gradient channel") {
    const auto acts = stack({{{1, 1}, {0, 0}}, {{0, 0.5}, {0, 2}}, {{0.3, 0}, {0, 0}}});
    RealGrid relevance(2, 2, 1.0);
    StubBackbone stub(2, {{"tap", acts, constant_gradients({0.01, -3.0, 0.2}, 2, 2)}}, relevance);
    CHECK(rank_channels_by_gradient(constant_gradients({0.01, -3.0, 0.2}, 2, 2)) == std::vector<int>{1, 2, 0});
    MethodConfig cfg;
    cfg.top_k = 1;
    const auto m = gscore_cam(ones(2), "x", stub, cfg);
    check_grid(m.values, {{0, 0.25}, {0, 1}});
    CHECK(m.passes.forward_passes == 2);
    CHECK(m.passes.backward_passes == 1);
}

TEST_CASE("gscore_cam top_k range") {
    const auto acts = stack({{{1, 1}, {0, 0}}});
    StubBackbone stub(2, {{"tap", acts, FeatureStack(1, 2, 2)}}, RealGrid(2, 2, 1.0));
    MethodConfig cfg;
    cfg.top_k = 0;
    CHECK_THROWS_AS(gscore_cam(ones(2), "x", stub, cfg), SaliencyError);
    cfg.top_k = 2;
    CHECK_THROWS_AS(gscore_cam(ones(2), "x", stub, cfg), SaliencyError);
}

TEST_CASE("gscore_cam with top_k = C matches score_cam") {
    ResidualBackbone rn(test_support::small_residual_config());
    const Image img = test_support::random_image(80, 64, 9);
    MethodConfig cfg;
    cfg.top_k = rn.tap_shape(rn.tap_point()).channels;
    const auto g = gscore_cam(img, "a painting of a dog", rn, cfg);
    const auto s = score_cam(img, "a painting of a dog", rn, cfg);
    for (std::size_t i = 0; i < g.values.size(); ++i)
        CHECK(std::abs(g.values.storage()[i] - s.values.storage()[i]) <= 1e-6);
}

TEST_CASE("legrad matches the toy-transformer trace") {
    const toy::Params p;
    VitBackbone vit(toy::config(), toy::weights(p));
    const Image img = toy::image();
    const Embedding text = vit.encode_text("a painting of a snake");
    const auto want = toy::legrad_trace(p, img, text.values);
    vit.reset_counter();
    const auto m = legrad(img, "a painting of a snake", vit, {});
    REQUIRE(m.values.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(m.values.storage()[i] - want[i]) <= 1e-6);
    CHECK(m.passes.forward_passes == 1);
    CHECK(m.passes.backward_passes == 1);
}

TEST_CASE("clip_surgery matches the toy-transformer trace") {
    const toy::Params p;
    VitBackbone vit(toy::config(), toy::weights(p));
    const Image img = toy::image();
    const Embedding text = vit.encode_text("a painting of a snake");
    const auto want = toy::surgery_trace(p, img, text.values);
    const auto m = clip_surgery(img, "a painting of a snake", vit, {});
    for (int i = 0; i < 4; ++i) CHECK(std::abs(m.values.storage()[i] - want[i]) <= 1e-6);
    CHECK(m.passes.forward_passes == 1);
    CHECK(m.passes.backward_passes == 0);
}

TEST_CASE("surgery attention equals standard attention when query = key = value") {
    toy::Params p;
    p.wq = p.wk = p.wv;
    p.bq = p.bk = p.bv;
    // Zero feed-forward so the standard block output is tokens + attention.
    p.w2 = {{0, 0}, {0, 0}};
    p.b2 = {0, 0};
    VitBackbone vit(toy::config(), toy::weights(p));
    const Image img = toy::image();
    const auto in = preprocess(img, 2, ResizeMode::squash, vit.normalization());
    const auto standard = vit.forward_with_activations(in.input, "resblocks.0").activations;
    const auto surgery = vit.surgery_forward(in.input, 1);
    for (int i = 0; i < 4; ++i) {
        const Eigen::RowVectorXd tok{{standard.values[i], standard.values[4 + i]}};
        const Eigen::RowVectorXd e = tok * toy::mat(p.proj);
        CHECK(surgery.patch_embeddings[i].values[0] == doctest::Approx(e(0)).epsilon(1e-12));
        CHECK(surgery.patch_embeddings[i].values[1] == doctest::Approx(e(1)).epsilon(1e-12));
    }
}

TEST_CASE("transformer-only methods reject residual backbones") {
    ResidualBackbone rn(test_support::small_residual_config());
    const Image img = test_support::random_image(64, 64, 1);
    CHECK_THROWS_AS(legrad(img, "x", rn, {}), SaliencyError);
    CHECK_THROWS_AS(clip_surgery(img, "x", rn, {}), SaliencyError);
}

TEST_CASE("pass counts on synthetic backbones") {
    ResidualBackbone rn(test_support::small_residual_config());
    VitBackbone vit(test_support::small_vit_config());
    const Image img = test_support::random_image(70, 50, 4);
    MethodConfig cfg;
    cfg.top_k = 5;
    const int c = rn.tap_shape(rn.tap_point()).channels;
    auto fb = [](const SaliencyMap& m) { return std::pair{m.passes.forward_passes, m.passes.backward_passes}; };
    CHECK(fb(grad_cam(img, "x", rn, cfg)) == std::pair<std::int64_t, std::int64_t>{1, 1});
    CHECK(fb(grad_cam_pp(img, "x", rn, cfg)) == std::pair<std::int64_t, std::int64_t>{1, 1});
    CHECK(fb(layer_cam(img, "x", rn, cfg)) == std::pair<std::int64_t, std::int64_t>{1, 1});
    CHECK(fb(legrad(img, "x", vit, cfg)) == std::pair<std::int64_t, std::int64_t>{1, 1});
    CHECK(fb(score_cam(img, "x", rn, cfg)) == std::pair<std::int64_t, std::int64_t>{c, 0});
    CHECK(fb(gscore_cam(img, "x", rn, cfg)) == std::pair<std::int64_t, std::int64_t>{cfg.top_k + 1, 1});
    CHECK(fb(clip_surgery(img, "x", vit, cfg)) == std::pair<std::int64_t, std::int64_t>{1, 0});
}

TEST_CASE("maps satisfy invariants, are deterministic, and are image-sized") {
    ResidualBackbone rn(test_support::small_residual_config());
    VitBackbone vit(test_support::small_vit_config());
    const auto registry = default_registry(rn, vit);
    for (auto mode : {ResizeMode::squash, ResizeMode::center_crop}) {
        MethodConfig cfg;
        cfg.top_k = 8;
        cfg.resize_mode = mode;
        const Image img = test_support::random_image(53, 37, 77);
        const auto first = generate_all(img, "img-1", "a painting of a lily", registry, cfg);
        const auto second = generate_all(img, "img-1", "a painting of a lily", registry, cfg);
        REQUIRE(first.maps.size() == 7);
        CHECK(first.failures.empty());
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK(first.maps[i].method == kAllMethods[i]);
            CHECK(first.maps[i].image_id == "img-1");
            CHECK(satisfies_map_invariants(first.maps[i], 37, 53));
            CHECK(first.maps[i].values == second.maps[i].values);
        }
    }
}

TEST_CASE("generate_all isolates failures") {
    ResidualBackbone rn(test_support::small_residual_config());
    const Image img = test_support::random_image(64, 64, 2);
    MethodConfig cfg;
    cfg.top_k = 4;

    MethodRegistry one;
    one.add(MethodId::grad_cam, [&](const Image& i, std::string_view p, const MethodConfig& c) {
        return grad_cam(i, p, rn, c);
    });
    CHECK(generate_all(img, "a", "x", one, cfg).maps.size() == 1);

    VitBackbone vit(test_support::small_vit_config());
    auto full = default_registry(rn, vit);
    full.entries[0].second = [](const Image&, std::string_view, const MethodConfig&) -> SaliencyMap {
        throw SaliencyError("boom");
    };
    const auto out = generate_all(img, "a", "x", full, cfg);
    CHECK(out.maps.size() == 6);
    REQUIRE(out.failures.size() == 1);
    CHECK(out.failures[0].method == MethodId::clip_surgery);
    CHECK(out.failures[0].message == "boom");
    CHECK_THROWS_AS(one.add(MethodId::grad_cam, full.entries[1].second), SaliencyError);
}
