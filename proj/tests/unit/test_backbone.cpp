#include "doctest.h"

#include <cmath>
#include <random>

#include "iconsal/backbone/residual.hpp"
#include "iconsal/backbone/stub.hpp"
#include "iconsal/backbone/vit.hpp"
#include "support.hpp"

using namespace iconsal;

TEST_CASE("similarity examples") {
    const Embedding u{{1, 0, 0}, Modality::image};
    const Embedding v{{0, 1, 0}, Modality::text};
    CHECK(similarity(u, u) == doctest::Approx(1.0));
    CHECK(similarity(u, v) == doctest::Approx(0.0));
    const Embedding a{{1, 2, 2}, Modality::image};
    const Embedding b{{2, 1, 2}, Modality::text};
    CHECK(similarity(a, b) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
    CHECK(similarity(a, b) == similarity(b, a));
}

TEST_CASE("similarity is invariant to positive rescaling") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        Embedding u, v;
        for (int i = 0; i < 16; ++i) {
            u.values.push_back(symmetric_unit(rng));
            v.values.push_back(symmetric_unit(rng));
        }
        const double base = similarity(u, v);
        CHECK(base >= -1.0);
        CHECK(base <= 1.0);
        for (double alpha : {0.5, 2.0, 10.0}) {
            Embedding s = u;
            for (auto& x : s.values) x *= alpha;
            CHECK(std::abs(similarity(s, v) - base) < 1e-6);
        }
    }
}

TEST_CASE("similarity rejects zero-norm vectors") {
    const Embedding z{{0, 0, 0}, Modality::image};
    const Embedding u{{1, 0, 0}, Modality::text};
    CHECK_THROWS_AS(similarity(z, u), BackboneError);
    CHECK_THROWS_AS(similarity(u, z), BackboneError);
}

TEST_CASE("encode_text is deterministic and discriminative") {
    ResidualBackbone rn(test_support::small_residual_config());
    const auto a = rn.encode_text("a painting of a snake");
    const auto b = rn.encode_text("a painting of a snake");
    const auto c = rn.encode_text("a painting of a bridge");
    CHECK(a == b);
    CHECK(a.values != c.values);
    CHECK(a.modality == Modality::text);
    CHECK_THROWS_AS(rn.encode_text(""), BackboneError);
    CHECK(rn.counter().text_passes == 3);
}

TEST_CASE("token-count stub encoder") {
    const auto v = token_count_embedding("a b c", 4);
    CHECK(v == std::vector<double>{3, 0, 0, 0});
}

TEST_CASE("residual-50x16 tap declares 3072 channels") {
    ResidualBackbone rn(ResidualConfig{});
    const auto shape = rn.tap_shape(rn.tap_point());
    CHECK(rn.tap_point() == "layer4.2.relu3");
    CHECK(shape.channels == 3072);
    CHECK(shape.height == 12);
    CHECK(shape.width == 12);
    const Image img = test_support::random_image(384, 384, 3);
    const auto cap = rn.forward_with_activations(img, rn.tap_point());
    CHECK(cap.activations.channels == 3072);
    CHECK(cap.activations.height == 12);
    CHECK(cap.activations.all_finite());
}

TEST_CASE("capturing activations does not change the embedding") {
    SUBCASE("residual") {
        ResidualBackbone rn(test_support::small_residual_config());
        const Image img = test_support::random_image(64, 64, 11);
        const auto plain = rn.encode_image(img);
        for (const auto& tap : rn.tap_points()) CHECK(rn.forward_with_activations(img, tap).embedding == plain);
    }
    SUBCASE("transformer") {
        VitBackbone vit(test_support::small_vit_config());
        const Image img = test_support::random_image(32, 32, 12);
        const auto plain = vit.encode_image(img);
        for (const auto& tap : vit.tap_points()) CHECK(vit.forward_with_activations(img, tap).embedding == plain);
    }
}

TEST_CASE("two-channel linear stub produces a (2, 2, 2) stack") {
    LinearStubBackbone stub(2, {1.0, 1.0});
    Image img(2, 2, 0.5f);
    const auto cap = stub.forward_with_activations(img, "linear");
    CHECK(cap.activations.channels == 2);
    CHECK(cap.activations.height == 2);
    CHECK(cap.activations.width == 2);
}

TEST_CASE("forward errors") {
    ResidualBackbone rn(test_support::small_residual_config());
    const Image img = test_support::random_image(64, 64, 1);
    CHECK_THROWS_AS(rn.forward_with_activations(img, "layer9.relu"), BackboneError);
    const Image wrong = test_support::random_image(48, 48, 1);
    CHECK_THROWS_AS(rn.encode_image(wrong), BackboneError);
}

TEST_CASE("linear stub gradient is all ones") {
    LinearStubBackbone stub(3, {1.0, 1.0, 1.0});
    const Image img = test_support::random_image(3, 3, 5);
    const Embedding text = stub.encode_text("x");
    const std::string tap = "linear";
    const auto cap = stub.grad_of_score(img, text, std::span<const std::string>(&tap, 1));
    REQUIRE(cap.taps.size() == 1);
    CHECK(cap.taps[0].gradients.same_shape(cap.taps[0].activations));
    for (double g : cap.taps[0].gradients.values) CHECK(g == 1.0);

    // Central differences on the stub score.
    const auto& a = cap.taps[0].activations;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        FeatureStack plus = a, minus = a;
        plus.values[i] += 1e-4;
        minus.values[i] -= 1e-4;
        const double fd = (stub.score_from_activations(plus) - stub.score_from_activations(minus)) / 2e-4;
        CHECK(fd == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(stub.counter().forward_passes == 1);
    CHECK(stub.counter().backward_passes == 1);
}

TEST_CASE("residual gradient matches central differences") {
    ResidualBackbone rn(test_support::small_residual_config());
    const Image img = test_support::random_image(64, 64, 21);
    const Embedding text = rn.encode_text("a painting of a beard");
    const std::string tap = "layer4.2.relu3";
    const auto cap = rn.grad_of_score(img, text, std::span<const std::string>(&tap, 1));
    const auto& a = cap.taps[0].activations;
    const auto& g = cap.taps[0].gradients;
    CHECK(cap.score == doctest::Approx(rn.score_from_final_activations(a, text)).epsilon(1e-12));

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        FeatureStack plus = a, minus = a;
        plus.values[i] += 1e-5;
        minus.values[i] -= 1e-5;
        const double fd =
            (rn.score_from_final_activations(plus, text) - rn.score_from_final_activations(minus, text)) / 2e-5;
        num += (fd - g.values[i]) * (fd - g.values[i]);
        den += fd * fd;
    }
    CHECK(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("transformer gradient matches central differences") {
    VitBackbone vit(test_support::small_vit_config());
    const Image img = test_support::random_image(32, 32, 31);
    const Embedding text = vit.encode_text("a painting of a snake");
    const Eigen::MatrixXd tokens = vit.embed_tokens(img);

    for (int first_block : {0, vit.config().layers - 1}) {
        // Any entry point works for a derivative check.
        const Eigen::MatrixXd entry = first_block == 0 ? tokens : Eigen::MatrixXd(tokens * 0.5);
        const Eigen::MatrixXd g = vit.grad_tokens(entry, first_block, text);
        double num = 0.0, den = 0.0;
        for (Eigen::Index r = 0; r < entry.rows(); ++r)
            for (Eigen::Index c = 0; c < entry.cols(); ++c) {
                Eigen::MatrixXd plus = entry, minus = entry;
                plus(r, c) += 1e-5;
                minus(r, c) -= 1e-5;
                const double fd = (vit.score_from_tokens(plus, first_block, text) -
                                   vit.score_from_tokens(minus, first_block, text)) /
                                  2e-5;
                num += (fd - g(r, c)) * (fd - g(r, c));
                den += fd * fd;
            }
        CHECK(std::sqrt(num / den) < 1e-4);
    }
}

TEST_CASE("transformer tap gradients have the activation shape") {
    VitBackbone vit(test_support::small_vit_config());
    const Image img = test_support::random_image(32, 32, 41);
    const Embedding text = vit.encode_text("angel");
    const auto taps = vit.tap_points();
    const auto cap = vit.grad_of_score(img, text, taps);
    REQUIRE(cap.taps.size() == taps.size());
    for (const auto& t : cap.taps) {
        CHECK(t.gradients.same_shape(t.activations));
        CHECK(t.activations.channels == vit.config().width);
    }
    CHECK(vit.tap_point() == "resblocks." + std::to_string(vit.config().layers - 1) + ".ln_1");
}
