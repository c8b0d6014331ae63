#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "histofuse/graph.hpp"
#include "histofuse/losses.hpp"
#include "histofuse/models.hpp"
#include "oracles.hpp"

using namespace histofuse;

namespace {

ModelGraph tiny_dense_graph() {
    ModelGraph g;
    LayerSpec in;
    in.name = "input";
    in.kind = LayerKind::input;
    in.input_shape = {1, 1, 2};
    g.layers.push_back(in);
    g.layers.push_back(detail::make_simple(LayerKind::flatten, "flat", "input"));
    g.layers.push_back(detail::make_dense("fc", "flat", 3, false));
    g.output = "fc";
    return g;
}

}  // namespace

TEST_CASE("init_params") {
    const ModelGraph g = tiny_dense_graph();

    SECTION("biases are exactly zero, Glorot bound |w| <= sqrt(6/5) for dense 2->3") {
        const auto params = init_params<double>(g, 3);
        const double bound = std::sqrt(6.0 / 5.0);
        const auto& w = params.at("fc/kernel");
        REQUIRE(w.shape() == std::vector<std::size_t>{2, 3});
        for (std::size_t i = 0; i < w.numel(); ++i) REQUIRE(std::abs(w[i]) <= bound);
        const auto& b = params.at("fc/bias");
        for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE(b[i] == 0.0);
    }

    SECTION("the same seed yields a bitwise-identical ParamSet") {
        const auto a = init_params<float>(g, 91);
        const auto b = init_params<float>(g, 91);
        REQUIRE(a.size() == b.size());
        for (const auto& [name, t] : a) {
            const auto& u = b.at(name);
            REQUIRE(t.shape() == u.shape());
            for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == u[i]);
        }
        const auto c = init_params<float>(g, 92);
        bool any_diff = false;
        for (const auto& [name, t] : a) {
            const auto& u = c.at(name);
            for (std::size_t i = 0; i < t.numel(); ++i)
                if (t[i] != u[i]) any_diff = true;
        }
        REQUIRE(any_diff);
    }

    SECTION("batchnorm parameters start as the identity transform") {
        const BackboneConfig cfg;
        const ModelGraph fusion = build_fusion_model(2, cfg, 64);
        const auto params = init_params<float>(fusion, 5);
        const auto& gamma = params.at("s1l1_bn/gamma");
        const auto& beta = params.at("s1l1_bn/beta");
        const auto& mv = params.at("s1l1_bn/moving_var");
        for (std::size_t i = 0; i < gamma.numel(); ++i) {
            REQUIRE(gamma[i] == 1.0f);
            REQUIRE(beta[i] == 0.0f);
            REQUIRE(mv[i] == 1.0f);
        }
    }
}

TEST_CASE("binary crossentropy values") {
    auto bce_of = [](double p, int y) {
        Tape<double> t;
        const NodeId probs = t.leaf(Tensor<double>({1}, {p}));
        return t.value(bce_loss(t, probs, {y}))[0];
    };

    SECTION("perfect prediction drives the loss to (clamped) zero") {
        REQUIRE(bce_of(1.0, 1) == Catch::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));
        REQUIRE(bce_of(1.0, 1) < 1e-6);
    }

    SECTION("p=0.5 costs ln 2 for either label") {
        REQUIRE(bce_of(0.5, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
        REQUIRE(bce_of(0.5, 1) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SECTION("y=1, p=0 clamps to -ln(1e-7)") {
        const double expected = -std::log(1e-7);  // about 16.118
        REQUIRE(bce_of(0.0, 1) == Catch::Approx(expected).epsilon(1e-12));
        REQUIRE(bce_of(0.0, 1) == Catch::Approx(16.118).margin(5e-4));
    }

    SECTION("never negative, and far from zero away from perfection") {
        Rng rng(7);
        for (int i = 0; i < 200; ++i) {
            const double p = rng.uniform();
            const int y = rng.uniform() < 0.5 ? 0 : 1;
            REQUIRE(bce_of(p, y) >= 0.0);
        }
        REQUIRE(bce_of(0.9, 1) > 0.01);
    }

    SECTION("batch averaging") {
        Tape<double> t;
        const NodeId probs = t.leaf(Tensor<double>({2}, {0.5, 0.5}));
        REQUIRE(t.value(bce_loss(t, probs, {0, 1}))[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("categorical crossentropy values") {
    auto cce_of = [](std::vector<double> q, int label) {
        Tape<double> t;
        const NodeId probs = t.leaf(Tensor<double>({q.size()}, q));
        return t.value(cce_loss(t, probs, {label}))[0];
    };

    SECTION("probability 1 on the true class costs (clamped) zero") {
        REQUIRE(cce_of({1.0, 0.0, 0.0, 0.0}, 0) < 1e-6);
    }

    SECTION("uniform over 4 classes costs ln 4") {
        REQUIRE(cce_of({0.25, 0.25, 0.25, 0.25}, 2) == Catch::Approx(std::log(4.0)).epsilon(1e-12));
    }

    SECTION("q=[0.7,0.1,0.1,0.1], true class 0 costs -ln 0.7") {
        REQUIRE(cce_of({0.7, 0.1, 0.1, 0.1}, 0) == Catch::Approx(-std::log(0.7)).epsilon(1e-12));
    }

    SECTION("rows that do not sum to 1 are rejected") {
        Tape<double> t;
        const NodeId probs = t.leaf(Tensor<double>({2}, {0.7, 0.7}));
        REQUIRE_THROWS_AS(cce_loss(t, probs, {0}), ConfigError);
    }

    SECTION("one-hot targets are validated") {
        Tape<double> t;
        const NodeId probs = t.leaf(Tensor<double>({1, 2}, {0.5, 0.5}));
        REQUIRE_THROWS_AS(cce_loss_onehot(t, probs, Tensor<double>({1, 2}, {1.0, 1.0})), ConfigError);
        REQUIRE_THROWS_AS(cce_loss_onehot(t, probs, Tensor<double>({1, 2}, {0.0, 0.0})), ConfigError);
        REQUIRE_THROWS_AS(cce_loss_onehot(t, probs, Tensor<double>({1, 2}, {0.5, 0.5})), ConfigError);
        const NodeId ok = cce_loss_onehot(t, probs, Tensor<double>({1, 2}, {0.0, 1.0}));
        REQUIRE(t.value(ok)[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("l2 penalty") {
    auto penalty_of = [](std::vector<double> w, double lambda) {
        Tape<double> t;
        const NodeId weights = t.leaf(Tensor<double>({w.size()}, w));
        return t.value(l2_penalty(t, {weights}, lambda))[0];
    };

    SECTION("all-zero weights cost nothing") { REQUIRE(penalty_of({0, 0, 0}, 0.001) == 0.0); }

    SECTION("single weight 2.0 at lambda 0.001 costs 0.004 (no 1/2 factor)") {
        REQUIRE(penalty_of({2.0}, 0.001) == Catch::Approx(0.004).epsilon(1e-12));
    }

    SECTION("lambda 0 disables the penalty") {
        REQUIRE(penalty_of({3.0, -4.0}, 0.0) == 0.0);
    }

    SECTION("invariant under weight sign flips") {
        Rng rng(13);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> w(8), flipped(8);
            for (std::size_t i = 0; i < 8; ++i) {
                w[i] = rng.uniform(-2, 2);
                flipped[i] = rng.uniform() < 0.5 ? -w[i] : w[i];
            }
            REQUIRE(penalty_of(w, 0.001) == Catch::Approx(penalty_of(flipped, 0.001)).epsilon(1e-12));
        }
    }

    SECTION("only the fusion head's dense layers are flagged regularized") {
        const ModelGraph fusion = build_fusion_model(2, BackboneConfig{}, 64);
        std::vector<std::string> regularized;
        for (const auto& l : fusion.layers)
            if (l.regularized) regularized.push_back(l.name);
        REQUIRE(regularized == std::vector<std::string>{"br1_fc", "br2_fc", "br3_fc", "head_fc"});
    }
}
