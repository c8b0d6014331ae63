#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

#include "histofuse/losses.hpp"
#include "histofuse/ops.hpp"
#include "oracles.hpp"

using namespace histofuse;

namespace {

/// Generic per-op gradient check: `build` wires leaves into a scalar loss; it
/// must be a pure function of the leaf values (fixed seeds inside).
void check_op(const std::function<NodeId(Tape<double>&, const std::vector<NodeId>&)>& build,
              const std::vector<Tensor<double>>& inputs, double tol = 1e-3) {
    auto loss_fn = [&](const std::vector<Tensor<double>>& ins) {
        Tape<double> t;
        std::vector<NodeId> ids;
        for (const auto& in : ins) ids.push_back(t.leaf(in));
        return t.value(build(t, ids))[0];
    };

    Tape<double> t;
    std::vector<NodeId> ids;
    for (const auto& in : inputs) ids.push_back(t.leaf(in));
    t.backward(build(t, ids));
    std::vector<Tensor<double>> analytic;
    for (const NodeId id : ids) analytic.push_back(t.grad(id));

    const auto r = oracles::finite_difference_check(loss_fn, inputs, analytic);
    INFO(r.worst);
    REQUIRE(r.checked > 0);
    REQUIRE(r.max_rel_err < tol);
}

std::vector<double> projection(Rng& rng, std::size_t n) {
    std::vector<double> c(n);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    return c;
}

}  // namespace

TEST_CASE("gradient check: every differentiable op") {
    Rng rng(2024);

    SECTION("conv2d (input, kernels, bias)") {
        const auto x = oracles::random_tensor<double>(rng, {5, 6, 2});
        const auto k = oracles::random_tensor<double>(rng, {3, 2, 2, 3});
        const auto b = oracles::random_tensor<double>(rng, {3});
        auto proj = projection(rng, 3 * 5 * 3);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, conv2d(t, ids[0], ids[1], ids[2], 1), proj);
            },
            {x, k, b});
    }

    SECTION("conv2d with stride 2") {
        const auto x = oracles::random_tensor<double>(rng, {7, 7, 1});
        const auto k = oracles::random_tensor<double>(rng, {3, 3, 1, 2});
        const auto b = oracles::random_tensor<double>(rng, {2});
        auto proj = projection(rng, 3 * 3 * 2);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, conv2d(t, ids[0], ids[1], ids[2], 2), proj);
            },
            {x, k, b});
    }

    SECTION("maxpool2d") {
        const auto x = oracles::random_tensor<double>(rng, {6, 6, 2});
        auto proj = projection(rng, 3 * 3 * 2);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, maxpool2d(t, ids[0], 2, 2, 2, 2), proj);
            },
            {x});
    }

    SECTION("avgpool2d") {
        const auto x = oracles::random_tensor<double>(rng, {5, 5, 3});
        auto proj = projection(rng, 2 * 2 * 3);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, avgpool2d(t, ids[0], 2, 2, 2, 2), proj);
            },
            {x});
    }

    SECTION("pad2d") {
        const auto x = oracles::random_tensor<double>(rng, {3, 4, 2});
        auto proj = projection(rng, 5 * 6 * 2);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, pad2d(t, ids[0], 1), proj);
            },
            {x});
    }

    SECTION("global_avg_pool") {
        const auto x = oracles::random_tensor<double>(rng, {4, 5, 3});
        auto proj = projection(rng, 3);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, global_avg_pool(t, ids[0]), proj);
            },
            {x});
    }

    SECTION("dense (x, W, b)") {
        const auto x = oracles::random_tensor<double>(rng, {2, 6});
        const auto w = oracles::random_tensor<double>(rng, {6, 4});
        const auto b = oracles::random_tensor<double>(rng, {4});
        auto proj = projection(rng, 8);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, dense(t, ids[0], ids[1], ids[2]), proj);
            },
            {x, w, b});
    }

    SECTION("relu (inputs kept away from the kink)") {
        const auto x = oracles::random_tensor_no_kink<double>(rng, {12});
        auto proj = projection(rng, 12);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, relu(t, ids[0]), proj);
            },
            {x});
    }

    SECTION("sigmoid") {
        const auto x = oracles::random_tensor<double>(rng, {10});
        auto proj = projection(rng, 10);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, sigmoid(t, ids[0]), proj);
            },
            {x});
    }

    SECTION("softmax") {
        const auto x = oracles::random_tensor<double>(rng, {2, 5});
        auto proj = projection(rng, 10);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, softmax(t, ids[0]), proj);
            },
            {x});
    }

    SECTION("l2_normalize") {
        const auto x = oracles::random_tensor_no_kink<double>(rng, {2, 6}, 0.2);
        auto proj = projection(rng, 12);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, l2_normalize(t, ids[0]), proj);
            },
            {x});
    }

    SECTION("batchnorm train mode (x, gamma, beta)") {
        const auto x = oracles::random_tensor<double>(rng, {6, 3});
        const auto g = oracles::random_tensor<double>(rng, {3}, 0.5, 1.5);
        const auto b = oracles::random_tensor<double>(rng, {3});
        auto proj = projection(rng, 18);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                Tensor<double> rm({3}), rv = Tensor<double>::full({3}, 1.0);
                return oracles::dot_with(
                    t, batchnorm(t, ids[0], ids[1], ids[2], rm, rv, Mode::train), proj);
            },
            {x, g, b});
    }

    SECTION("batchnorm infer mode") {
        const auto x = oracles::random_tensor<double>(rng, {4, 3});
        const auto g = oracles::random_tensor<double>(rng, {3}, 0.5, 1.5);
        const auto b = oracles::random_tensor<double>(rng, {3});
        auto proj = projection(rng, 12);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                Tensor<double> rm({3}, {0.1, -0.2, 0.3});
                Tensor<double> rv({3}, {1.2, 0.8, 2.0});
                return oracles::dot_with(
                    t, batchnorm(t, ids[0], ids[1], ids[2], rm, rv, Mode::infer), proj);
            },
            {x, g, b});
    }

    SECTION("dropout with a fixed mask") {
        const auto x = oracles::random_tensor<double>(rng, {40});
        auto proj = projection(rng, 40);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                Rng mask_rng(99);  // same mask on every evaluation
                return oracles::dot_with(t, dropout(t, ids[0], 0.45, Mode::train, mask_rng), proj);
            },
            {x});
    }

    SECTION("concat") {
        const auto a = oracles::random_tensor<double>(rng, {2, 3});
        const auto b = oracles::random_tensor<double>(rng, {2, 5});
        auto proj = projection(rng, 16);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, concat(t, {ids[0], ids[1]}), proj);
            },
            {a, b});
    }

    SECTION("flatten") {
        const auto x = oracles::random_tensor<double>(rng, {3, 2, 2});
        auto proj = projection(rng, 12);
        check_op(
            [proj](Tape<double>& t, const std::vector<NodeId>& ids) {
                return oracles::dot_with(t, flatten(t, ids[0]), proj);
            },
            {x});
    }

    SECTION("sum_squares") {
        const auto x = oracles::random_tensor<double>(rng, {9});
        check_op([](Tape<double>& t, const std::vector<NodeId>& ids) { return sum_squares(t, ids[0]); },
                 {x});
    }

    SECTION("binary crossentropy through sigmoid") {
        const auto logits = oracles::random_tensor<double>(rng, {6});
        const std::vector<int> labels{1, 0, 1, 1, 0, 0};
        check_op(
            [labels](Tape<double>& t, const std::vector<NodeId>& ids) {
                return bce_loss(t, sigmoid(t, ids[0]), labels);
            },
            {logits});
    }

    SECTION("categorical crossentropy through softmax") {
        const auto logits = oracles::random_tensor<double>(rng, {4, 3});
        const std::vector<int> labels{0, 2, 1, 2};
        check_op(
            [labels](Tape<double>& t, const std::vector<NodeId>& ids) {
                return cce_loss(t, softmax(t, ids[0]), labels);
            },
            {logits});
    }
}

TEST_CASE("gradient check: complete fusion head") {
    // The multi-scale head exactly as built on top of the three taps:
    // per tap GAP -> L2 normalize -> dense 64 -> ReLU -> batchnorm, concat,
    // dense 16 -> ReLU -> dropout -> dense 2 -> softmax -> crossentropy,
    // plus the L2 penalty on the regularized dense kernels.
    Rng rng(555);
    const std::size_t batch = 2;
    const std::vector<std::size_t> tap_channels{8, 10, 12};
    const std::size_t dense_width = 8;  // scaled-down 64 to keep FD fast
    const std::size_t head_width = 6;
    const std::vector<int> labels{0, 1};

    std::vector<Tensor<double>> inputs;
    for (const std::size_t c : tap_channels)
        inputs.push_back(oracles::random_tensor<double>(rng, {batch, 4, 5, c}, 0.05, 1.0));
    for (const std::size_t c : tap_channels) {
        inputs.push_back(oracles::random_tensor<double>(rng, {c, dense_width}, -0.5, 0.5));  // W
        inputs.push_back(oracles::random_tensor<double>(rng, {dense_width}, -0.1, 0.1));     // b
        inputs.push_back(oracles::random_tensor<double>(rng, {dense_width}, 0.5, 1.5));      // gamma
        inputs.push_back(oracles::random_tensor<double>(rng, {dense_width}, -0.2, 0.2));     // beta
    }
    inputs.push_back(oracles::random_tensor<double>(rng, {3 * dense_width, head_width}, -0.5, 0.5));
    inputs.push_back(oracles::random_tensor<double>(rng, {head_width}, -0.1, 0.1));
    inputs.push_back(oracles::random_tensor<double>(rng, {head_width, 2}, -0.5, 0.5));
    inputs.push_back(oracles::random_tensor<double>(rng, {2}, -0.1, 0.1));

    auto build = [&](Tape<double>& t, const std::vector<NodeId>& ids) {
        std::vector<NodeId> branches;
        std::vector<NodeId> regularized;
        for (std::size_t i = 0; i < 3; ++i) {
            const NodeId tap = ids[i];
            const NodeId w = ids[3 + i * 4], b = ids[3 + i * 4 + 1];
            const NodeId gamma = ids[3 + i * 4 + 2], beta = ids[3 + i * 4 + 3];
            Tensor<double> rm({dense_width}), rv = Tensor<double>::full({dense_width}, 1.0);
            NodeId v = global_avg_pool(t, tap);
            v = l2_normalize(t, v);
            v = dense(t, v, w, b);
            regularized.push_back(w);
            v = relu(t, v);
            v = batchnorm(t, v, gamma, beta, rm, rv, Mode::train);
            branches.push_back(v);
        }
        NodeId fused = concat(t, branches);
        const NodeId hw = ids[15], hb = ids[16], ow = ids[17], ob = ids[18];
        fused = dense(t, fused, hw, hb);
        regularized.push_back(hw);
        fused = relu(t, fused);
        Rng drop_rng(31337);
        fused = dropout(t, fused, 0.45, Mode::train, drop_rng);
        fused = dense(t, fused, ow, ob);
        const NodeId probs = softmax(t, fused);
        const NodeId data_loss = cce_loss(t, probs, labels);
        const NodeId penalty = l2_penalty(t, regularized, 0.001);
        return weighted_sum(t, {data_loss, penalty}, {1.0, 1.0});
    };

    auto loss_fn = [&](const std::vector<Tensor<double>>& ins) {
        Tape<double> t;
        std::vector<NodeId> ids;
        for (const auto& in : ins) ids.push_back(t.leaf(in));
        return t.value(build(t, ids))[0];
    };

    Tape<double> t;
    std::vector<NodeId> ids;
    for (const auto& in : inputs) ids.push_back(t.leaf(in));
    t.backward(build(t, ids));
    std::vector<Tensor<double>> analytic;
    for (const NodeId id : ids) analytic.push_back(t.grad(id));

    const auto r = oracles::finite_difference_check(loss_fn, inputs, analytic);
    INFO(r.worst);
    REQUIRE(r.checked > 1000);
    REQUIRE(r.max_rel_err < 1e-3);
}
