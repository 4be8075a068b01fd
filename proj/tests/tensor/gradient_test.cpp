#include <gtest/gtest.h>

#include <functional>

#include "drfuser/gradcheck.hpp"
#include "drfuser/ops.hpp"
#include "test_util.hpp"

using namespace drfuser;
using drfuser::testing::random_tensor;

namespace {

constexpr int kSeeds = 10;
constexpr double kTol = 1e-3;

// Contracts an op output with a fixed random weighting so every output
// coordinate contributes a distinct amount to the scalar.
TensorD project(const TensorD& y, std::uint64_t seed) {
    Rng rng(seed);
    auto r = random_tensor<double>(y.shape(), rng);
    return sum(mul(y, r));
}

void expect_gradcheck(const std::function<TensorD()>& f, std::vector<TensorD> params) {
    auto r = check_gradients(f, params);
    EXPECT_LT(r.max_relative_error, kTol);
    EXPECT_GT(r.coordinates, 0u);
}

}  // namespace

TEST(GradCheck, ElementwisePrimitives) {
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(100 + s);
        auto a = random_tensor<double>({2, 3, 2}, rng, -2, 2, true);
        auto b = random_tensor<double>({2, 3, 2}, rng, -2, 2, true);
        expect_gradcheck([&] { return project(add(a, b), s); }, {a, b});
        expect_gradcheck([&] { return project(sub(a, b), s); }, {a, b});
        expect_gradcheck([&] { return project(mul(a, b), s); }, {a, b});
        expect_gradcheck([&] { return project(scale(a, -1.7), s); }, {a});
        expect_gradcheck([&] { return project(relu(a), s); }, {a});
        expect_gradcheck([&] { return project(sigmoid(a), s); }, {a});
        expect_gradcheck([&] { return mean(mul(a, a)); }, {a});
        expect_gradcheck([&] { return sum(mul(a, b)); }, {a, b});
    }
}

TEST(GradCheck, DenseAndShapePrimitives) {
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(200 + s);
        auto a = random_tensor<double>({3, 4}, rng, -1, 1, true);
        auto b = random_tensor<double>({4, 2}, rng, -1, 1, true);
        auto w = random_tensor<double>({5, 4}, rng, -1, 1, true);
        auto bias = random_tensor<double>({5}, rng, -1, 1, true);
        expect_gradcheck([&] { return project(matmul(a, b), s); }, {a, b});
        expect_gradcheck([&] { return project(linear(a, w, bias), s); }, {a, w, bias});
        expect_gradcheck([&] { return project(softmax(a), s); }, {a});
        expect_gradcheck([&] { return project(reshape(a, {2, 6}), s); }, {a});
        expect_gradcheck([&] { return project(dropout(a, 0.75, 77 + s, Mode::train), s); }, {a});
        auto c = random_tensor<double>({3, 2}, rng, -1, 1, true);
        expect_gradcheck([&] { return project(concat_channels<double>({a, c}), s); }, {a, c});
    }
}

TEST(GradCheck, ConvPoolAndNormPrimitives) {
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(300 + s);
        auto x = random_tensor<double>({2, 2, 5, 5}, rng, -1, 1, true);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng, -1, 1, true);
        auto b = random_tensor<double>({3}, rng, -1, 1, true);
        const std::size_t stride = 1 + static_cast<std::size_t>(s % 2);
        const std::size_t pad = static_cast<std::size_t>(s % 3 == 0 ? 0 : 1);
        expect_gradcheck([&] { return project(conv2d(x, w, b, {stride, pad}), s); }, {x, w, b});
        auto w1 = random_tensor<double>({4, 2, 1, 1}, rng, -1, 1, true);
        expect_gradcheck([&] { return project(conv2d(x, w1, TensorD{}), s); }, {x, w1});
        expect_gradcheck([&] { return project(max_pool2d(x, {3, 2, 1}), s); }, {x});

        auto g = random_tensor<double>({2}, rng, 0.5, 1.5, true);
        auto be = random_tensor<double>({2}, rng, -1, 1, true);
        auto rm = TensorD::zeros({2}), rv = TensorD::full({2}, 1.0);
        expect_gradcheck(
            [&] { return project(batch_norm2d(x, g, be, rm, rv, {Mode::train}), s); }, {x, g, be});
        expect_gradcheck(
            [&] { return project(batch_norm2d(x, g, be, rm, rv, {Mode::eval}), s); }, {x, g, be});

        auto gate = random_tensor<double>({2, 1, 5, 5}, rng, 0, 1, true);
        expect_gradcheck([&] { return project(gate_sites(x, gate), s); }, {x, gate});
    }
}

TEST(GradCheck, ConvBnReluLinearChain) {
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(400 + s);
        auto x = random_tensor<double>({3, 2, 6, 6}, rng, -1, 1, false);
        auto w = random_tensor<double>({4, 2, 3, 3}, rng, -0.5, 0.5, true);
        auto cb = random_tensor<double>({4}, rng, -0.1, 0.1, true);
        auto g = random_tensor<double>({4}, rng, 0.5, 1.5, true);
        auto be = random_tensor<double>({4}, rng, -0.5, 0.5, true);
        auto lw = random_tensor<double>({2, 4 * 3 * 3}, rng, -0.5, 0.5, true);
        auto lb = random_tensor<double>({2}, rng, -0.5, 0.5, true);
        auto rm = TensorD::zeros({4}), rv = TensorD::full({4}, 1.0);
        auto f = [&] {
            auto h = conv2d(x, w, cb, {2, 1});
            h = relu(batch_norm2d(h, g, be, rm, rv, {Mode::train}));
            auto y = linear(reshape(h, {3, 4 * 3 * 3}), lw, lb);
            return mean(mul(y, y));
        };
        expect_gradcheck(f, {w, cb, g, be, lw, lb});
    }
}

TEST(GradCheck, FiniteDifferenceAgreesWithBackwardOnTwoLayerNet) {
    Rng rng(500);
    auto x = random_tensor<double>({4, 3}, rng);
    auto w1 = random_tensor<double>({5, 3}, rng, -1, 1, true);
    auto b1 = random_tensor<double>({5}, rng, -1, 1, true);
    auto w2 = random_tensor<double>({1, 5}, rng, -1, 1, true);
    auto b2 = random_tensor<double>({1}, rng, -1, 1, true);
    auto f = [&] { return mean(sigmoid(linear(sigmoid(linear(x, w1, b1)), w2, b2))); };
    std::vector<TensorD> params{w1, b1, w2, b2};
    f().backward();
    NoGradGuard ng;
    auto numeric = finite_difference_grad([&] { return f().item(); }, params, 1e-5);
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].numel(); ++i)
            EXPECT_LT(relative_error(params[t].grad()[i], numeric[t][i]), 1e-3);
}

TEST(GradCheck, KinkAwareDifferenceShrinksPastNearbyKink) {
    // relu(x) evaluated 3e-7 to the right of its kink: a 1e-5 stencil sees half of each side
    auto x = TensorD::from_data({1}, {3e-7}, true);
    auto f = [&] { return sum(relu(x)).item(); };
    std::vector<TensorD> params{x};
    const auto plain = finite_difference_grad(f, params, 1e-5);
    EXPECT_GT(std::abs(plain[0][0] - 1.0), 0.4);
    EXPECT_NEAR(kink_aware_difference(f, params[0], 0), 1.0, 1e-9);
    EXPECT_EQ(x[0], 3e-7);

    auto s = TensorD::from_data({1}, {0.3}, true);
    auto g = [&] { return sum(sigmoid(s)).item(); };
    const double y = 1.0 / (1.0 + std::exp(-0.3));
    EXPECT_NEAR(kink_aware_difference(g, s, 0), y * (1.0 - y), 1e-9);
}
