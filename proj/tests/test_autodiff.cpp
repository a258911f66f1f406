#include <gtest/gtest.h>

#include "dosegnn/autodiff.hpp"
#include "dosegnn/nn.hpp"
#include "support.hpp"

using namespace dosegnn;
using namespace dosegnn::ad;
using testing_support::gradient_check;
using testing_support::project;
using testing_support::random_away_from_zero;
using testing_support::random_matrix;

namespace {
constexpr double kTol = 1e-4;
}

TEST(Autodiff, AddMulScaleGradients) {
    SplitMix64 rng(1);
    const auto a = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4);
    EXPECT_LE(gradient_check([](Tape& t, const auto& x) { return project(t, add(x[0], x[1]), 1); }, {a, b}), kTol);
    EXPECT_LE(gradient_check([](Tape& t, const auto& x) { return project(t, mul(x[0], x[1]), 2); }, {a, b}), kTol);
    EXPECT_LE(gradient_check([](Tape& t, const auto& x) { return project(t, scale(x[0], -2.5), 3); }, {a}), kTol);
}

TEST(Autodiff, MatmulAndLinearGradients) {
    SplitMix64 rng(2);
    const auto x = random_matrix(rng, 5, 3), w = random_matrix(rng, 3, 4), b = random_matrix(rng, 1, 4);
    EXPECT_LE(gradient_check([](Tape& t, const auto& v) { return project(t, matmul(v[0], v[1]), 4); }, {x, w}), kTol);
    EXPECT_LE(
        gradient_check([](Tape& t, const auto& v) { return project(t, linear(v[0], v[1], v[2]), 5); }, {x, w, b}),
        kTol);
}

TEST(Autodiff, ConcatMeanRowsSumGradients) {
    SplitMix64 rng(3);
    const auto a = random_matrix(rng, 4, 2), b = random_matrix(rng, 4, 3);
    EXPECT_LE(gradient_check([](Tape& t, const auto& v) { return project(t, concat(v[0], v[1]), 6); }, {a, b}), kTol);
    EXPECT_LE(gradient_check([](Tape& t, const auto& v) { return project(t, mean_rows(v[0]), 7); }, {a}), kTol);
    EXPECT_LE(gradient_check([](Tape&, const auto& v) { return sum(v[0]); }, {a}), kTol);
}

TEST(Autodiff, ReluGradientAwayFromKink) {
    SplitMix64 rng(4);
    const auto a = random_away_from_zero(rng, 6, 5);
    EXPECT_LE(gradient_check([](Tape& t, const auto& v) { return project(t, relu(v[0]), 8); }, {a}), kTol);
}

TEST(Autodiff, SegmentMeanGradient) {
    SplitMix64 rng(5);
    const auto a = random_matrix(rng, 6, 3);
    const std::vector<std::size_t> offsets{0, 2, 3, 7};
    const std::vector<std::uint32_t> idx{0, 5, 2, 1, 1, 3, 4};
    EXPECT_LE(gradient_check(
                  [&](Tape& t, const auto& v) { return project(t, segment_mean(v[0], offsets, idx), 9); }, {a}),
              kTol);
}

TEST(Autodiff, MseLossGradientBothSides) {
    SplitMix64 rng(6);
    const auto a = random_matrix(rng, 7, 1), b = random_matrix(rng, 7, 1);
    EXPECT_LE(gradient_check([](Tape&, const auto& v) { return mse_loss(v[0], v[1]); }, {a, b}), kTol);
}

TEST(Autodiff, Conv3dGradient) {
    SplitMix64 rng(7);
    const int p = 4, q = 2, k = 3;
    const auto x = random_matrix(rng, 2, p * p * p), w = random_matrix(rng, k, q * q * q), b = random_matrix(rng, 1, k);
    EXPECT_LE(gradient_check(
                  [&](Tape& t, const auto& v) { return project(t, conv3d_valid(v[0], v[1], v[2], p, q), 10); },
                  {x, w, b}),
              kTol);
}

TEST(Autodiff, Conv3dMatchesDirectLoop) {
    SplitMix64 rng(8);
    const int p = 3, q = 2, o = 2;
    const auto x = random_matrix(rng, 1, 27), w = random_matrix(rng, 1, 8), b = random_matrix(rng, 1, 1);
    Tape tape;
    const auto y = conv3d_valid(tape.constant(x), tape.constant(w), tape.constant(b), p, q).value();
    ASSERT_EQ(y.cols(), o * o * o);
    for (int z = 0; z < o; ++z)
        for (int yy = 0; yy < o; ++yy)
            for (int xx = 0; xx < o; ++xx) {
                double acc = b(0, 0);
                for (int c = 0; c < q; ++c)
                    for (int bb = 0; bb < q; ++bb)
                        for (int a = 0; a < q; ++a)
                            acc += w(0, a + q * (bb + q * c)) * x(0, (xx + a) + p * ((yy + bb) + p * (z + c)));
                EXPECT_NEAR(y(0, xx + o * (yy + o * z)), acc, 1e-12);
            }
}

TEST(Autodiff, ComposedExpressionGradient) {
    SplitMix64 rng(9);
    const auto x = random_matrix(rng, 4, 3), w = random_matrix(rng, 3, 3), target = random_matrix(rng, 4, 3);
    auto f = [&](Tape& t, const std::vector<Tensor>& v) {
        Tensor h = add(matmul(v[0], v[1]), v[0]);
        h = mul(h, h);
        return mse_loss(scale(h, 0.5), t.constant(target));
    };
    EXPECT_LE(gradient_check(f, {x, w}), kTol);
}

TEST(Autodiff, ShapeMismatchThrowsNamingOp) {
    Tape t;
    auto a = t.constant(Matrix::Zero(2, 3));
    auto b = t.constant(Matrix::Zero(3, 2));
    try {
        add(a, b);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    }
    EXPECT_THROW(matmul(a, a), std::invalid_argument);
    EXPECT_THROW(concat(a, b), std::invalid_argument);
    EXPECT_THROW(t.backward(a), std::invalid_argument);
}

TEST(Autodiff, VariableGradientsAccumulateAcrossBackward) {
    Tape t;
    Matrix m(1, 1);
    m(0, 0) = 3.0;
    auto x = t.variable(m);
    auto y = mul(x, x);
    t.backward(y);
    EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
    t.backward(y);
    EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(Autodiff, ParameterGradFlowsIntoParameter) {
    Parameter p("w", 2, 2);
    p.value << 1, 2, 3, 4;
    Tape t;
    auto y = sum(mul(t.parameter(p), t.parameter(p)));
    t.backward(y);
    EXPECT_DOUBLE_EQ(p.grad(1, 1), 8.0);
    p.zero_grad();
    EXPECT_DOUBLE_EQ(p.grad.sum(), 0.0);
}

TEST(Autodiff, ConstantsGetNoGradient) {
    Tape t;
    auto c = t.constant(Matrix::Ones(2, 2));
    auto v = t.variable(Matrix::Ones(2, 2));
    t.backward(sum(mul(c, v)));
    EXPECT_FALSE(c.requires_grad());
    EXPECT_TRUE(v.requires_grad());
    EXPECT_DOUBLE_EQ(c.grad().sum(), 0.0);
    EXPECT_DOUBLE_EQ(v.grad().sum(), 4.0);
}

TEST(Nn, GlorotBoundsAndZeroBias) {
    Mlp mlp("m", {10, 6, 1});
    std::vector<Parameter*> ps;
    mlp.collect(ps);
    SplitMix64 rng(1);
    glorot_init(ps, rng);
    const double bound = std::sqrt(6.0 / 16.0);
    EXPECT_LE(mlp.layers()[0].weight.value.cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(mlp.layers()[0].weight.value.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(mlp.layers()[0].bias.value.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(mlp.in_dim(), 10);
    EXPECT_EQ(mlp.out_dim(), 1);
}

TEST(Nn, MlpHasNoActivationAfterLastLayer) {
    Mlp mlp("m", {1, 1});
    mlp.layers()[0].weight.value(0, 0) = -2.0;
    Tape t;
    Matrix x(1, 1);
    x(0, 0) = 3.0;
    EXPECT_DOUBLE_EQ(mlp.forward(t, t.constant(x)).value()(0, 0), -6.0);
}
