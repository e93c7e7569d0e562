#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "meltpool/ops.hpp"
#include "meltpool/optim.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace meltpool;
using meltpool::testing::gradient_check;
using meltpool::testing::random_tensor;

namespace {

std::vector<double> as_double(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(TensorTest, RejectsInconsistentShape) {
    EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
    EXPECT_THROW(Tensor<float>({2, 0}, {}), ShapeError);
}

TEST(TensorTest, MatmulIdentity) {
    std::mt19937_64 rng(1);
    auto a = random_tensor<float>({3, 3}, rng);
    auto eye = Tensor<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto c = matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(c[i], a[i]);
}

TEST(TensorTest, MatmulMatchesTripleLoop) {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 10; ++rep) {
        auto a = random_tensor<float>({4, 5}, rng);
        auto b = random_tensor<float>({5, 3}, rng);
        auto c = matmul(a, b);
        auto expect = oracle::matmul(as_double(a), as_double(b), 4, 5, 3);
        for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(c[i], expect[i], 1e-6);
    }
}

TEST(TensorTest, ShapeErrorNamesBothShapes) {
    auto a = Tensor<float>::zeros({4, 5});
    auto b = Tensor<float>::zeros({6, 3});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[6, 3]"), std::string::npos) << msg;
    }
    EXPECT_THROW(add(Tensor<float>::zeros({2, 2}), Tensor<float>::zeros({4})), ShapeError);
    EXPECT_THROW(concat<float>({Tensor<float>::zeros({2, 2}), Tensor<float>::zeros({3, 3})}, 1), ShapeError);
}

TEST(TensorTest, ScalarBroadcastOnly) {
    auto x = Tensor<float>({3}, {1, 2, 3});
    auto y = mul(x, Tensor<float>::scalar(2.0f));
    EXPECT_EQ(y[2], 6.0f);
    auto z = add(Tensor<float>::scalar(1.0f), x);
    EXPECT_EQ(z[0], 2.0f);
}

TEST(TensorTest, Relu) {
    auto y = relu(Tensor<float>({3}, {-1, 0, 2}));
    EXPECT_EQ(y[0], 0.0f);
    EXPECT_EQ(y[1], 0.0f);
    EXPECT_EQ(y[2], 2.0f);
}

TEST(TensorTest, SoftmaxSingleElementIsOne) {
    auto y = softmax(Tensor<float>({1}, {3.7f}), 0);
    EXPECT_EQ(y[0], 1.0f);
}

TEST(TensorTest, SoftmaxRowsSumToOne) {
    std::mt19937_64 rng(3);
    auto x = random_tensor<double>({3, 4, 5}, rng, -5, 5);
    for (long axis : {0L, 1L, 2L}) {
        auto y = softmax(x, axis);
        const Shape& s = x.shape();
        std::size_t outer = 1, inner = 1;
        for (long i = 0; i < axis; ++i) outer *= s[i];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                double total = 0.0;
                for (std::size_t e = 0; e < s[axis]; ++e) total += y[(o * s[axis] + e) * inner + in];
                EXPECT_NEAR(total, 1.0, 1e-12);
            }
    }
    EXPECT_THROW(softmax(x, 3), ShapeError);
}

TEST(TensorTest, ConcatSliceTransposeReshape) {
    auto a = Tensor<float>({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<float>({2, 1}, {5, 6});
    auto c = concat<float>({a, b}, 1);
    EXPECT_EQ(c.shape(), (Shape{2, 3}));
    EXPECT_EQ(std::vector<float>(c.values().begin(), c.values().end()), (std::vector<float>{1, 2, 5, 3, 4, 6}));
    auto s = slice(c, 1, 1, 2);
    EXPECT_EQ(std::vector<float>(s.values().begin(), s.values().end()), (std::vector<float>{2, 5, 4, 6}));
    auto t = transpose(a);
    EXPECT_EQ(std::vector<float>(t.values().begin(), t.values().end()), (std::vector<float>{1, 3, 2, 4}));
    EXPECT_THROW(reshape(a, {3}), ShapeError);
    EXPECT_THROW(slice(a, 0, 1, 2), ShapeError);
}

TEST(BackwardTest, SquareSumGradient) {
    auto x = Tensor<float>({3}, {1, 2, 3}, true);
    Tape<float> tape;
    auto loss = sum(mul(x, x));
    tape.backward(loss);
    EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
    EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
    EXPECT_FLOAT_EQ(x.grad()[2], 6.0f);
}

TEST(BackwardTest, UnreachableLeafGetsZero) {
    auto x = Tensor<float>({2}, {1, 2}, true);
    auto y = Tensor<float>({2}, {3, 4}, true);
    Tape<float> tape;
    auto side = sum(square(y));
    auto loss = sum(square(x));
    tape.backward(loss);
    ASSERT_TRUE(y.has_grad());
    EXPECT_EQ(y.grad()[0], 0.0f);
    EXPECT_EQ(y.grad()[1], 0.0f);
    (void)side;
}

TEST(BackwardTest, NonScalarLossRejected) {
    auto x = Tensor<float>({2}, {1, 2}, true);
    Tape<float> tape;
    auto y = square(x);
    EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(BackwardTest, NothingRecordedWithoutTape) {
    auto x = Tensor<float>({2}, {1, 2}, true);
    auto y = square(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(BackwardTest, MultipleUsesAccumulate) {
    auto x = Tensor<double>({1}, {3.0}, true);
    Tape<double> tape;
    auto loss = sum(add(mul(x, x), mul(x, Tensor<double>::scalar(5.0))));
    tape.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 11.0);
}

TEST(BackwardTest, PrimitiveGradientsMatchFiniteDifferences) {
    for (unsigned seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rng(seed);
        auto a = random_tensor<double>({3, 4}, rng);
        auto b = random_tensor<double>({4, 2}, rng);
        auto c = random_tensor<double>({3, 4}, rng);
        auto bias = random_tensor<double>({2}, rng);
        auto r = gradient_check<double>(
            {a, b, c, bias},
            [](std::vector<Tensor<double>>& in) {
                auto h = meltpool::tanh(add(mul(in[0], in[2]), sigmoid(in[2])));
                auto m = add_bias(matmul(h, in[1]), in[3]);
                auto s = softmax(m, 0);
                auto e = meltpool::exp(scale(slice(concat<double>({m, s}, 1), 1, 1, 3), 0.5));
                return reshape(transpose(sub(e, Tensor<double>::scalar(0.25))), {9});
            },
            seed);
        EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
    }
}

TEST(BackwardTest, ReductionGradients) {
    std::mt19937_64 rng(4);
    auto x = random_tensor<double>({2, 3, 4}, rng);
    auto y = random_tensor<double>({2, 4, 3}, rng);
    auto r = gradient_check<double>({x, y}, [](std::vector<Tensor<double>>& in) {
        auto bm = batched_matmul(in[0], in[1]);
        return concat<double>({reshape(mean_axis(bm, 1), {6}), mean(in[0]), sum(in[1])}, 0);
    });
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(BackwardTest, Linearity) {
    std::mt19937_64 rng(5);
    auto x = random_tensor<double>({5}, rng);
    const double a = 0.7, b = -1.3;
    auto grad_of = [&](auto&& loss_fn) {
        auto leaf = x.clone();
        leaf.set_requires_grad(true);
        Tape<double> tape;
        tape.backward(loss_fn(leaf));
        return std::vector<double>(leaf.grad().begin(), leaf.grad().end());
    };
    auto f = [](const Tensor<double>& v) { return sum(meltpool::tanh(v)); };
    auto g = [](const Tensor<double>& v) { return sum(square(v)); };
    auto gf = grad_of(f);
    auto gg = grad_of(g);
    auto gc = grad_of([&](const Tensor<double>& v) {
        return add(scale(f(v), a), scale(g(v), b));
    });
    for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(BackwardTest, DeterministicAcrossRuns) {
    auto run = [] {
        std::mt19937_64 rng(11);
        auto w = random_tensor<float>({6, 6}, rng);
        w.set_requires_grad(true);
        auto x = random_tensor<float>({4, 6}, rng);
        Tape<float> tape;
        tape.backward(mean(sigmoid(matmul(x, w))));
        return std::vector<float>(w.grad().begin(), w.grad().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(FiniteCheckTest, FlagsNonFiniteOutputs) {
    auto x = Tensor<float>({1}, {1000.0f});
    EXPECT_NO_THROW(meltpool::exp(x));
    FiniteCheckScope scope;
    EXPECT_THROW(meltpool::exp(x), NumericalError);
}

TEST(MseTest, Basics) {
    auto p = Tensor<float>({3}, {1, 2, 3});
    EXPECT_EQ(mse(p, p.clone()).item(), 0.0f);
    EXPECT_EQ(mse(Tensor<float>({1}, {0}), Tensor<float>({1}, {2})).item(), 4.0f);
    EXPECT_THROW(mse(p, Tensor<float>::zeros({2})), ShapeError);
}

TEST(MseTest, MatchesScalarLoop) {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 10; ++rep) {
        auto p = random_tensor<double>({8}, rng);
        auto t = random_tensor<double>({8}, rng);
        double expect = 0.0;
        for (std::size_t i = 0; i < 8; ++i) expect += (p[i] - t[i]) * (p[i] - t[i]);
        expect /= 8.0;
        EXPECT_NEAR(mse(p, t).item(), expect, 1e-7);
    }
}

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
    auto p = Tensor<float>({3}, {1, -2, 3}, true);
    p.zero_grad();
    AdamState<float> state;
    std::vector<Tensor<float>> params{p};
    adam_step<float>(params, state, 0.01f);
    EXPECT_EQ(p[0], 1.0f);
    EXPECT_EQ(p[1], -2.0f);
    EXPECT_EQ(state.step, 1);
    EXPECT_FALSE(p.has_grad());
}

TEST(AdamTest, FirstStepMatchesHandOracle) {
    // Fresh state: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
    for (double g : {0.5, -3.0, 1e-3}) {
        auto p = Tensor<double>({1}, {2.0}, true);
        p.mutable_grad()[0] = g;
        AdamState<double> state;
        std::vector<Tensor<double>> params{p};
        adam_step<double>(params, state, 0.1);
        EXPECT_NEAR(p[0], 2.0 - 0.1 * g / (std::abs(g) + 1e-8), 1e-12);
    }
}

TEST(AdamTest, ConvergesOnParabola) {
    auto x = Tensor<double>({1}, {1.0}, true);
    AdamState<double> state;
    std::vector<Tensor<double>> params{x};
    for (int i = 0; i < 100; ++i) {
        Tape<double> tape;
        tape.backward(sum(square(x)));
        adam_step<double>(params, state, 0.1);
    }
    EXPECT_LT(std::abs(x[0]), 0.05);
}

TEST(AdamTest, MissingGradientNamesParameter) {
    auto p = Tensor<float>({1}, {1}, true);
    p.set_name("head/dense/kernel");
    AdamState<float> state;
    std::vector<Tensor<float>> params{p};
    try {
        adam_step<float>(params, state, 0.1f);
        FAIL();
    } catch (const std::logic_error& e) {
        EXPECT_NE(std::string(e.what()).find("head/dense/kernel"), std::string::npos);
    }
}

TEST(AdamTest, SecondMomentNonNegative) {
    std::mt19937_64 rng(9);
    auto p = random_tensor<double>({16}, rng);
    p.set_requires_grad(true);
    AdamState<double> state;
    std::vector<Tensor<double>> params{p};
    for (int i = 0; i < 5; ++i) {
        auto g = random_tensor<double>({16}, rng, -10, 10);
        std::copy(g.values().begin(), g.values().end(), p.mutable_grad().begin());
        adam_step<double>(params, state, 0.01);
        for (double v : state.v[0]) EXPECT_GE(v, 0.0);
    }
}
