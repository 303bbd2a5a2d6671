// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <unordered_set>

#include "mole/errors.hpp"
#include "mole/gradcheck.hpp"
#include "mole/ops.hpp"
#include "test_util.hpp"

namespace mole {
namespace {

using testing::gradient_error;
using testing::random_tensor;

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
            c.data()[i * n + j] = acc;
        }
    return c;
}

TEST(Matmul, IdentityAndZero) {
    const Tensor rhs = Tensor::from_rows({{5, 6}, {7, 8}});
    const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
    auto out = ops::matmul(id, rhs);
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{5, 6, 7, 8}));
    auto zero = ops::matmul(Tensor({2, 2}), rhs);
    for (double v : zero.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, HandComputedProduct) {
    auto out = ops::matmul(Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{5, 6}, {7, 8}}));
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, MismatchNamesBothShapes) {
    try {
        ops::matmul(Tensor({2, 3}), Tensor({4, 5}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x5]"), std::string::npos);
    }
}

TEST(Matmul, AgreesWithTripleLoopOnRandomShapes) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = random_tensor({m, k}, rng, -1, 1, false);
        auto b = random_tensor({k, n}, rng, -1, 1, false);
        auto fast = ops::matmul(a, b);
        auto slow = naive_matmul(a, b);
        for (std::size_t i = 0; i < fast.size(); ++i) ASSERT_EQ(fast.data()[i], slow.data()[i]);
        auto nt = ops::matmul_nt(a, ops::transpose(b));
        for (std::size_t i = 0; i < nt.size(); ++i) ASSERT_NEAR(nt.data()[i], slow.data()[i], 1e-12);
    }
}

TEST(Softmax, ReferenceValues) {
    auto u = ops::softmax(Tensor({3}, {0, 0, 0}));
    for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    EXPECT_EQ(ops::softmax(Tensor({1}, {-42.5})).item(), 1.0);
    auto w = ops::softmax(Tensor({2}, {std::log(3.0), 0.0}));
    EXPECT_NEAR(w.data()[0], 0.75, 1e-15);
    EXPECT_NEAR(w.data()[1], 0.25, 1e-15);
}

TEST(Softmax, ScalarInputIsShapeError) { EXPECT_THROW(ops::softmax(Tensor::scalar(1.0)), ShapeError); }

TEST(Softmax, NormalizedAndShiftInvariant) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> shift(-50, 50);
    for (int trial = 0; trial < 500; ++trial) {
        auto z = random_tensor({4, 7}, rng, -20, 20, false);
        const double c = shift(rng);
        Tensor zc = z.clone();
        for (auto& v : zc.data()) v += c;
        auto p = ops::softmax(z);
        auto q = ops::softmax(zc);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                const double v = p.data()[r * 7 + j];
                ASSERT_GE(v, 0.0);
                s += v;
                ASSERT_NEAR(v, q.data()[r * 7 + j], 1e-12);
            }
            ASSERT_LT(std::abs(s - 1.0), 1e-12);
        }
    }
}

TEST(Backward, LinearAndQuadratic) {
    Tensor x({3}, {1, 2, 3}, true);
    ops::sum(x).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));

    Tensor y({3}, {1, 2, 3}, true);
    ops::sum(ops::mul(y, y)).backward();
    EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, DetachedInputGetsNoGradient) {
    Tensor x({3}, {1, 2, 3}, true);
    Tensor other({3}, {4, 5, 6}, true);
    ops::sum(ops::mul(x.detach(), other)).backward();
    EXPECT_FALSE(x.has_grad());
    EXPECT_TRUE(other.has_grad());
}

TEST(Backward, NonScalarIsContractError) {
    Tensor x({3}, {1, 2, 3}, true);
    EXPECT_THROW(ops::scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, GradientsAccumulateAcrossUsesAndCalls) {
    Tensor x({2}, {1.5, -2.0}, true);
    // x used twice in one graph: d/dx sum(x + x) = 2
    ops::sum(ops::add(x, x)).backward();
    EXPECT_EQ(x.grad()[0], 2.0);
    ops::sum(x).backward();
    EXPECT_EQ(x.grad()[0], 3.0);
    x.zero_grad();
    EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(ComputeGraph, TopologicalAndVisitsEachNodeOnce) {
    Tensor x({2, 2}, {1, 2, 3, 4}, true);
    Tensor a = ops::scale(x, 2.0);
    Tensor b = ops::matmul(a, a);  // diamond: a feeds both operands
    Tensor c = ops::add(b, a);
    Tensor loss = ops::sum(c);
    auto g = ComputeGraph::trace(loss);
    std::unordered_set<const Node*> seen;
    for (const auto& n : g.nodes()) {
        for (const auto& in : n->inputs) {
            if (in->grad_fn) EXPECT_TRUE(seen.contains(in->grad_fn.get())) << n->op;
        }
        EXPECT_TRUE(seen.insert(n.get()).second) << "node visited twice: " << n->op;
    }
    EXPECT_EQ(g.nodes().size(), 4u);
}

TEST(FiniteDiff, Examples) {
    Tensor x({4}, {0.3, -1.2, 2.0, 5.0});
    auto g = finite_diff_grad([](const Tensor& t) { return ops::sum(t).item(); }, x, 1e-5);
    for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-10);

    Tensor y({2}, {1, 2});
    auto gs = finite_diff_grad([](const Tensor& t) { return ops::sum(ops::mul(t, t)).item(); }, y, 1e-5);
    EXPECT_NEAR(gs.data()[0], 2.0, 1e-8);
    EXPECT_NEAR(gs.data()[1], 4.0, 1e-8);
}

TEST(FiniteDiff, NonFiniteEvaluationIsNumericError) {
    Tensor x({1}, {0.0});
    EXPECT_THROW(finite_diff_grad([](const Tensor& t) { return std::log(t.data()[0]); }, x, 1e-5), NumericError);
    EXPECT_THROW(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0), ContractError);
}

TEST(FiniteDiff, MatchesBackwardOnTwoLayerNet) {
    std::mt19937_64 rng(5);
    for (int point = 0; point < 10; ++point) {
        auto x = random_tensor({5, 4}, rng, -1, 1, false);
        auto w1 = random_tensor({6, 4}, rng);
        auto b1 = random_tensor({6}, rng);
        auto w2 = random_tensor({3, 6}, rng);
        auto loss = [&] {
            auto h = ops::tanh(ops::add_row(ops::matmul_nt(x, w1), b1));
            auto o = ops::matmul_nt(h, w2);
            return ops::sum(ops::mul(o, o));
        };
        EXPECT_LT(gradient_error(loss, w1), 1e-4);
        EXPECT_LT(gradient_error(loss, b1), 1e-4);
        EXPECT_LT(gradient_error(loss, w2), 1e-4);
    }
}

// Every differentiable primitive, checked at 10 random points against
// central differences. A random projection r turns outputs into a scalar.
class OpGradient : public ::testing::Test {
protected:
    std::mt19937_64 rng{1234};

    void check(const std::function<Tensor()>& op, std::vector<Tensor*> params) {
        Tensor probe;
        bool have_probe = false;
        auto loss = [&] {
            Tensor out = op();
            if (!have_probe) {
                probe = random_tensor(out.shape(), rng, -1, 1, false);
                have_probe = true;
            }
            return ops::sum(ops::mul(out, probe));
        };
        for (auto* p : params) EXPECT_LT(gradient_error(loss, *p), 1e-4);
    }
};

TEST_F(OpGradient, AllPrimitives) {
    for (int point = 0; point < 10; ++point) {
        auto a = random_tensor({3, 4}, rng);
        auto b = random_tensor({4, 5}, rng);
        auto c = random_tensor({5, 4}, rng);
        auto d = random_tensor({3, 4}, rng);
        auto row = random_tensor({4}, rng);
        auto col = random_tensor({3}, rng);
        auto sq = random_tensor({4, 4}, rng, -3, 3);
        auto gamma = random_tensor({4}, rng, 0.5, 1.5);
        auto beta = random_tensor({4}, rng);
        auto table = random_tensor({6, 3}, rng);
        const std::vector<int> ids{2, 0, 2, 5};
        const std::vector<int> targets{1, 3, 0};
        const std::vector<unsigned char> mask{1, 0, 1};

        check([&] { return ops::matmul(a, b); }, {&a, &b});
        check([&] { return ops::matmul_nt(a, c); }, {&a, &c});
        check([&] { return ops::transpose(a); }, {&a});
        check([&] { return ops::add(a, d); }, {&a, &d});
        check([&] { return ops::sub(a, d); }, {&a, &d});
        check([&] { return ops::mul(a, d); }, {&a, &d});
        check([&] { return ops::scale(a, -1.7); }, {&a});
        check([&] { return ops::add_row(a, row); }, {&a, &row});
        check([&] { return ops::scale_rows(a, col); }, {&a, &col});
        check([&] { return ops::mean(a); }, {&a});
        check([&] { return ops::softmax(a); }, {&a});
        check([&] { return ops::causal_softmax(sq); }, {&sq});
        check([&] { return ops::layer_norm(a, gamma, beta); }, {&a, &gamma, &beta});
        check([&] { return ops::gelu(a); }, {&a});
        check([&] { return ops::tanh(a); }, {&a});
        check([&] { return ops::embedding(table, ids); }, {&table});
        check([&] { return ops::slice_rows(a, 2); }, {&a});
        check([&] { return ops::slice_cols(a, 1, 2); }, {&a});
        check([&] { return ops::concat_cols({a, ops::slice_cols(d, 0, 2)}); }, {&a, &d});
        check([&] { return ops::cross_entropy_sum(a, targets, mask); }, {&a});
    }
}

TEST(CausalSoftmax, MasksFuturePositionsExactly) {
    std::mt19937_64 rng(9);
    auto s = random_tensor({5, 5}, rng, -4, 4, false);
    auto p = ops::causal_softmax(s);
    for (std::size_t t = 0; t < 5; ++t) {
        double total = 0.0;
        for (std::size_t u = 0; u < 5; ++u) {
            if (u > t) EXPECT_EQ(p.at(t, u), 0.0);
            total += p.at(t, u);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
    Tensor logits({3, 10});
    const std::vector<int> targets{0, 4, 9};
    const std::vector<unsigned char> mask{1, 1, 1};
    EXPECT_NEAR(ops::cross_entropy_sum(logits, targets, mask).item(), 3.0 * std::log(10.0), 1e-12);
}

TEST(Tensor, ShapeInvariants) {
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor(Shape{0, 2}), ShapeError);
    Tensor t({2, 3}, 1.0);
    EXPECT_EQ(t.size(), 6u);
    EXPECT_FALSE(t.has_grad());
    t.mutable_grad();
    EXPECT_EQ(t.grad().size(), t.size());
}

}  // namespace
}  // namespace mole
