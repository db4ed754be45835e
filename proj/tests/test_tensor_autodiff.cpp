// Tape engine tests: forward values of every primitive against hand-computed
// or independently derived expectations, reverse-mode gradients against
// central differences, replay bit-exactness, and the error contract.

#include <gtest/gtest.h>

#include <cmath>

#include "uninext/ops.hpp"

namespace un = uninext;
using un::Dims;
using un::Tape;
using un::Tensor;
using un::Var;

namespace {

constexpr double kF64Tol = 1e-5;

Tensor<double> t2x3(std::vector<double> v) { return Tensor<double>({2, 3}, std::move(v)); }

}  // namespace

TEST(Tensor, BasicsAndClone) {
    Tensor<double> a({2, 3});
    EXPECT_EQ(a.numel(), 6);
    EXPECT_EQ(a.rank(), 2);
    a.at(1, 2) = 5.0;
    EXPECT_DOUBLE_EQ(a[5], 5.0);

    Tensor<double> shared = a;  // aliases
    shared.at(0, 0) = 7.0;
    EXPECT_DOUBLE_EQ(a.at(0, 0), 7.0);

    Tensor<double> deep = a.clone();
    deep.at(0, 0) = 9.0;
    EXPECT_DOUBLE_EQ(a.at(0, 0), 7.0);

    EXPECT_THROW(Tensor<double>({2, 2}, {1.0, 2.0}), un::ShapeError);
    EXPECT_THROW(a.reshaped({4, 2}), un::ShapeError);
}

TEST(Rng, DeterministicAndSplittable) {
    un::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());

    un::Rng c(42);
    un::Rng s1 = c.split(1), s2 = c.split(2);
    bool differs = false;
    for (int i = 0; i < 16; ++i) differs |= s1.next_u64() != s2.next_u64();
    EXPECT_TRUE(differs);

    un::Rng d(7);
    for (int i = 0; i < 1000; ++i) {
        const double z = d.next_trunc_normal(0.0, 0.02);
        EXPECT_LE(std::abs(z), 0.04 + 1e-12);
    }
    un::Rng e(9);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += e.next_normal();
    EXPECT_NEAR(mean / n, 0.0, 0.05);
}

TEST(Forward, ElementwiseWithBroadcast) {
    Tape<double> t;
    auto a = t.leaf(t2x3({1, 2, 3, 4, 5, 6}));
    auto b = t.leaf(Tensor<double>({3}, {10, 20, 30}));
    auto s = a + b;
    EXPECT_EQ(s.dims(), (Dims{2, 3}));
    EXPECT_DOUBLE_EQ(s.val()[0], 11);
    EXPECT_DOUBLE_EQ(s.val()[5], 36);

    auto d = a - b;
    EXPECT_DOUBLE_EQ(d.val()[3], -6);
    auto m = a * b;
    EXPECT_DOUBLE_EQ(m.val()[4], 100);

    auto c = un::scale(a, -0.5);
    EXPECT_DOUBLE_EQ(c.val()[1], -1.0);

    // Scalar broadcast across everything.
    auto one = t.leaf(Tensor<double>::scalar(1.0));
    auto sp = a + one;
    EXPECT_DOUBLE_EQ(sp.val()[2], 4.0);
}

TEST(Forward, UnaryMath) {
    Tape<double> t;
    auto x = t.leaf(Tensor<double>({4}, {0.0, 1.0, 4.0, 0.25}));
    EXPECT_DOUBLE_EQ(un::exp(x).val()[1], std::exp(1.0));
    EXPECT_DOUBLE_EQ(un::reciprocal(x).val()[2], 0.25);
    EXPECT_DOUBLE_EQ(un::sqrt(x).val()[2], 2.0);

    // gelu(x) = x * Phi(x) with the exact Gaussian CDF.
    auto g = un::gelu(x);
    EXPECT_DOUBLE_EQ(g.val()[0], 0.0);
    EXPECT_NEAR(g.val()[1], 0.8413447460685429, 1e-12);
    Tape<double> t2;
    auto far = t2.leaf(Tensor<double>({2}, {10.0, -10.0}));
    auto gf = un::gelu(far);
    EXPECT_NEAR(gf.val()[0], 10.0, 1e-9);
    EXPECT_NEAR(gf.val()[1], 0.0, 1e-9);
}

TEST(Forward, MatmulVariants) {
    Tape<double> t;
    // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
    auto a = t.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto b = t.leaf(Tensor<double>({2, 2}, {5, 6, 7, 8}));
    auto c = un::matmul(a, b);
    EXPECT_DOUBLE_EQ(c.val().at(0, 0), 19);
    EXPECT_DOUBLE_EQ(c.val().at(0, 1), 22);
    EXPECT_DOUBLE_EQ(c.val().at(1, 0), 43);
    EXPECT_DOUBLE_EQ(c.val().at(1, 1), 50);

    // Batched LHS against shared rank-2 RHS equals per-batch products.
    un::Rng rng(3);
    auto ab = t.leaf(Tensor<double>::normal({3, 2, 4}, rng));
    auto w = t.leaf(Tensor<double>::normal({4, 5}, rng));
    auto out = un::matmul(ab, w);
    EXPECT_EQ(out.dims(), (Dims{3, 2, 5}));
    for (int64_t bi = 0; bi < 3; ++bi) {
        auto sl = un::slice(ab, {bi, 0, 0}, {1, 2, 4});
        auto one = un::matmul(un::reshape(sl, {2, 4}), w);
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t j = 0; j < 5; ++j)
                EXPECT_DOUBLE_EQ(out.val().at(bi, i, j), one.val().at(i, j));
    }
}

TEST(Forward, ReduceAndBroadcast) {
    Tape<double> t;
    auto a = t.leaf(t2x3({1, 2, 3, 4, 5, 6}));
    auto s0 = un::reduce_sum(a, {0});
    EXPECT_EQ(s0.dims(), (Dims{3}));
    EXPECT_DOUBLE_EQ(s0.val()[0], 5);
    auto s1k = un::reduce_sum(a, {1}, true);
    EXPECT_EQ(s1k.dims(), (Dims{2, 1}));
    EXPECT_DOUBLE_EQ(s1k.val()[1], 15);
    auto m = un::reduce_mean(a);
    EXPECT_EQ(m.dims(), (Dims{}));
    EXPECT_DOUBLE_EQ(m.val()[0], 3.5);

    // Trailing alignment: the {2,1} input maps onto axes 1-2 of the target.
    auto b = un::broadcast_to(s1k, {2, 2, 3});
    EXPECT_EQ(b.dims(), (Dims{2, 2, 3}));
    EXPECT_DOUBLE_EQ(b.val().at(1, 0, 2), 6);
    EXPECT_DOUBLE_EQ(b.val().at(1, 1, 0), 15);
}

TEST(Forward, LayoutOps) {
    Tape<double> t;
    auto a = t.leaf(Tensor<double>({2, 3, 4}, [] {
        std::vector<double> v(24);
        for (int i = 0; i < 24; ++i) v[static_cast<size_t>(i)] = i;
        return v;
    }()));
    auto tr = un::transpose(a, {2, 0, 1});
    EXPECT_EQ(tr.dims(), (Dims{4, 2, 3}));
    EXPECT_DOUBLE_EQ(tr.val().at(1, 1, 2), a.val().at(1, 2, 1));

    auto rs = un::reshape(a, {6, 4});
    EXPECT_DOUBLE_EQ(rs.val().at(3, 1), 13);

    auto sl = un::slice(a, {1, 0, 2}, {1, 2, 2});
    EXPECT_EQ(sl.dims(), (Dims{1, 2, 2}));
    EXPECT_DOUBLE_EQ(sl.val().at(0, 1, 0), a.val().at(1, 1, 2));

    auto pd = un::pad(a, {0, 1, 0}, {1, 0, 2});
    EXPECT_EQ(pd.dims(), (Dims{3, 4, 6}));
    EXPECT_DOUBLE_EQ(pd.val().at(0, 0, 0), 0.0);
    EXPECT_DOUBLE_EQ(pd.val().at(1, 2, 3), a.val().at(1, 1, 3));
    // pad then slice recovers the original exactly
    auto back = un::slice(pd, {0, 1, 0}, {2, 3, 4});
    EXPECT_TRUE(un::bitwise_equal(back.val(), a.val()));

    auto cc = un::concat<double>({a, a}, 1);
    EXPECT_EQ(cc.dims(), (Dims{2, 6, 4}));
    EXPECT_DOUBLE_EQ(cc.val().at(1, 4, 3), a.val().at(1, 1, 3));
}

TEST(Forward, SoftmaxRowsSumToOne) {
    Tape<double> t;
    auto x = t.leaf(Tensor<double>({2, 2}, {0.0, 0.0, 1.0, 3.0}));
    auto y = un::softmax(x, -1);
    EXPECT_DOUBLE_EQ(y.val().at(0, 0), 0.5);
    EXPECT_NEAR(y.val().at(1, 0) + y.val().at(1, 1), 1.0, 1e-15);
    EXPECT_NEAR(y.val().at(1, 1), 1.0 / (1.0 + std::exp(-2.0)), 1e-12);

    // Max-subtraction keeps huge logits finite.
    Tape<double> t2;
    auto big = t2.leaf(Tensor<double>({1, 3}, {1e4, 1e4 + 1, 1e4 - 3}));
    auto yb = un::softmax(big, 1);
    EXPECT_TRUE(yb.val().all_finite());
    double s = yb.val()[0] + yb.val()[1] + yb.val()[2];
    EXPECT_NEAR(s, 1.0, 1e-12);

    // Softmax over a middle axis.
    un::Rng rng(5);
    Tape<double> t3;
    auto z = t3.leaf(Tensor<double>::normal({2, 3, 4}, rng));
    auto yz = un::softmax(z, 1);
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t k = 0; k < 4; ++k) {
            double acc = 0;
            for (int64_t j = 0; j < 3; ++j) acc += yz.val().at(b, j, k);
            EXPECT_NEAR(acc, 1.0, 1e-12);
        }
    }
}

TEST(Forward, RollMatchesWorkedExample) {
    // 2x2 map [[a,b],[c,d]], shift (1,1) -> [[d,c],[b,a]].
    Tape<double> t;
    auto x = t.leaf(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
    auto y = un::roll(x, 1, 1);
    EXPECT_DOUBLE_EQ(y.val()[0], 4);
    EXPECT_DOUBLE_EQ(y.val()[1], 3);
    EXPECT_DOUBLE_EQ(y.val()[2], 2);
    EXPECT_DOUBLE_EQ(y.val()[3], 1);

    // roll(s) then roll(-s) is the identity, bit for bit.
    un::Rng rng(11);
    auto z = t.leaf(Tensor<double>::normal({2, 3, 5, 7}, rng));
    auto fwd = un::roll(z, 2, -3);
    auto back = un::roll(fwd, -2, 3);
    EXPECT_TRUE(un::bitwise_equal(back.val(), z.val()));
}

TEST(Forward, CrossEntropyUniformLogitsIsLogK) {
    Tape<double> t;
    auto z = t.leaf(Tensor<double>({2, 4}));  // zeros -> uniform
    auto loss = un::cross_entropy(z, {0, 3});
    EXPECT_NEAR(loss.val()[0], std::log(4.0), 1e-14);

    // Gradient is (softmax - onehot)/B.
    t.backward(loss);
    auto g = t.grad(z);
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t k = 0; k < 4; ++k) {
            const double expect = (0.25 - ((b == 0 && k == 0) || (b == 1 && k == 3) ? 1 : 0)) / 2.0;
            EXPECT_NEAR(g.at(b, k), expect, 1e-14);
        }
    }
}

TEST(Backward, ReusedLeafAccumulates) {
    // y = sum(x*x + x); dy/dx = 2x + 1 exactly.
    Tape<double> t;
    auto x = t.leaf(Tensor<double>({3}, {1.0, -2.0, 0.5}));
    auto y = un::reduce_sum(x * x + x);
    t.backward(y);
    auto g = t.grad(x);
    EXPECT_DOUBLE_EQ(g[0], 3.0);
    EXPECT_DOUBLE_EQ(g[1], -3.0);
    EXPECT_DOUBLE_EQ(g[2], 2.0);
}

TEST(Backward, UnusedLeafGetsZeros) {
    Tape<double> t;
    auto x = t.leaf(Tensor<double>({2}, {1.0, 2.0}));
    auto unused = t.leaf(Tensor<double>({3, 3}));
    auto y = un::reduce_sum(x);
    t.backward(y);
    auto g = t.grad(unused);
    EXPECT_EQ(g.dims(), (Dims{3, 3}));
    for (int64_t i = 0; i < g.numel(); ++i) EXPECT_DOUBLE_EQ(g[i], 0.0);
    // Gradient dims always match value dims.
    EXPECT_EQ(t.grad(x).dims(), x.dims());
}

TEST(Backward, CentralDifferenceAgreementOnComposites) {
    un::Rng rng(123);
    // Broadcast mul + reduce.
    auto f1 = [](Tape<double>&, const std::vector<Var<double>>& in) {
        return un::reduce_sum(in[0] * in[1]);
    };
    EXPECT_LT(un::grad_check<double>(
                  f1, {Tensor<double>::normal({3, 4}, rng), Tensor<double>::normal({4}, rng)}),
              kF64Tol);

    // Matmul chain with unary math.
    auto f2 = [](Tape<double>&, const std::vector<Var<double>>& in) {
        auto h = un::matmul(in[0], in[1]);
        return un::reduce_mean(un::gelu(h) * h);
    };
    EXPECT_LT(un::grad_check<double>(
                  f2, {Tensor<double>::normal({2, 3, 4}, rng), Tensor<double>::normal({4, 5}, rng)}),
              kF64Tol);

    // exp/reciprocal/sqrt chain on positive inputs.
    auto f3 = [](Tape<double>&, const std::vector<Var<double>>& in) {
        auto p = un::sqrt(un::reciprocal(un::exp(in[0])));
        return un::reduce_sum(p);
    };
    EXPECT_LT(un::grad_check<double>(f3, {Tensor<double>::uniform({3, 3}, rng, 0.5, 1.5)}),
              kF64Tol);

    // Softmax + layer_norm + cross-entropy composite.
    auto f4 = [](Tape<double>&, const std::vector<Var<double>>& in) {
        auto n = un::layer_norm(in[0], in[1], in[2]);
        auto sm = un::softmax(n, -1);
        auto z = un::reshape(un::reduce_sum(sm * n, {1}, true), {4, 1});
        auto pack = un::concat<double>({z, un::reduce_mean(n, {1}, true)}, 1);
        return un::cross_entropy(pack, {0, 1, 1, 0});
    };
    EXPECT_LT(un::grad_check<double>(f4,
                                     {Tensor<double>::normal({4, 6}, rng),
                                      Tensor<double>::normal({6}, rng, 1.0, 0.2),
                                      Tensor<double>::normal({6}, rng)}),
              kF64Tol);

    // Layout ops: transpose/slice/pad/concat/broadcast/roll all differentiable.
    auto f5 = [](Tape<double>&, const std::vector<Var<double>>& in) {
        auto r = un::roll(in[0], 1, -1);
        auto tr = un::transpose(r, {0, 2, 3, 1});
        auto sl = un::slice(tr, {0, 1, 0, 0}, {2, 2, 3, 3});
        auto pd = un::pad(sl, {0, 0, 1, 0}, {0, 1, 0, 1});
        auto cc = un::concat<double>({pd, pd}, 1);
        return un::reduce_mean(cc * cc);
    };
    EXPECT_LT(un::grad_check<double>(f5, {Tensor<double>::normal({2, 3, 4, 3}, rng)}), kF64Tol);
}

TEST(Tape, ReplayIsBitExact) {
    un::Rng rng(77);
    Tape<float> t;
    auto x = t.leaf(Tensor<float>::normal({2, 5, 6}, rng));
    auto w = t.leaf(Tensor<float>::normal({6, 6}, rng));
    auto g = t.leaf(Tensor<float>::normal({6}, rng, 1.0, 0.1));
    auto b = t.leaf(Tensor<float>::normal({6}, rng));
    auto h = un::layer_norm(un::gelu(un::matmul(x, w)), g, b);
    auto y = un::softmax(h, -1);
    auto loss = un::reduce_mean(y * h);
    t.backward(loss);
    EXPECT_TRUE(un::tape_replay_matches(t));
}

TEST(Tape, DeterministicAcrossRebuilds) {
    auto run = [] {
        un::Rng rng(2024);
        Tape<float> t;
        auto x = t.leaf(Tensor<float>::normal({3, 8}, rng));
        auto w = t.leaf(Tensor<float>::normal({8, 4}, rng));
        auto loss = un::cross_entropy(un::matmul(x, w), {1, 0, 3});
        t.backward(loss);
        return std::pair{loss.val().clone(), t.grad(w).clone()};
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    EXPECT_TRUE(un::bitwise_equal(l1, l2));
    EXPECT_TRUE(un::bitwise_equal(g1, g2));
}

TEST(Errors, ShapeAndUsageContract) {
    Tape<double> t;
    auto a = t.leaf(Tensor<double>({2, 3}));
    auto b = t.leaf(Tensor<double>({4}));
    EXPECT_THROW(un::add(a, b), un::ShapeError);
    EXPECT_THROW(un::matmul(a, b), un::ShapeError);
    EXPECT_THROW(un::reshape(a, {7}), un::ShapeError);
    EXPECT_THROW(un::slice(a, {0, 1}, {2, 3}), un::ShapeError);
    EXPECT_THROW(un::transpose(a, {0, 0}), un::UsageError);
    EXPECT_THROW(un::softmax(a, 2), un::UsageError);
    EXPECT_THROW(un::reduce_sum(a, {5}), un::UsageError);
    EXPECT_THROW(un::broadcast_to(a, {2, 4}), un::ShapeError);
    EXPECT_THROW(un::cross_entropy(a, {0, 1, 2}), un::ShapeError);

    auto logits = t.leaf(Tensor<double>({2, 3}));
    EXPECT_THROW(un::cross_entropy(logits, {0, 7}), un::UsageError);

    // Non-scalar backward root.
    EXPECT_THROW(t.backward(a), un::UsageError);
    // Backward with a root from nowhere.
    Tape<double> empty;
    EXPECT_THROW(empty.backward(Var<double>{&empty, 5}), un::StateError);
    // Reading gradients before any backward ran.
    Tape<double> fresh;
    auto z = fresh.leaf(Tensor<double>({1}));
    EXPECT_THROW(fresh.grad(z), un::StateError);
    // Mixing tapes.
    Tape<double> other;
    auto c = other.leaf(Tensor<double>({2, 3}));
    EXPECT_THROW(un::add(a, c), un::UsageError);
    // Unknown primitive id through the generic dispatch.
    std::vector<Var<double>> ins{a};
    EXPECT_THROW(un::forward_primitive(t, static_cast<un::OpKind>(99), ins), un::UsageError);
    EXPECT_THROW(un::forward_primitive(t, un::OpKind::kScale, ins, un::Attrs{}), un::UsageError);
}

TEST(Dispatch, ForwardPrimitiveMatchesNamedOps) {
    un::Rng rng(31);
    Tape<double> t;
    auto a = t.leaf(Tensor<double>::normal({2, 3}, rng));
    auto b = t.leaf(Tensor<double>::normal({2, 3}, rng));
    auto s1 = un::forward_primitive(t, un::OpKind::kAdd, {a, b});
    auto s2 = un::add(a, b);
    EXPECT_TRUE(un::bitwise_equal(s1.val(), s2.val()));
    auto r1 = un::forward_primitive(t, un::OpKind::kReduceMean, {a},
                                    un::ReduceAttrs{{1}, false});
    auto r2 = un::reduce_mean(a, {1});
    EXPECT_TRUE(un::bitwise_equal(r1.val(), r2.val()));
}
