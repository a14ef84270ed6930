#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moma/autograd.hpp"
#include "moma/ops.hpp"
#include "moma/tensor.hpp"

using namespace moma;

namespace {

Tensor64 t64(Shape shape, std::vector<double> v) { return Tensor64(std::move(shape), std::move(v)); }

}  // namespace

TEST_CASE("matmul identity, hand product, annihilator") {
    Tensor64 eye = t64({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor64 m = Tensor64::randn({3, 3}, rng);
    Tensor64 im = ops::matmul(eye, m);
    for (int64_t i = 0; i < 9; ++i) CHECK(im.data()[i] == doctest::Approx(m.data()[i]).epsilon(1e-12));

    Tensor64 a = t64({2, 2}, {1, 2, 3, 4});
    Tensor64 b = t64({2, 1}, {1, 1});
    Tensor64 c = ops::matmul(a, b);
    CHECK(c.at({0, 0}) == doctest::Approx(3.0));
    CHECK(c.at({1, 0}) == doctest::Approx(7.0));

    Tensor64 z = Tensor64::zeros({2, 3});
    Tensor64 any = Tensor64::randn({3, 4}, rng);
    Tensor64 zc = ops::matmul(z, any);
    CHECK(zc.shape() == Shape{2, 4});
    for (double v : zc.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor64 a = Tensor64::zeros({2, 3});
    Tensor64 b = Tensor64::zeros({4, 2});
    CHECK_THROWS_WITH_AS(ops::matmul(a, b),
                         doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("matmul batch broadcasting") {
    Rng rng(3);
    Tensor64 a = Tensor64::randn({2, 3, 4, 5}, rng);
    Tensor64 b = Tensor64::randn({5, 6}, rng);
    Tensor64 c = ops::matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 4, 6});
    // spot-check one slice against a plain 2-D product
    Tensor64 a0 = ops::slice(ops::reshape(a, {6, 4, 5}), 0, 2, 1);
    Tensor64 c0 = ops::matmul(ops::reshape(a0, {4, 5}), b);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 6; ++j)
            CHECK(c.at({0, 2, i, j}) == doctest::Approx(c0.at({i, j})).epsilon(1e-12));
}

TEST_CASE("softmax symmetry, closed form, stabilization") {
    Tensor64 u = ops::softmax(t64({3}, {0, 0, 0}), 0);
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3));

    Tensor64 l = ops::softmax(t64({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
    CHECK(l.data()[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(l.data()[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(l.data()[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));

    Tensor64 big = ops::softmax(t64({2}, {1000, 0}), 0);
    CHECK(std::isfinite(big.data()[0]));
    CHECK(big.data()[0] == doctest::Approx(1.0));
    CHECK(big.data()[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax rows sum to one for random inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor64 x = Tensor64::uniform({4, 7}, -50, 50, rng);
        Tensor64 y = ops::softmax(x, -1);
        for (int64_t r = 0; r < 4; ++r) {
            double s = 0;
            for (int64_t c = 0; c < 7; ++c) s += y.at({r, c});
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("layer_norm closed forms") {
    Tensor64 gamma = Tensor64::ones({2});
    Tensor64 beta = Tensor64::zeros({2});

    Tensor64 c = ops::layer_norm(t64({1, 2}, {5, 5}), gamma, beta);
    CHECK(c.data()[0] == doctest::Approx(0.0));
    CHECK(c.data()[1] == doctest::Approx(0.0));

    Tensor64 pm = ops::layer_norm(t64({1, 2}, {1, -1}), gamma, beta);
    CHECK(pm.data()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(pm.data()[1] == doctest::Approx(-1.0).epsilon(1e-5));

    Rng rng(5);
    Tensor64 x = Tensor64::randn({3, 4}, rng);
    Tensor64 g0 = Tensor64::zeros({4});
    Tensor64 b2 = Tensor64::full({4}, 2.5);
    Tensor64 y = ops::layer_norm(x, g0, b2);
    for (double v : y.data()) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("gather_tokens selects, reorders, and reports bad indices") {
    Tensor64 x = t64({1, 3, 2}, {0, 1, 10, 11, 20, 21});
    Tensor64 y = ops::gather_tokens(x, {{2, 0}});
    CHECK(y.shape() == Shape{1, 2, 2});
    CHECK(y.at({0, 0, 0}) == 20);
    CHECK(y.at({0, 0, 1}) == 21);
    CHECK(y.at({0, 1, 0}) == 0);

    // identity indices reproduce the input exactly
    Tensor64 id = ops::gather_tokens(x, {{0, 1, 2}});
    for (int64_t i = 0; i < 6; ++i) CHECK(id.data()[i] == x.data()[i]);

    CHECK_THROWS_WITH_AS(ops::gather_tokens(x, {{3, 0}}), doctest::Contains("sample 0"),
                         ValueError);
}

TEST_CASE("gather_tokens backward scatters ones to selected rows") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 x = Tensor64::zeros({1, 3, 2});
    x.set_requires_grad(true);
    Tensor64 y = ops::gather_tokens(x, {{2, 0}});
    Tensor64 loss = ops::sum(y);
    g.backward(loss);
    std::vector<double> expected{1, 1, 0, 0, 1, 1};
    for (int64_t i = 0; i < 6; ++i) CHECK(x.grad()[i] == expected[i]);
}

TEST_CASE("backward of sum gives ones; of sum of squares gives 2x") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 w = t64({2}, {1, 2});
    w.set_requires_grad(true);
    g.backward(ops::sum(w));
    CHECK(w.grad()[0] == 1.0);
    CHECK(w.grad()[1] == 1.0);

    g.clear();
    w.zero_grad();
    GraphScope64 scope2(g);
    Tensor64 sq = ops::mul(w, w);
    g.backward(ops::sum(sq));
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires scalar loss") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 w = Tensor64::ones({2});
    w.set_requires_grad(true);
    Tensor64 y = ops::mul(w, w);
    CHECK_THROWS_AS(g.backward(y), ValueError);
}

TEST_CASE("detached branch receives no grad") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 w = t64({2}, {3, 4});
    w.set_requires_grad(true);
    Tensor64 d = w.detach();
    Tensor64 y = ops::sum(ops::mul(w, d));
    g.backward(y);
    // only the live branch contributes: dy/dw = d = [3, 4]
    CHECK(w.grad()[0] == doctest::Approx(3.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));

    Tensor64 frozen = t64({2}, {1, 1});  // requires_grad defaults to false
    g.clear();
    GraphScope64 scope2(g);
    Tensor64 y2 = ops::sum(ops::mul(frozen, frozen));
    g.backward(y2);
    CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("tensor used twice sums both path contributions") {
    // f(w) = sum(w*w) + sum(3*w): df/dw = 2w + 3, hand-derived
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 w = t64({2}, {5, -2});
    w.set_requires_grad(true);
    Tensor64 path1 = ops::sum(ops::mul(w, w));
    Tensor64 path2 = ops::sum(ops::mul_scalar(w, 3.0));
    g.backward(ops::add(path1, path2));
    CHECK(w.grad()[0] == doctest::Approx(13.0));
    CHECK(w.grad()[1] == doctest::Approx(-1.0));
}

TEST_CASE("repeated backward without reset accumulates") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 w = t64({2}, {1, 2});
    w.set_requires_grad(true);
    Tensor64 loss = ops::sum(w);
    g.backward(loss);
    g.backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("broadcasting add matches trailing alignment and errors otherwise") {
    Tensor64 x = t64({2, 2}, {1, 2, 3, 4});
    Tensor64 bias = t64({2}, {10, 20});
    Tensor64 y = ops::add(x, bias);
    CHECK(y.at({0, 0}) == 11);
    CHECK(y.at({0, 1}) == 22);
    CHECK(y.at({1, 0}) == 13);
    CHECK(y.at({1, 1}) == 24);

    CHECK_THROWS_AS(ops::add(t64({3}, {1, 2, 3}), t64({2}, {1, 2})), ShapeError);
}

TEST_CASE("broadcast backward reduces over expanded dims") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 x = Tensor64::ones({3, 2});
    Tensor64 bias = t64({2}, {0, 0});
    bias.set_requires_grad(true);
    g.backward(ops::sum(ops::add(x, bias)));
    CHECK(bias.grad()[0] == doctest::Approx(3.0));
    CHECK(bias.grad()[1] == doctest::Approx(3.0));
}

TEST_CASE("smooth_l1 anchor values") {
    Tensor64 p = Tensor64::scalar(0.5);
    Tensor64 t = Tensor64::scalar(0.0);
    CHECK(ops::smooth_l1(p, t, 1.0).item() == doctest::Approx(0.125));

    CHECK(ops::smooth_l1(Tensor64::scalar(2.0), t, 1.0).item() == doctest::Approx(1.5));

    Rng rng(2);
    Tensor64 same = Tensor64::randn({4, 3}, rng);
    CHECK(ops::smooth_l1(same, same, 1.0).item() == doctest::Approx(0.0));

    CHECK_THROWS_AS(ops::smooth_l1(Tensor64::zeros({2}), Tensor64::zeros({3}), 1.0), ShapeError);
}

TEST_CASE("smooth_l1 sends no gradient to the target") {
    Graph64 g;
    GraphScope64 scope(g);
    Tensor64 p = Tensor64::full({3}, 1.0);
    Tensor64 t = Tensor64::zeros({3});
    p.set_requires_grad(true);
    t.set_requires_grad(true);
    g.backward(ops::smooth_l1(p, t, 1.0));
    CHECK(p.has_grad());
    CHECK_FALSE(t.has_grad());
}

TEST_CASE("cross_entropy of uniform logits is ln(C)") {
    Tensor64 logits = Tensor64::zeros({4, 10});
    Tensor64 loss = ops::cross_entropy(logits, {0, 3, 7, 9});
    CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-9));
}

TEST_CASE("forward values identical with and without gradient tracking") {
    Rng rng(21);
    Tensor64 x = Tensor64::randn({2, 3, 8}, rng);
    Tensor64 w = Tensor64::randn({8, 8}, rng);
    Tensor64 gamma = Tensor64::ones({8});
    Tensor64 beta = Tensor64::zeros({8});

    auto run = [&]() {
        Tensor64 h = ops::matmul(x, w);
        h = ops::gelu(h);
        h = ops::layer_norm(h, gamma, beta);
        return ops::softmax(h, -1);
    };

    Tensor64 untracked;
    {
        NoGradGuard ng;
        untracked = run();
    }
    Graph64 g;
    GraphScope64 scope(g);
    w.set_requires_grad(true);
    Tensor64 tracked_out = run();
    CHECK(g.size() > 0);
    REQUIRE(tracked_out.numel() == untracked.numel());
    for (int64_t i = 0; i < tracked_out.numel(); ++i)
        CHECK(tracked_out.data()[i] == untracked.data()[i]);  // bitwise
}

TEST_CASE("scatter_tokens inverts gather and fills the rest") {
    Tensor64 vis = t64({1, 2, 2}, {1, 2, 3, 4});
    Tensor64 fill = t64({2}, {-1, -2});
    Tensor64 y = ops::scatter_tokens(vis, fill, {{2, 0}}, 4);
    CHECK(y.shape() == Shape{1, 4, 2});
    CHECK(y.at({0, 2, 0}) == 1);
    CHECK(y.at({0, 0, 0}) == 3);
    CHECK(y.at({0, 1, 0}) == -1);
    CHECK(y.at({0, 3, 1}) == -2);
}

TEST_CASE("concat and slice round-trip") {
    Tensor64 a = t64({1, 2, 2}, {1, 2, 3, 4});
    Tensor64 b = t64({1, 1, 2}, {9, 8});
    Tensor64 c = ops::concat(b, a, 1);
    CHECK(c.shape() == Shape{1, 3, 2});
    CHECK(c.at({0, 0, 0}) == 9);
    Tensor64 back = ops::slice(c, 1, 1, 2);
    for (int64_t i = 0; i < 4; ++i) CHECK(back.data()[i] == a.data()[i]);
}

TEST_CASE("transpose swaps axes and composes to identity") {
    Rng rng(9);
    Tensor64 x = Tensor64::randn({2, 3, 4, 5}, rng);
    Tensor64 y = ops::transpose(x, 1, 2);
    CHECK(y.shape() == Shape{2, 4, 3, 5});
    CHECK(y.at({1, 2, 0, 3}) == x.at({1, 0, 2, 3}));
    Tensor64 z = ops::transpose(y, 1, 2);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(z.data()[i] == x.data()[i]);
}

TEST_CASE("mean_axis pools tokens") {
    Tensor64 x = t64({1, 2, 2}, {1, 1, 3, 3});
    Tensor64 m = ops::mean_axis(x, 1);
    CHECK(m.shape() == Shape{1, 2});
    CHECK(m.at({0, 0}) == doctest::Approx(2.0));
    CHECK(m.at({0, 1}) == doctest::Approx(2.0));
}

TEST_CASE("flop counter scales with matmul size") {
    ops::reset_flop_count();
    Tensor64 a = Tensor64::ones({8, 8});
    Tensor64 b = Tensor64::ones({8, 8});
    ops::matmul(a, b);
    CHECK(ops::flop_count() == 2ull * 8 * 8 * 8);
}
