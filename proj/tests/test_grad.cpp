#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "moma/grad_check.hpp"
#include "moma/ops.hpp"

using namespace moma;

// Every primitive must match central finite differences on random 64-bit
// inputs within 1e-5 relative error.
namespace {

constexpr double kTol = 1e-5;

void check_over_seeds(const std::function<Tensor64(std::vector<Tensor64>&)>& f,
                      const std::function<std::vector<Tensor64>(Rng&)>& make_inputs,
                      int seeds = 5, double tol = kTol) {
    for (int s = 0; s < seeds; ++s) {
        Rng rng(1000 + static_cast<uint64_t>(s));
        auto report = grad_check(f, make_inputs(rng), 1e-5, tol);
        INFO("seed ", s, " worst: ", report.worst);
        CHECK(report.pass);
    }
}

}  // namespace

TEST_CASE("grad: sum of any x is exact") {
    auto report = grad_check([](std::vector<Tensor64>& in) { return ops::sum(in[0]); },
                             {Tensor64::full({3, 2}, 0.7)});
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("grad: smooth_l1 quadratic branch at 0.5 matches derivative 0.5") {
    Tensor64 x = Tensor64::scalar(0.5);
    Graph64 g;
    {
        GraphScope64 scope(g);
        x.set_requires_grad(true);
        g.backward(ops::smooth_l1(x, Tensor64::scalar(0.0), 1.0));
    }
    CHECK(x.grad()[0] == doctest::Approx(0.5).epsilon(1e-6));

    auto report = grad_check(
        [](std::vector<Tensor64>& in) { return ops::smooth_l1(in[0], Tensor64::scalar(0.0), 1.0); },
        {Tensor64::scalar(0.5)}, 1e-6, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("grad: elementwise add/sub/mul with broadcasting") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 s = ops::add(in[0], in[1]);
            s = ops::sub(s, in[2]);
            s = ops::mul(s, in[1]);
            return ops::sum(s);
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 3, 4}, rng),
                                         Tensor64::randn({4}, rng),
                                         Tensor64::randn({3, 4}, rng)};
        });
}

TEST_CASE("grad: scalar ops") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            return ops::sum(ops::add_scalar(ops::mul_scalar(in[0], -1.7), 0.3));
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({5}, rng)}; });
}

TEST_CASE("grad: matmul both inputs, batched and 2-D") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) { return ops::sum(ops::matmul(in[0], in[1])); },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 4}, rng),
                                         Tensor64::randn({4, 2}, rng)};
        });
    check_over_seeds(
        [](std::vector<Tensor64>& in) { return ops::mean(ops::matmul(in[0], in[1])); },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 2, 3, 4}, rng),
                                         Tensor64::randn({4, 5}, rng)};
        });
    // broadcast batch on the rhs
    check_over_seeds(
        [](std::vector<Tensor64>& in) { return ops::mean(ops::matmul(in[0], in[1])); },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 3, 4}, rng),
                                         Tensor64::randn({2, 4, 3}, rng)};
        });
}

TEST_CASE("grad: softmax along both axes") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 w = ops::softmax(in[0], -1);
            return ops::sum(ops::mul(w, in[1]));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 5}, rng),
                                         Tensor64::randn({3, 5}, rng)};
        });
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 w = ops::softmax(in[0], 0);
            return ops::sum(ops::mul(w, in[1]));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 5}, rng),
                                         Tensor64::randn({3, 5}, rng)};
        });
}

TEST_CASE("grad: layer_norm x, gamma, beta") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 y = ops::layer_norm(in[0], in[1], in[2]);
            return ops::sum(ops::mul(y, y));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({4, 6}, rng),
                                         Tensor64::uniform({6}, 0.5, 1.5, rng),
                                         Tensor64::randn({6}, rng)};
        });
}

TEST_CASE("grad: gelu") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) { return ops::sum(ops::gelu(in[0])); },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({4, 4}, rng)}; });
}

TEST_CASE("grad: reductions") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 m = ops::mean_axis(in[0], 1);
            return ops::mean(ops::mul(m, m));
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({3, 4, 2}, rng)}; });
}

TEST_CASE("grad: transpose, reshape, slice, concat") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 t = ops::transpose(in[0], 0, 2);
            Tensor64 r = ops::reshape(t, {4, 6});
            Tensor64 s = ops::slice(r, 0, 1, 2);
            Tensor64 c = ops::concat(s, s, 1);
            return ops::sum(ops::mul(c, c));
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({2, 3, 4}, rng)}; });
}

TEST_CASE("grad: gather/embed/scatter/broadcast token ops") {
    const std::vector<std::vector<int64_t>> idx{{2, 0}, {1, 3}};
    check_over_seeds(
        [&](std::vector<Tensor64>& in) {
            Tensor64 gathered = ops::gather_tokens(in[0], idx);
            Tensor64 emb = ops::embed_rows(in[1], idx);
            Tensor64 x = ops::add(gathered, emb);
            Tensor64 full = ops::scatter_tokens(x, in[2], idx, 4);
            Tensor64 cls = ops::broadcast_token(in[3], 2);
            Tensor64 seq = ops::concat(cls, full, 1);
            return ops::sum(ops::mul(seq, seq));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{
                Tensor64::randn({2, 4, 3}, rng), Tensor64::randn({4, 3}, rng),
                Tensor64::randn({3}, rng), Tensor64::randn({3}, rng)};
        });
}

TEST_CASE("grad: l2_normalize") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 y = ops::l2_normalize(in[0]);
            return ops::sum(ops::mul(y, in[1]));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 6}, rng),
                                         Tensor64::randn({3, 6}, rng)};
        });
}

TEST_CASE("grad: cross_entropy") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) { return ops::cross_entropy(in[0], {1, 0, 3}); },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({3, 4}, rng)}; });
}

TEST_CASE("grad: smooth_l1 is smooth across the beta boundary") {
    // elements straddle |d| = beta; the check still passes because the
    // derivative is continuous there
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            return ops::smooth_l1(in[0], Tensor64::zeros(in[0].shape()), 1.0);
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::uniform({16}, 0.9, 1.1, rng)}; },
        5, 1e-4);
}

TEST_CASE("grad: deep composition within 1e-4") {
    check_over_seeds(
        [](std::vector<Tensor64>& in) {
            Tensor64 x = in[0];
            for (int i = 0; i < 4; ++i) {
                x = ops::matmul(x, in[1]);
                x = ops::gelu(x);
                x = ops::layer_norm(x, in[2], in[3]);
            }
            Tensor64 pooled = ops::mean_axis(x, 1);
            return ops::smooth_l1(pooled, Tensor64::zeros(pooled.shape()), 1.0);
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{
                Tensor64::randn({2, 3, 6}, rng), Tensor64::randn({6, 6}, rng),
                Tensor64::uniform({6}, 0.5, 1.5, rng), Tensor64::randn({6}, rng)};
        },
        5, 1e-4);
}
