#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moma/autograd.hpp"
#include "moma/grad_check.hpp"
#include "moma/masking.hpp"
#include "moma/ops.hpp"
#include "moma/vit.hpp"

using namespace moma;
using namespace moma::model;

namespace {

ViTConfig mini_config() {
    ViTConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.dim = 8;
    cfg.decoder_depth = 1;
    cfg.decoder_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("patchify token counts match the grid") {
    ViTConfig imagenet;
    imagenet.image_size = 224;
    imagenet.patch_size = 16;
    CHECK(imagenet.token_count() == 196);

    ViTConfig cifar;
    cifar.image_size = 32;
    cifar.patch_size = 4;
    CHECK(cifar.token_count() == 64);

    Rng rng(1);
    Tensor64 images = Tensor64::randn({2, 3, 32, 32}, rng);
    Tensor64 patches = patchify(images, cifar);
    CHECK(patches.shape() == Shape{2, 64, 48});
}

TEST_CASE("patchify of a constant image gives identical patch vectors") {
    ViTConfig cfg = mini_config();
    Tensor64 images = Tensor64::full({1, 3, 8, 8}, 0.25);
    Tensor64 patches = patchify(images, cfg);
    for (int64_t n = 0; n < cfg.token_count(); ++n)
        for (int64_t d = 0; d < cfg.patch_dim(); ++d)
            CHECK(patches.at({0, n, d}) == 0.25);
}

TEST_CASE("patchify rejects size mismatch") {
    ViTConfig cfg = mini_config();
    CHECK_THROWS_AS(patchify(Tensor64::zeros({1, 3, 16, 16}), cfg), ShapeError);
}

TEST_CASE("patchify is raster order, channel-major within a patch") {
    ViTConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.in_channels = 2;
    // pixel value encodes (c, y, x)
    std::vector<double> img(2 * 4 * 4);
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 4; ++x) img[(c * 4 + y) * 4 + x] = 100 * c + 10 * y + x;
    Tensor64 patches = patchify(Tensor64({1, 2, 4, 4}, std::move(img)), cfg);
    CHECK(patches.shape() == Shape{1, 4, 8});
    // patch 1 covers columns 2..3 of rows 0..1
    std::vector<double> expected{2, 3, 12, 13, 102, 103, 112, 113};
    for (int64_t d = 0; d < 8; ++d) CHECK(patches.at({0, 1, d}) == expected[static_cast<size_t>(d)]);
}

TEST_CASE("encode shape under heavy masking and class token") {
    ViTConfig micro = ViTConfig::preset("micro", 32, 4);
    CHECK(data::visible_count_for(micro.token_count(), 0.9) == 6);

    auto w = ModelWeightsT<double>::init(micro, 42);
    Rng rng(5);
    Tensor64 images = Tensor64::randn({2, 3, 32, 32}, rng);
    auto mask = data::sample_mask(2, 64, 0.9, 7);
    Tensor64 out = encode(w, images, &mask);
    CHECK(out.shape() == Shape{2, 6, 64});

    ViTConfig with_cls = micro;
    with_cls.use_class_token = true;
    auto wc = ModelWeightsT<double>::init(with_cls, 42);
    Tensor64 out_cls = encode(wc, images, &mask);
    CHECK(out_cls.shape() == Shape{2, 7, 64});
}

TEST_CASE("encode with ratio-0 mask equals unmasked encode bitwise") {
    ViTConfig cfg = mini_config();
    auto w = ModelWeightsT<double>::init(cfg, 3);
    Rng rng(8);
    Tensor64 images = Tensor64::randn({3, 3, 8, 8}, rng);
    auto mask0 = data::sample_mask(3, cfg.token_count(), 0.0, 11);
    Tensor64 a = encode(w, images, nullptr);
    Tensor64 b = encode(w, images, &mask0);
    REQUIRE(a.shape() == b.shape());
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);  // bitwise
}

TEST_CASE("teacher encode leaves no gradient anywhere") {
    ViTConfig cfg = mini_config();
    auto w = ModelWeightsT<float>::init(cfg, 3, false, Role::TeacherMae);
    Rng rng(8);
    Tensor images = Tensor::randn({2, 3, 8, 8}, rng);

    Graph g;
    GraphScope scope(g);
    Tensor out = encode(w, images);
    g.backward(ops::sum(out));
    CHECK(g.size() == 0);  // frozen role encodes without recording nodes
    w.for_each_param([](const std::string&, Tensor& t) {
        CHECK_FALSE(t.requires_grad());
        CHECK_FALSE(t.has_grad());
    });
}

TEST_CASE("encode validates mask consistency") {
    ViTConfig cfg = mini_config();
    auto w = ModelWeightsT<double>::init(cfg, 3);
    Tensor64 images = Tensor64::zeros({2, 3, 8, 8});
    data::MaskSpec bad;
    bad.token_count = cfg.token_count();
    bad.visible = {{0, 1}, {0}};  // inconsistent per-sample visible counts
    bad.masked = {{2, 3}, {1, 2, 3}};
    CHECK_THROWS_AS(encode(w, images, &bad), ShapeError);
}

TEST_CASE("decode_mae output shape and parameter count formula") {
    ViTConfig micro = ViTConfig::preset("micro", 32, 4);
    auto w = ModelWeightsT<double>::init(micro, 9, /*with_decoder=*/true);
    Rng rng(2);
    Tensor64 images = Tensor64::randn({2, 3, 32, 32}, rng);
    auto mask = data::sample_mask(2, 64, 0.75, 5);
    Tensor64 enc = encode(w, images, &mask);
    Tensor64 pred = decode_mae(w, enc, mask);
    CHECK(pred.shape() == Shape{2, 64, 48});

    // closed-form parameter count oracle against actual enumeration
    int64_t actual = w.param_count();
    CHECK(actual == micro.encoder_param_count() + micro.decoder_param_count());

    auto enc_only = ModelWeightsT<double>::init(micro, 9, false);
    CHECK(enc_only.param_count() == micro.encoder_param_count());
}

TEST_CASE("decode_mae rejects mismatched mask") {
    ViTConfig cfg = mini_config();
    auto w = ModelWeightsT<double>::init(cfg, 3, true);
    Tensor64 images = Tensor64::zeros({1, 3, 8, 8});
    auto mask = data::sample_mask(1, cfg.token_count(), 0.5, 1);
    Tensor64 enc = encode(w, images, &mask);
    auto other = data::sample_mask(1, cfg.token_count(), 0.0, 1);
    CHECK_THROWS_AS(decode_mae(w, enc, other), ShapeError);
}

TEST_CASE("student_representation pooling and projection") {
    // identity projector on a single token leaves the vector unchanged
    Tensor64 one_token({1, 1, 4}, {1, 2, 3, 4});
    auto id = ProjectorT<double>::identity(4);
    Tensor64 rep = student_representation(one_token, id, Pooling::MeanTokens, false);
    for (int64_t d = 0; d < 4; ++d) CHECK(rep.at({0, d}) == doctest::Approx(1.0 + d));

    // mean pooling of [1,1] and [3,3] is [2,2] before projection
    Tensor64 two_tokens({1, 2, 2}, {1, 1, 3, 3});
    auto id2 = ProjectorT<double>::identity(2);
    Tensor64 rep2 = student_representation(two_tokens, id2, Pooling::MeanTokens, false);
    CHECK(rep2.at({0, 0}) == doctest::Approx(2.0));
    CHECK(rep2.at({0, 1}) == doctest::Approx(2.0));

    // small student (384) under base teacher (768) projects to teacher width
    Rng rng(4);
    Tensor64 feats = Tensor64::randn({2, 5, 384}, rng);
    auto proj = ProjectorT<double>::init(384, 768, 1);
    Tensor64 rep3 = student_representation(feats, proj, Pooling::MeanTokens, false);
    CHECK(rep3.shape() == Shape{2, 768});
}

TEST_CASE("class-token pooling requires a class token") {
    Tensor64 feats = Tensor64::zeros({1, 3, 4});
    auto id = ProjectorT<double>::identity(4);
    CHECK_THROWS_AS(student_representation(feats, id, Pooling::ClassToken, false), ValueError);
}

TEST_CASE("teacher_representation: constant features give beta") {
    auto head = NormHeadT<double>::init(4);
    Rng rng(6);
    head.beta = Tensor64::randn({4}, rng);
    Tensor64 feats = Tensor64::full({2, 5, 4}, 3.25);
    Tensor64 rep = teacher_representation(feats, head, Pooling::MeanTokens, false);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t d = 0; d < 4; ++d)
            CHECK(rep.at({b, d}) == doctest::Approx(head.beta.data()[static_cast<size_t>(d)]));
}

TEST_CASE("teacher_representation invariant to token permutation under mean pooling") {
    Rng rng(6);
    Tensor64 feats = Tensor64::randn({1, 4, 3}, rng);
    Tensor64 permuted = ops::gather_tokens(feats, {{2, 0, 3, 1}});
    auto head = NormHeadT<double>::init(3);
    Tensor64 a = teacher_representation(feats, head, Pooling::MeanTokens, false);
    Tensor64 b = teacher_representation(permuted, head, Pooling::MeanTokens, false);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
}

TEST_CASE("teacher_representation matches layer_norm(mean(tokens)) straight-line oracle") {
    Rng rng(13);
    const int64_t B = 3, N = 5, D = 6;
    Tensor64 feats = Tensor64::randn({B, N, D}, rng);
    auto head = NormHeadT<double>::init(D);
    head.gamma = Tensor64::uniform({D}, 0.5, 1.5, rng);
    head.beta = Tensor64::randn({D}, rng);

    Tensor64 rep = teacher_representation(feats, head, Pooling::MeanTokens, false);

    for (int64_t b = 0; b < B; ++b) {
        std::vector<double> pooled(D, 0.0);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < D; ++d) pooled[static_cast<size_t>(d)] += feats.at({b, n, d});
        for (double& v : pooled) v /= static_cast<double>(N);
        double m = 0;
        for (double v : pooled) m += v;
        m /= static_cast<double>(D);
        double var = 0;
        for (double v : pooled) var += (v - m) * (v - m);
        var /= static_cast<double>(D);
        const double rstd = 1.0 / std::sqrt(var + 1e-6);
        for (int64_t d = 0; d < D; ++d) {
            const double expect = (pooled[static_cast<size_t>(d)] - m) * rstd *
                                      head.gamma.data()[static_cast<size_t>(d)] +
                                  head.beta.data()[static_cast<size_t>(d)];
            CHECK(rep.at({b, d}) == doctest::Approx(expect).epsilon(1e-6));
        }
    }
}

TEST_CASE("teacher_representation never tracks gradients") {
    Graph64 g;
    GraphScope64 scope(g);
    Rng rng(1);
    Tensor64 feats = Tensor64::randn({1, 2, 3}, rng);
    feats.set_requires_grad(true);
    auto head = NormHeadT<double>::init(3);
    teacher_representation(feats, head, Pooling::MeanTokens, false);
    CHECK(g.size() == 0);
}

TEST_CASE("encode is permutation-equivariant with zeroed positions") {
    ViTConfig cfg = mini_config();  // 2x2 grid of patches, no class token
    auto w = ModelWeightsT<double>::init(cfg, 17);
    w.pos_embed = Tensor64::zeros(w.pos_embed.shape());

    Rng rng(3);
    Tensor64 images = Tensor64::randn({1, 3, 8, 8}, rng);
    // swap the two top patches: tokens 0 and 1
    Tensor64 swapped = images.clone();
    auto src = images.data();
    auto dst = swapped.mutable_data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 4; ++x) {
                dst[(c * 8 + y) * 8 + x] = src[(c * 8 + y) * 8 + x + 4];
                dst[(c * 8 + y) * 8 + x + 4] = src[(c * 8 + y) * 8 + x];
            }

    Tensor64 out_a = encode(w, images);
    Tensor64 out_b = encode(w, swapped);
    // output tokens 0 and 1 swap, tokens 2 and 3 unchanged
    const std::vector<int64_t> perm{1, 0, 2, 3};
    for (int64_t n = 0; n < 4; ++n)
        for (int64_t d = 0; d < cfg.dim; ++d)
            CHECK(out_b.at({0, n, d}) ==
                  doctest::Approx(out_a.at({0, perm[static_cast<size_t>(n)], d})).epsilon(1e-9));
}

TEST_CASE("masked encode costs scale with the visible count") {
    ViTConfig micro = ViTConfig::preset("micro", 32, 4);
    auto w = ModelWeightsT<double>::init(micro, 1);
    Rng rng(1);
    Tensor64 images = Tensor64::randn({2, 3, 32, 32}, rng);

    ops::reset_flop_count();
    encode(w, images);
    const uint64_t full_cost = ops::flop_count();

    auto mask = data::sample_mask(2, 64, 0.75, 3);
    ops::reset_flop_count();
    encode(w, images, &mask);
    const uint64_t masked_cost = ops::flop_count();

    CHECK(masked_cost < full_cost * 3 / 10);

    // attention term scales quadratically: halving V should cut the
    // score/context matmul cost by ~4. Compare r=0.5 (V=32) vs r=0.75 (V=16).
    auto mask_half = data::sample_mask(2, 64, 0.5, 3);
    ops::reset_flop_count();
    encode(w, images, &mask_half);
    const uint64_t cost_v32 = ops::flop_count();
    CHECK(cost_v32 > masked_cost);
}

TEST_CASE("full pipeline gradient check at 64-bit") {
    ViTConfig cfg = mini_config();
    auto w = ModelWeightsT<double>::init(cfg, 23);
    auto proj = ProjectorT<double>::init(cfg.dim, cfg.dim, 5);
    Rng rng(31);
    Tensor64 images = Tensor64::randn({2, 3, 8, 8}, rng);
    Tensor64 target = Tensor64::randn({2, cfg.dim}, rng);
    auto mask = data::sample_mask(2, cfg.token_count(), 0.5, 9);

    auto f = [&](std::vector<Tensor64>&) {
        Tensor64 feats = encode(w, images, &mask);
        Tensor64 rep = student_representation(feats, proj, Pooling::MeanTokens, false);
        return ops::smooth_l1(rep, target, 1.0);
    };

    std::vector<Tensor64> checked{w.patch_embed_weight, w.pos_embed,
                                  w.blocks[0].qkv_weight, w.blocks[1].fc1_weight,
                                  w.final_norm_gamma, proj.weight};
    for (int seed = 0; seed < 3; ++seed) {
        auto report = grad_check(f, checked, 1e-5, 1e-4, 40, 100 + static_cast<uint64_t>(seed));
        INFO("worst: ", report.worst);
        CHECK(report.pass);
    }
}

TEST_CASE("stop_patch_grad blocks gradient at the patch embedding only") {
    ViTConfig cfg = mini_config();
    auto w = ModelWeightsT<float>::init(cfg, 23);
    auto proj = ProjectorT<float>::init(cfg.dim, cfg.dim, 5);
    Rng rng(31);
    Tensor images = Tensor::randn({2, 3, 8, 8}, rng);
    Tensor target = Tensor::zeros({2, cfg.dim});

    Graph g;
    GraphScope scope(g);
    Tensor feats = encode(w, images, nullptr, /*stop_patch_grad=*/true);
    Tensor rep = student_representation(feats, proj, Pooling::MeanTokens, false);
    g.backward(ops::smooth_l1(rep, target, 1.0f));

    CHECK_FALSE(w.patch_embed_weight.has_grad());
    CHECK_FALSE(w.patch_embed_bias.has_grad());
    CHECK(w.pos_embed.has_grad());
    CHECK(w.blocks[0].qkv_weight.has_grad());
}
