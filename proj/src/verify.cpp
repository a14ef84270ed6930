#include "moma/verify.hpp"

#include <chrono>
#include <functional>
#include <iomanip>

#include "moma/grad_check.hpp"
#include "moma/objectives.hpp"
#include "moma/ops.hpp"
#include "moma/vit.hpp"

namespace moma::verify {

namespace {

constexpr double kPrimitiveTol = 1e-5;
constexpr double kCompositionTol = 1e-4;

using Fn = std::function<Tensor64(std::vector<Tensor64>&)>;
using Maker = std::function<std::vector<Tensor64>(Rng&)>;

struct Check {
    std::string name;
    double tolerance;
    Fn fn;
    Maker make_inputs;
    int64_t subset = -1;  // > 0: sample this many elements per seed
};

std::vector<Check> primitive_checks() {
    std::vector<Check> checks;
    auto add = [&](std::string name, Fn fn, Maker make, double tol = kPrimitiveTol,
                   int64_t subset = -1) {
        checks.push_back({std::move(name), tol, std::move(fn), std::move(make), subset});
    };

    add("add/sub/mul broadcast",
        [](std::vector<Tensor64>& in) {
            Tensor64 s = ops::mul(ops::sub(ops::add(in[0], in[1]), in[2]), in[1]);
            return ops::sum(s);
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 3, 4}, rng),
                                         Tensor64::randn({4}, rng),
                                         Tensor64::randn({3, 4}, rng)};
        });
    add("scalar add/mul",
        [](std::vector<Tensor64>& in) {
            return ops::sum(ops::add_scalar(ops::mul_scalar(in[0], -1.3), 0.7));
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({6}, rng)}; });
    add("matmul 2d",
        [](std::vector<Tensor64>& in) { return ops::sum(ops::matmul(in[0], in[1])); },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 4}, rng),
                                         Tensor64::randn({4, 2}, rng)};
        });
    add("matmul batched x 2d",
        [](std::vector<Tensor64>& in) { return ops::mean(ops::matmul(in[0], in[1])); },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 2, 3, 4}, rng),
                                         Tensor64::randn({4, 5}, rng)};
        });
    add("matmul batched x batched",
        [](std::vector<Tensor64>& in) { return ops::mean(ops::matmul(in[0], in[1])); },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 3, 4}, rng),
                                         Tensor64::randn({2, 4, 3}, rng)};
        });
    add("softmax",
        [](std::vector<Tensor64>& in) {
            return ops::sum(ops::mul(ops::softmax(in[0], -1), in[1]));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 5}, rng),
                                         Tensor64::randn({3, 5}, rng)};
        });
    add("layer_norm",
        [](std::vector<Tensor64>& in) {
            Tensor64 y = ops::layer_norm(in[0], in[1], in[2]);
            return ops::sum(ops::mul(y, y));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({4, 6}, rng),
                                         Tensor64::uniform({6}, 0.5, 1.5, rng),
                                         Tensor64::randn({6}, rng)};
        });
    add("gelu",
        [](std::vector<Tensor64>& in) { return ops::sum(ops::gelu(in[0])); },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({4, 4}, rng)}; });
    add("mean/sum reductions",
        [](std::vector<Tensor64>& in) {
            Tensor64 m = ops::mean_axis(in[0], 1);
            Tensor64 s = ops::sum_axis(in[0], 0);
            return ops::add(ops::mean(ops::mul(m, m)), ops::mean(ops::mul(s, s)));
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({3, 4, 2}, rng)}; });
    add("transpose/reshape/slice/concat",
        [](std::vector<Tensor64>& in) {
            Tensor64 t = ops::transpose(in[0], 0, 2);
            Tensor64 r = ops::reshape(t, {4, 6});
            Tensor64 s = ops::slice(r, 0, 1, 2);
            return ops::sum(ops::mul(ops::concat(s, s, 1), ops::concat(s, s, 1)));
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({2, 3, 4}, rng)}; });
    add("gather/embed/scatter/token",
        [](std::vector<Tensor64>& in) {
            const std::vector<std::vector<int64_t>> idx{{2, 0}, {1, 3}};
            Tensor64 x = ops::add(ops::gather_tokens(in[0], idx), ops::embed_rows(in[1], idx));
            Tensor64 full = ops::scatter_tokens(x, in[2], idx, 4);
            Tensor64 seq = ops::concat(ops::broadcast_token(in[3], 2), full, 1);
            return ops::sum(ops::mul(seq, seq));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({2, 4, 3}, rng),
                                         Tensor64::randn({4, 3}, rng),
                                         Tensor64::randn({3}, rng),
                                         Tensor64::randn({3}, rng)};
        });
    add("l2_normalize",
        [](std::vector<Tensor64>& in) {
            return ops::sum(ops::mul(ops::l2_normalize(in[0]), in[1]));
        },
        [](Rng& rng) {
            return std::vector<Tensor64>{Tensor64::randn({3, 6}, rng),
                                         Tensor64::randn({3, 6}, rng)};
        });
    add("cross_entropy",
        [](std::vector<Tensor64>& in) { return ops::cross_entropy(in[0], {1, 0, 3}); },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::randn({3, 4}, rng)}; });
    add("smooth_l1 quadratic branch",
        [](std::vector<Tensor64>& in) {
            return ops::smooth_l1(in[0], Tensor64::zeros(in[0].shape()), 1.0);
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::uniform({12}, -0.8, 0.8, rng)}; });
    add("smooth_l1 linear branch",
        [](std::vector<Tensor64>& in) {
            return ops::smooth_l1(in[0], Tensor64::zeros(in[0].shape()), 1.0);
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::uniform({12}, 1.2, 2.5, rng)}; });
    add("smooth_l1 across the beta boundary",
        [](std::vector<Tensor64>& in) {
            return ops::smooth_l1(in[0], Tensor64::zeros(in[0].shape()), 1.0);
        },
        [](Rng& rng) { return std::vector<Tensor64>{Tensor64::uniform({16}, 0.9, 1.1, rng)}; },
        kCompositionTol);
    // keys are detached by contract, so only the query side is differentiated
    auto keys = std::make_shared<Tensor64>();
    add("info_nce (queries)",
        [keys](std::vector<Tensor64>& in) { return objectives::info_nce(in[0], *keys, 0.3); },
        [keys](Rng& rng) {
            *keys = Tensor64::randn({4, 5}, rng);
            return std::vector<Tensor64>{Tensor64::randn({4, 5}, rng)};
        });
    return checks;
}

model::ViTConfig verify_config() {
    model::ViTConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.dim = 8;
    cfg.decoder_depth = 1;
    cfg.decoder_dim = 8;
    return cfg;
}

// Full distillation loss through the masked student, projector and frozen
// teacher target; gradients checked on a random 10-element parameter subset.
Check end_to_end_check(bool multi) {
    Check check;
    check.name = multi ? "full distillation loss (multi)" : "full distillation loss (single)";
    check.tolerance = kCompositionTol;
    check.subset = 10;

    const model::ViTConfig cfg = verify_config();
    auto student = std::make_shared<model::ModelWeightsT<double>>();
    auto teacher = std::make_shared<model::ModelWeightsT<double>>();
    auto teacher2 = std::make_shared<model::ModelWeightsT<double>>();
    auto proj = std::make_shared<model::ProjectorT<double>>();
    auto proj2 = std::make_shared<model::ProjectorT<double>>();
    auto head = std::make_shared<model::NormHeadT<double>>(model::NormHeadT<double>::init(cfg.dim));
    auto images = std::make_shared<Tensor64>();
    auto mask = std::make_shared<data::MaskSpec>();

    check.fn = [=](std::vector<Tensor64>&) {
        Tensor64 target = model::teacher_representation(
            model::encode(*teacher, *images), *head, model::Pooling::MeanTokens, false);
        Tensor64 feats = model::encode(*student, *images, mask.get());
        Tensor64 rep = model::student_representation(feats, *proj, model::Pooling::MeanTokens,
                                                     false);
        Tensor64 loss = ops::smooth_l1(rep, target, 1.0);
        if (multi) {
            Tensor64 target2 = model::teacher_representation(
                model::encode(*teacher2, *images), *head, model::Pooling::MeanTokens, false);
            Tensor64 rep2 = model::student_representation(feats, *proj2,
                                                          model::Pooling::MeanTokens, false);
            loss = ops::add(ops::mul_scalar(loss, 0.5),
                            ops::mul_scalar(ops::smooth_l1(rep2, target2, 1.0), 0.5));
        }
        return loss;
    };
    check.make_inputs = [=](Rng& rng) {
        // fresh models, images and mask for every seed
        *student = model::ModelWeightsT<double>::init(cfg, rng.next_u64());
        *teacher = model::ModelWeightsT<double>::init(cfg, rng.next_u64(), false,
                                                      model::Role::TeacherMae);
        *teacher2 = model::ModelWeightsT<double>::init(cfg, rng.next_u64(), false,
                                                       model::Role::TeacherMoco);
        *proj = model::ProjectorT<double>::init(cfg.dim, cfg.dim, rng.next_u64());
        *proj2 = model::ProjectorT<double>::init(cfg.dim, cfg.dim, rng.next_u64());
        *images = Tensor64::randn({2, 3, 8, 8}, rng);
        *mask = data::sample_mask(2, cfg.token_count(), 0.5, rng.next_u64());
        std::vector<Tensor64> checked{student->patch_embed_weight, student->pos_embed,
                                      student->blocks[0].qkv_weight,
                                      student->blocks[1].fc1_weight,
                                      student->final_norm_gamma, proj->weight};
        if (multi) checked.push_back(proj2->weight);
        return checked;
    };
    return check;
}

}  // namespace

SuiteResult run_gradient_suite(int seeds, std::ostream* log) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Check> checks = primitive_checks();
    checks.push_back(end_to_end_check(false));
    checks.push_back(end_to_end_check(true));

    SuiteResult suite;
    suite.pass = true;
    for (const auto& check : checks) {
        CheckResult result;
        result.name = check.name;
        result.tolerance = check.tolerance;
        result.pass = true;
        for (int s = 0; s < seeds; ++s) {
            Rng rng(5000 + static_cast<uint64_t>(s));
            auto report = grad_check(check.fn, check.make_inputs(rng), 1e-5, check.tolerance,
                                     check.subset, 9000 + static_cast<uint64_t>(s));
            result.max_rel_err = std::max(result.max_rel_err, report.max_rel_err);
            result.pass = result.pass && report.pass;
        }
        suite.pass = suite.pass && result.pass;
        if (log)
            *log << (result.pass ? "  [ok]   " : "  [FAIL] ") << std::left << std::setw(38)
                 << result.name << " max_rel_err=" << std::scientific << std::setprecision(2)
                 << result.max_rel_err << " tol=" << result.tolerance << std::defaultfloat
                 << "\n";
        suite.checks.push_back(result);
    }
    suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return suite;
}

}  // namespace moma::verify
