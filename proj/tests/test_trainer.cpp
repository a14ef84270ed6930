#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "moma/autograd.hpp"
#include "moma/checkpoint.hpp"
#include "moma/metrics.hpp"
#include "moma/trainer.hpp"

using namespace moma;
using namespace moma::train;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("moma_train_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

model::ViTConfig mini_config() {
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

TrainRunConfig base_config(RunKind kind, const fs::path& out, uint64_t seed = 1) {
    TrainRunConfig cfg;
    cfg.kind = kind;
    cfg.seed = seed;
    cfg.out_dir = (out / run_kind_name(kind)).string();
    cfg.model = mini_config();
    cfg.data.dataset = "synthetic";
    cfg.data.synthetic.n = 64;
    cfg.data.synthetic.classes = 2;
    cfg.data.synthetic.seed = 7;
    cfg.data.synthetic.image_size = 8;
    cfg.optim.epochs = 2;
    cfg.optim.batch_size = 16;
    cfg.optim.base_lr = 1e-3;
    cfg.optim.lr_reference_batch = 16;  // no scaling at test size
    cfg.optim.warmup_epochs = 0;
    cfg.log_every = 1;
    return cfg;
}

std::vector<uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("moco pretrain: initial loss near ln(B), learns, momentum branch diverges from main") {
    TempDir dir;
    auto cfg = base_config(RunKind::PretrainMoco, dir.path);
    cfg.optim.epochs = 50;  // 4 steps/epoch -> 200 steps
    cfg.optim.warmup_epochs = 2;
    // short-horizon smoke: faster momentum, views that keep an 8x8 image
    // recognizable
    cfg.moco_momentum = 0.9;
    cfg.strong_aug.crop_scale_min = 0.6;
    cfg.strong_aug.blur_prob = 0.0;
    cfg.strong_aug.solarize_prob = 0.0;
    auto result = run_pretrain_moco(cfg);
    CHECK(result.steps == 200);

    auto metrics = io::MetricsLog::read((fs::path(cfg.out_dir) / "metrics.csv").string());
    REQUIRE(!metrics.rows.empty());
    const double ln_b = std::log(static_cast<double>(cfg.optim.batch_size));
    CHECK(metrics.rows.front().metrics[0] == doctest::Approx(ln_b).epsilon(0.10));
    CHECK(result.final_loss < 0.9 * ln_b);

    // momentum encoder differs from the main encoder after training
    auto main = io::load_checkpoint(result.checkpoint);
    CHECK(main.role == model::Role::TeacherMoco);
}

TEST_CASE("moco momentum encoder equals main only when m = 0") {
    auto cfg = mini_config();
    auto st_m0 = objectives::MoCoState::init(cfg, 3, 0.0f, 0.2f);
    st_m0.main_encoder.blocks[0].qkv_weight.mutable_data()[0] += 1.5f;
    st_m0.momentum_step();
    CHECK(st_m0.momentum_encoder.blocks[0].qkv_weight.data()[0] ==
          st_m0.main_encoder.blocks[0].qkv_weight.data()[0]);

    auto st = objectives::MoCoState::init(cfg, 3, 0.99f, 0.2f);
    st.main_encoder.blocks[0].qkv_weight.mutable_data()[0] += 1.5f;
    st.momentum_step();
    CHECK(st.momentum_encoder.blocks[0].qkv_weight.data()[0] !=
          st.main_encoder.blocks[0].qkv_weight.data()[0]);
}

TEST_CASE("mae pretrain overfits 32 fixed images") {
    TempDir dir;
    auto cfg = base_config(RunKind::PretrainMae, dir.path);
    cfg.model.dim = 16;
    cfg.model.decoder_dim = 16;
    cfg.data.synthetic.n = 32;
    cfg.data.synthetic.noise_std = 0.05;  // fixed images must be memorizable
    cfg.optim.batch_size = 32;
    cfg.optim.epochs = 500;  // one step per epoch
    cfg.optim.warmup_epochs = 10;
    cfg.optim.base_lr = 2e-3;
    cfg.optim.lr_reference_batch = 32;
    cfg.standard_aug = data::AugPolicy::none();  // overfit a fixed set
    cfg.mae_mask_ratio = 0.75;
    cfg.log_every = 1;
    auto result = run_pretrain_mae(cfg);

    auto metrics = io::MetricsLog::read((fs::path(cfg.out_dir) / "metrics.csv").string());
    REQUIRE(metrics.rows.size() >= 2);
    const double initial = metrics.rows.front().metrics[0];
    CHECK(result.final_loss < 0.10 * initial);

    // artifacts: encoder tagged teacher_mae, decoder in its own file
    auto teacher = io::load_checkpoint(result.checkpoint);
    CHECK(teacher.role == model::Role::TeacherMae);
    CHECK_FALSE(teacher.decoder.has_value());
    auto dec = io::load_named((fs::path(cfg.out_dir) / "mae_decoder.ckpt").string());
    CHECK(dec.role == "mae_decoder");
    CHECK(!dec.tensors.empty());
}

TEST_CASE("distill run keeps teachers bitwise frozen in all three modes") {
    TempDir dir;
    // produce tiny teachers first
    auto moco_cfg = base_config(RunKind::PretrainMoco, dir.path);
    moco_cfg.optim.epochs = 2;
    auto moco = run_pretrain_moco(moco_cfg);
    auto mae_cfg = base_config(RunKind::PretrainMae, dir.path);
    mae_cfg.optim.epochs = 2;
    auto mae = run_pretrain_mae(mae_cfg);

    const auto mae_bytes = slurp(mae.checkpoint);
    const auto moco_bytes = slurp(moco.checkpoint);

    for (auto mode : {objectives::DistillMode::MaeToMoco, objectives::DistillMode::MocoToMae,
                      objectives::DistillMode::Multi}) {
        auto cfg = base_config(RunKind::Distill, dir.path);
        cfg.out_dir += "-" + objectives::mode_name(mode);
        cfg.distill.mode = mode;
        cfg.distill.mask_ratio = 0.5;
        cfg.teacher_mae_checkpoint = mae.checkpoint;
        cfg.teacher_moco_checkpoint = moco.checkpoint;
        cfg.grad_audit_every = 1;
        auto result = run_distill(cfg);
        CHECK(std::isfinite(result.final_loss));
        CHECK(fs::exists(result.checkpoint));
        // teacher files untouched on disk
        CHECK(slurp(mae.checkpoint) == mae_bytes);
        CHECK(slurp(moco.checkpoint) == moco_bytes);
        // metrics recorded a zero teacher gradient norm
        auto metrics = io::MetricsLog::read((fs::path(cfg.out_dir) / "metrics.csv").string());
        const auto& names = metrics.metric_names;
        const size_t gcol = static_cast<size_t>(
            std::find(names.begin(), names.end(), "teacher_grad_norm") - names.begin());
        for (const auto& row : metrics.rows) CHECK(row.metrics[gcol] == 0.0);
    }
}

TEST_CASE("distill in-memory teacher parameters are bitwise unchanged") {
    TempDir dir;
    auto mae_cfg = base_config(RunKind::PretrainMae, dir.path);
    mae_cfg.optim.epochs = 1;
    auto mae = run_pretrain_mae(mae_cfg);

    auto teacher = io::load_checkpoint(mae.checkpoint);
    const auto before = snapshot_params(teacher);

    auto student = model::ModelWeights::init(mini_config(), 5);
    auto head = model::NormHead::init(teacher.config.dim);
    auto proj = model::Projector::init(student.config.dim, teacher.config.dim, 6);
    objectives::TeacherBundle bundle{&teacher, &head};
    objectives::DistillConfig dcfg;
    dcfg.mode = objectives::DistillMode::MaeToMoco;
    dcfg.mask_ratio = 0.5;

    data::SyntheticSpec spec;
    spec.n = 16;
    spec.classes = 2;
    spec.image_size = 8;
    auto ds = data::synthetic_dataset(spec);
    auto raw = ds.batch_range(0, 16);

    std::vector<Tensor> params;
    student.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
    params.push_back(proj.weight);
    params.push_back(proj.bias);
    AdamW opt(params, {});

    Graph g;
    for (int step = 0; step < 20; ++step) {
        GraphScope scope(g);
        auto result = objectives::single_teacher_loss(bundle, student, proj, raw, dcfg,
                                                      data::AugPolicy::standard(),
                                                      data::AugPolicy::strong(),
                                                      data::cifar10_norm(),
                                                      static_cast<uint64_t>(step));
        g.backward(result.value);
        opt.step(1e-3f);
        opt.zero_grad();
        g.clear();
    }
    CHECK(snapshot_params(teacher) == before);  // bitwise
    CHECK(grad_norm(teacher) == 0.0);
}

TEST_CASE("one distillation step on a fixed batch decreases the loss (5 seeds)") {
    TempDir dir;
    auto mae_cfg = base_config(RunKind::PretrainMae, dir.path);
    mae_cfg.optim.epochs = 1;
    auto mae = run_pretrain_mae(mae_cfg);
    auto teacher = io::load_checkpoint(mae.checkpoint);
    auto head = model::NormHead::init(teacher.config.dim);
    objectives::TeacherBundle bundle{&teacher, &head};

    data::SyntheticSpec spec;
    spec.n = 16;
    spec.classes = 2;
    spec.image_size = 8;
    auto ds = data::synthetic_dataset(spec);
    auto raw = ds.batch_range(0, 16);

    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto student = model::ModelWeights::init(mini_config(), 100 + seed);
        auto proj = model::Projector::init(8, 8, 200 + seed);
        objectives::DistillConfig dcfg;
        dcfg.mode = objectives::DistillMode::MaeToMoco;
        dcfg.mask_ratio = 0.5;

        std::vector<Tensor> params;
        student.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
        params.push_back(proj.weight);
        params.push_back(proj.bias);
        AdamW opt(params, {});

        auto eval_loss = [&]() {
            NoGradGuard ng;
            return objectives::single_teacher_loss(bundle, student, proj, raw, dcfg,
                                                   data::AugPolicy::none(),
                                                   data::AugPolicy::none(),
                                                   data::cifar10_norm(), seed)
                .value.item();
        };
        const float before = eval_loss();
        Graph g;
        {
            GraphScope scope(g);
            auto result = objectives::single_teacher_loss(bundle, student, proj, raw, dcfg,
                                                          data::AugPolicy::none(),
                                                          data::AugPolicy::none(),
                                                          data::cifar10_norm(), seed);
            g.backward(result.value);
        }
        opt.step(5e-4f);
        const float after = eval_loss();
        CHECK(after < before);
    }
}

TEST_CASE("probe on a frozen random encoder separates the synthetic classes") {
    TempDir dir;
    auto cfg = base_config(RunKind::Probe, dir.path);
    cfg.data.synthetic.n = 128;
    cfg.optim.epochs = 25;  // 8 steps/epoch -> 200 steps
    cfg.optim.base_lr = 5e-3;
    auto result = run_linear_probe(cfg);
    CHECK(result.top1 >= 0.95);

    // first logged supervised loss starts near ln(num_classes)
    auto metrics = io::MetricsLog::read((fs::path(cfg.out_dir) / "metrics.csv").string());
    CHECK(metrics.rows.front().metrics[0] ==
          doctest::Approx(std::log(2.0)).epsilon(0.25));
}

TEST_CASE("probe leaves the frozen encoder unchanged and is deterministic") {
    TempDir dir;
    auto mae_cfg = base_config(RunKind::PretrainMae, dir.path);
    mae_cfg.optim.epochs = 1;
    auto mae = run_pretrain_mae(mae_cfg);

    auto cfg = base_config(RunKind::Probe, dir.path);
    cfg.init_checkpoint = mae.checkpoint;
    cfg.optim.epochs = 5;
    auto r1 = run_linear_probe(cfg);

    auto loaded = io::load_checkpoint(mae.checkpoint);
    auto [enc, head] = load_classifier(r1.checkpoint);
    CHECK(snapshot_params(enc) == snapshot_params(loaded));  // encoder bitwise frozen

    auto cfg2 = base_config(RunKind::Probe, dir.path);
    cfg2.out_dir += "-again";
    cfg2.init_checkpoint = mae.checkpoint;
    cfg2.optim.epochs = 5;
    auto r2 = run_linear_probe(cfg2);
    CHECK(r1.top1 == r2.top1);
    CHECK(slurp(r1.checkpoint) == slurp(r2.checkpoint));  // bitwise determinism
}

TEST_CASE("probe on an untrained encoder beats chance") {
    TempDir dir;
    auto cfg = base_config(RunKind::Probe, dir.path);
    cfg.data.synthetic.n = 128;
    cfg.data.synthetic.classes = 4;
    cfg.optim.epochs = 20;
    cfg.optim.base_lr = 5e-3;
    auto result = run_linear_probe(cfg);
    CHECK(result.top1 > 1.0 / 4.0);
}

TEST_CASE("finetune accuracy is at least probe accuracy on the same budget (3 seeds)") {
    TempDir dir;
    auto mae_cfg = base_config(RunKind::PretrainMae, dir.path);
    mae_cfg.optim.epochs = 1;
    auto mae = run_pretrain_mae(mae_cfg);

    for (uint64_t seed = 1; seed <= 3; ++seed) {
        auto probe_cfg = base_config(RunKind::Probe, dir.path, seed);
        probe_cfg.out_dir += "-s" + std::to_string(seed);
        probe_cfg.init_checkpoint = mae.checkpoint;
        probe_cfg.data.synthetic.n = 128;
        probe_cfg.optim.epochs = 15;
        probe_cfg.optim.base_lr = 5e-3;
        auto probe = run_linear_probe(probe_cfg);

        auto ft_cfg = probe_cfg;
        ft_cfg.kind = RunKind::Finetune;
        ft_cfg.out_dir = (dir.path / ("ft-s" + std::to_string(seed))).string();
        auto ft = run_finetune(ft_cfg);
        CHECK(ft.top1 >= probe.top1 - 1e-9);
    }
}

TEST_CASE("evaluate_top1 counts argmax hits") {
    auto cfg = mini_config();
    auto encoder = model::ModelWeights::init(cfg, 3);
    auto head = ClassifierHead::init(cfg.dim, 2, 5);

    data::SyntheticSpec spec;
    spec.n = 2;
    spec.classes = 2;
    spec.image_size = 8;
    spec.seed = 11;
    auto ds = data::synthetic_dataset(spec);

    // compute the model's own predictions, then build datasets whose labels
    // agree / disagree with them
    auto batch = ds.batch_range(0, 2);
    data::normalize(batch, data::cifar10_norm());
    NoGradGuard ng;
    Tensor feats = model::encode(encoder, batch.pixels);
    Tensor pooled = ops::mean_axis(feats, 1);
    Tensor logits = ops::add(ops::matmul(pooled, head.weight), head.bias);
    std::vector<int64_t> pred(2);
    for (int64_t b = 0; b < 2; ++b) pred[static_cast<size_t>(b)] = logits.at({b, 0}) >= logits.at({b, 1}) ? 0 : 1;

    data::Dataset agree("agree", 3, 8, 8, 2);
    data::Dataset disagree("disagree", 3, 8, 8, 2);
    for (int64_t i = 0; i < 2; ++i) {
        auto raw = ds.batch_range(i, i + 1);
        std::vector<uint8_t> bytes(3 * 8 * 8);
        for (size_t j = 0; j < bytes.size(); ++j)
            bytes[j] = static_cast<uint8_t>(std::lround(raw.pixels.data()[j] * 255.0f));
        agree.append_sample(bytes.data(), pred[static_cast<size_t>(i)]);
        disagree.append_sample(bytes.data(), 1 - pred[static_cast<size_t>(i)]);
    }
    CHECK(evaluate_top1(encoder, head, agree, data::cifar10_norm()) == 1.0);
    CHECK(evaluate_top1(encoder, head, disagree, data::cifar10_norm()) == 0.0);
}

TEST_CASE("evaluate_top1 of a label-independent predictor is chance within 3 sigma") {
    auto cfg = mini_config();
    auto encoder = model::ModelWeights::init(cfg, 3);
    auto head = ClassifierHead::init(cfg.dim, 10, 5);

    data::SyntheticSpec spec;
    spec.n = 1000;
    spec.classes = 10;
    spec.image_size = 8;
    spec.seed = 13;
    spec.color_scale = 0.0;  // identical class patterns: labels carry no signal
    auto ds = data::synthetic_dataset(spec);
    const double acc = evaluate_top1(encoder, head, ds, data::cifar10_norm());
    const double sigma = std::sqrt(0.1 * 0.9 / 1000.0);
    CHECK(std::abs(acc - 0.10) <= 3 * sigma);
}

TEST_CASE("evaluate_top1 is invariant to dataset order") {
    auto cfg = mini_config();
    auto encoder = model::ModelWeights::init(cfg, 3);
    auto head = ClassifierHead::init(cfg.dim, 4, 5);

    data::SyntheticSpec spec;
    spec.n = 40;
    spec.classes = 4;
    spec.image_size = 8;
    spec.seed = 17;
    auto ds = data::synthetic_dataset(spec);

    data::Dataset reversed("rev", 3, 8, 8, 4);
    for (int64_t i = ds.size() - 1; i >= 0; --i) {
        auto raw = ds.batch_range(i, i + 1);
        std::vector<uint8_t> bytes(3 * 8 * 8);
        for (size_t j = 0; j < bytes.size(); ++j)
            bytes[j] = static_cast<uint8_t>(std::lround(raw.pixels.data()[j] * 255.0f));
        reversed.append_sample(bytes.data(), ds.label(i));
    }
    CHECK(evaluate_top1(encoder, head, ds, data::cifar10_norm()) ==
          evaluate_top1(encoder, head, reversed, data::cifar10_norm()));
}

TEST_CASE("identical config and seed give bitwise-identical distill checkpoints") {
    TempDir dir;
    auto mae_cfg = base_config(RunKind::PretrainMae, dir.path);
    mae_cfg.optim.epochs = 1;
    auto mae = run_pretrain_mae(mae_cfg);

    auto make = [&](const std::string& tag) {
        auto cfg = base_config(RunKind::Distill, dir.path);
        cfg.out_dir = (dir.path / tag).string();
        cfg.distill.mode = objectives::DistillMode::MaeToMoco;
        cfg.distill.mask_ratio = 0.5;
        cfg.teacher_mae_checkpoint = mae.checkpoint;
        cfg.optim.epochs = 2;
        return run_distill(cfg);
    };
    auto a = make("d1");
    auto b = make("d2");
    CHECK(slurp(a.checkpoint) == slurp(b.checkpoint));
    CHECK(a.final_loss == b.final_loss);
}

TEST_CASE("distill rejects missing or mismatched teacher checkpoints") {
    TempDir dir;
    auto cfg = base_config(RunKind::Distill, dir.path);
    cfg.distill.mode = objectives::DistillMode::MaeToMoco;
    CHECK_THROWS_AS(run_distill(cfg), ConfigError);

    // a moco-tagged checkpoint is not accepted as the mae teacher
    auto moco_cfg = base_config(RunKind::PretrainMoco, dir.path);
    moco_cfg.optim.epochs = 1;
    auto moco = run_pretrain_moco(moco_cfg);
    cfg.teacher_mae_checkpoint = moco.checkpoint;
    CHECK_THROWS_AS(run_distill(cfg), ConfigError);
}
