#include "moma/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "moma/autograd.hpp"
#include "moma/checkpoint.hpp"
#include "moma/masking.hpp"
#include "moma/metrics.hpp"

namespace moma::train {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string run_kind_name(RunKind kind) {
    switch (kind) {
        case RunKind::PretrainMoco: return "pretrain-moco";
        case RunKind::PretrainMae: return "pretrain-mae";
        case RunKind::Distill: return "distill";
        case RunKind::Finetune: return "finetune";
        case RunKind::Probe: return "probe";
        case RunKind::Eval: return "eval";
    }
    return "distill";
}

RunKind run_kind_from_name(const std::string& name) {
    if (name == "pretrain-moco") return RunKind::PretrainMoco;
    if (name == "pretrain-mae") return RunKind::PretrainMae;
    if (name == "distill") return RunKind::Distill;
    if (name == "finetune") return RunKind::Finetune;
    if (name == "probe") return RunKind::Probe;
    if (name == "eval") return RunKind::Eval;
    throw ConfigError("unknown run kind: " + name);
}

data::Dataset load_train_dataset(const DataConfig& cfg) {
    data::Dataset ds = [&] {
        if (cfg.dataset == "cifar10") return data::load_cifar10(cfg.path, "train");
        if (cfg.dataset == "synthetic") return data::synthetic_dataset(cfg.synthetic);
        throw ConfigError("unknown dataset: " + cfg.dataset);
    }();
    if (cfg.train_limit > 0) ds.truncate(cfg.train_limit);
    return ds;
}

data::Dataset load_eval_dataset(const DataConfig& cfg) {
    data::Dataset ds = [&] {
        if (cfg.dataset == "cifar10") return data::load_cifar10(cfg.path, "test");
        if (cfg.dataset == "synthetic") {
            data::SyntheticSpec eval_spec = cfg.synthetic;
            eval_spec.seed = Rng::derive(cfg.synthetic.seed, 0xe7a1);
            eval_spec.n = std::max<int64_t>(cfg.synthetic.n / 4, eval_spec.classes);
            return data::synthetic_dataset(eval_spec);
        }
        throw ConfigError("unknown dataset: " + cfg.dataset);
    }();
    if (cfg.eval_limit > 0) ds.truncate(cfg.eval_limit);
    return ds;
}

std::vector<float> snapshot_params(const model::ModelWeights& weights) {
    std::vector<float> all;
    weights.for_each_param([&](const std::string&, const Tensor& t) {
        all.insert(all.end(), t.data().begin(), t.data().end());
    });
    return all;
}

double grad_norm(const model::ModelWeights& weights) {
    double total = 0.0;
    weights.for_each_param([&](const std::string&, const Tensor& t) {
        if (!t.has_grad()) return;
        for (float g : t.grad()) total += static_cast<double>(g) * static_cast<double>(g);
    });
    return std::sqrt(total);
}

namespace {

struct LoopPlan {
    int64_t steps_per_epoch;
    int64_t total_steps;
    Schedule schedule;
};

LoopPlan make_plan(const OptimConfig& optim, int64_t n_samples) {
    LoopPlan plan;
    plan.steps_per_epoch = (n_samples + optim.batch_size - 1) / optim.batch_size;
    plan.total_steps = plan.steps_per_epoch * optim.epochs;
    plan.schedule.total_steps = plan.total_steps;
    plan.schedule.warmup_steps =
        std::min(plan.steps_per_epoch * optim.warmup_epochs, plan.total_steps - 1);
    plan.schedule.base_lr = optim.effective_lr();
    plan.schedule.min_lr = optim.min_lr;
    plan.schedule.validate();
    return plan;
}

std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::derive(seed, 0x0ede7, static_cast<uint64_t>(epoch)));
    for (int64_t i = n - 1; i > 0; --i) {
        const int64_t j = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    return order;
}

fs::path prepare_out_dir(const TrainRunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("run has no output directory");
    fs::create_directories(cfg.out_dir);
    return cfg.out_dir;
}

std::string run_id_of(const TrainRunConfig& cfg) {
    if (!cfg.run_id.empty()) return cfg.run_id;
    return run_kind_name(cfg.kind) + "-seed" + std::to_string(cfg.seed);
}

void check_finite(double loss, int64_t step, const std::string& last_checkpoint) {
    if (std::isfinite(loss)) return;
    throw Error("diverged: non-finite loss at step " + std::to_string(step) +
                (last_checkpoint.empty() ? std::string("; no checkpoint written yet")
                                         : "; last good checkpoint: " + last_checkpoint));
}

Tensor pooled_features(const model::ModelWeights& w, const Tensor& pixels,
                       model::Pooling pooling) {
    Tensor feats = model::encode(w, pixels);
    if (pooling == model::Pooling::ClassToken) {
        Tensor cls = ops::slice(feats, 1, 0, 1);
        return ops::reshape(cls, {feats.dim(0), feats.dim(2)});
    }
    Tensor tokens = w.config.use_class_token ? ops::slice(feats, 1, 1, feats.dim(1) - 1) : feats;
    return ops::mean_axis(tokens, 1);
}

model::ModelWeights load_teacher(const std::string& path, model::Role expected_role) {
    if (path.empty())
        throw ConfigError("missing teacher checkpoint for role " + model::role_name(expected_role));
    model::ModelWeights w = io::load_checkpoint(path);
    if (w.role != expected_role)
        throw ConfigError("checkpoint " + path + " has role " + model::role_name(w.role) +
                          ", expected " + model::role_name(expected_role));
    w.set_trainable(false);
    return w;
}

struct SupervisedSetup {
    model::ModelWeights encoder;
    ClassifierHead head;
    data::Dataset train;
    data::Dataset eval;
};

SupervisedSetup supervised_setup(const TrainRunConfig& cfg, bool freeze_encoder) {
    SupervisedSetup s{model::ModelWeights(), ClassifierHead{}, load_train_dataset(cfg.data),
                      load_eval_dataset(cfg.data)};
    if (!cfg.init_checkpoint.empty()) {
        s.encoder = io::load_checkpoint(cfg.init_checkpoint);
        s.encoder.role = model::Role::Student;
    } else {
        s.encoder = model::ModelWeights::init(cfg.model, cfg.seed);
    }
    s.encoder.set_trainable(!freeze_encoder);
    s.head = ClassifierHead::init(s.encoder.config.dim, s.train.classes(),
                                  Rng::derive(cfg.seed, 0x4ead));
    if (!s.train.size()) throw ConfigError("empty training dataset");
    return s;
}

}  // namespace

ClassifierHead ClassifierHead::init(int64_t dim, int64_t classes, uint64_t seed) {
    Rng rng(seed);
    ClassifierHead h;
    h.weight = Tensor::trunc_normal({dim, classes}, 0.02, rng);
    h.bias = Tensor::zeros({classes});
    h.weight.set_requires_grad(true);
    h.bias.set_requires_grad(true);
    return h;
}

void save_classifier(const model::ModelWeights& encoder, const ClassifierHead& head,
                     const std::string& path) {
    io::NamedTensors bundle;
    bundle.config = encoder.config;
    bundle.role = "classifier";
    encoder.for_each_param([&](const std::string& name, const Tensor& t) {
        bundle.tensors.emplace_back("encoder." + name, t);
    });
    bundle.tensors.emplace_back("head.weight", head.weight);
    bundle.tensors.emplace_back("head.bias", head.bias);
    io::save_named(bundle, path);
}

std::pair<model::ModelWeights, ClassifierHead> load_classifier(const std::string& path) {
    io::NamedTensors bundle = io::load_named(path);
    if (bundle.role != "classifier")
        throw CheckpointError(path + " is not a classifier checkpoint (role " + bundle.role + ")");
    model::ModelWeights encoder = model::ModelWeights::init(bundle.config, 0);
    ClassifierHead head;
    size_t cursor = 0;
    encoder.for_each_param([&](const std::string& name, Tensor& t) {
        if (cursor >= bundle.tensors.size() ||
            bundle.tensors[cursor].first != "encoder." + name)
            throw CheckpointError("classifier checkpoint missing encoder." + name);
        t = bundle.tensors[cursor].second;
        ++cursor;
    });
    if (cursor + 2 != bundle.tensors.size() || bundle.tensors[cursor].first != "head.weight" ||
        bundle.tensors[cursor + 1].first != "head.bias")
        throw CheckpointError("classifier checkpoint has unexpected head parameters");
    head.weight = bundle.tensors[cursor].second;
    head.bias = bundle.tensors[cursor + 1].second;
    encoder.set_trainable(false);
    return {std::move(encoder), std::move(head)};
}

double evaluate_top1(const model::ModelWeights& encoder, const ClassifierHead& head,
                     const data::Dataset& dataset, const data::NormStats& norm,
                     int64_t batch_size, model::Pooling pooling) {
    if (dataset.size() == 0) throw ValueError("evaluate_top1: empty dataset");
    NoGradGuard no_grad;
    int64_t correct = 0;
    for (int64_t begin = 0; begin < dataset.size(); begin += batch_size) {
        const int64_t end = std::min(begin + batch_size, dataset.size());
        data::ImageBatch batch = dataset.batch_range(begin, end);
        data::normalize(batch, norm);
        Tensor pooled = pooled_features(encoder, batch.pixels, pooling);
        Tensor logits = ops::add(ops::matmul(pooled, head.weight), head.bias);
        const int64_t classes = logits.dim(1);
        for (int64_t b = 0; b < end - begin; ++b) {
            int64_t best = 0;
            for (int64_t c = 1; c < classes; ++c)
                if (logits.at({b, c}) > logits.at({b, best})) best = c;
            if (best == batch.labels[static_cast<size_t>(b)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RunResult run_pretrain_moco(const TrainRunConfig& cfg) {
    const auto t0 = Clock::now();
    const fs::path out = prepare_out_dir(cfg);
    data::Dataset ds = load_train_dataset(cfg.data);
    const LoopPlan plan = make_plan(cfg.optim, ds.size());

    auto moco = objectives::MoCoState::init(cfg.model, cfg.seed,
                                            static_cast<float>(cfg.moco_momentum),
                                            static_cast<float>(cfg.moco_temperature));
    std::vector<Tensor> params;
    moco.main_encoder.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
    moco.main_projector.for_each_param("p", [&](const std::string&, Tensor& t) { params.push_back(t); });
    moco.predictor.for_each_param("q", [&](const std::string&, Tensor& t) { params.push_back(t); });
    AdamW opt(params, cfg.optim.adamw);

    io::MetricsLog log((out / "metrics.csv").string(), run_id_of(cfg), {"loss"});
    std::string last_ckpt;
    const std::string final_path = (out / "teacher_moco.ckpt").string();
    Graph graph;
    double loss_value = 0.0;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const auto order = epoch_order(ds.size(), cfg.seed, epoch);
        for (int64_t s = 0; s < plan.steps_per_epoch; ++s, ++step) {
            const int64_t begin = s * cfg.optim.batch_size;
            const int64_t end = std::min(begin + cfg.optim.batch_size, ds.size());
            if (end - begin < 2) continue;  // InfoNCE needs at least two samples
            std::vector<int64_t> idx(order.begin() + begin, order.begin() + end);
            data::ImageBatch raw = ds.batch(idx);

            data::ImageBatch v1 = data::augment(raw, cfg.strong_aug, Rng::derive(cfg.seed, 0xa1, step));
            data::ImageBatch v2 = data::augment(raw, cfg.strong_aug, Rng::derive(cfg.seed, 0xa2, step));
            data::normalize(v1, cfg.data.norm);
            data::normalize(v2, cfg.data.norm);

            GraphScope scope(graph);
            Tensor q1 = moco.predictor.forward(moco.main_projector.forward(
                pooled_features(moco.main_encoder, v1.pixels, model::Pooling::MeanTokens)));
            Tensor q2 = moco.predictor.forward(moco.main_projector.forward(
                pooled_features(moco.main_encoder, v2.pixels, model::Pooling::MeanTokens)));
            Tensor k1, k2;
            {
                NoGradGuard frozen;
                k1 = moco.momentum_projector.forward(pooled_features(
                    moco.momentum_encoder, v1.pixels, model::Pooling::MeanTokens));
                k2 = moco.momentum_projector.forward(pooled_features(
                    moco.momentum_encoder, v2.pixels, model::Pooling::MeanTokens));
            }
            Tensor loss = ops::mul_scalar(
                ops::add(objectives::info_nce(q1, k2, moco.temperature),
                         objectives::info_nce(q2, k1, moco.temperature)),
                0.5f);
            loss_value = static_cast<double>(loss.item());
            check_finite(loss_value, step, last_ckpt);

            graph.backward(loss);
            opt.step(static_cast<float>(lr_at(plan.schedule, step)));
            opt.zero_grad();
            graph.clear();
            moco.momentum_step();

            if (step % cfg.log_every == 0 || step + 1 == plan.total_steps)
                log.append(step + 1,
                           std::chrono::duration<double>(Clock::now() - t0).count(),
                           lr_at(plan.schedule, step), std::vector<double>{loss_value});
            if (cfg.checkpoint_cadence > 0 && (step + 1) % cfg.checkpoint_cadence == 0) {
                model::ModelWeights snap = moco.main_encoder;
                snap.role = model::Role::TeacherMoco;
                last_ckpt = (out / ("teacher_moco_step" + std::to_string(step + 1) + ".ckpt")).string();
                io::save_checkpoint(snap, last_ckpt);
            }
        }
    }

    model::ModelWeights final_weights = moco.main_encoder;
    final_weights.role = model::Role::TeacherMoco;
    io::save_checkpoint(final_weights, final_path);

    RunResult r;
    r.checkpoint = final_path;
    r.final_loss = loss_value;
    r.steps = step;
    r.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

RunResult run_pretrain_mae(const TrainRunConfig& cfg) {
    const auto t0 = Clock::now();
    const fs::path out = prepare_out_dir(cfg);
    data::Dataset ds = load_train_dataset(cfg.data);
    const LoopPlan plan = make_plan(cfg.optim, ds.size());

    auto weights = model::ModelWeights::init(cfg.model, cfg.seed, /*with_decoder=*/true);
    std::vector<Tensor> params;
    weights.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
    AdamW opt(params, cfg.optim.adamw);

    io::MetricsLog log((out / "metrics.csv").string(), run_id_of(cfg), {"loss"});
    std::string last_ckpt;
    Graph graph;
    double loss_value = 0.0;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const auto order = epoch_order(ds.size(), cfg.seed, epoch);
        for (int64_t s = 0; s < plan.steps_per_epoch; ++s, ++step) {
            const int64_t begin = s * cfg.optim.batch_size;
            const int64_t end = std::min(begin + cfg.optim.batch_size, ds.size());
            std::vector<int64_t> idx(order.begin() + begin, order.begin() + end);
            data::ImageBatch view = data::augment(ds.batch(idx), cfg.standard_aug,
                                                  Rng::derive(cfg.seed, 0xae, step));
            data::normalize(view, cfg.data.norm);
            auto mask = data::sample_mask(end - begin, cfg.model.token_count(),
                                          cfg.mae_mask_ratio, Rng::derive(cfg.seed, 0xba, step));

            GraphScope scope(graph);
            Tensor target = model::patchify(view.pixels, cfg.model);
            Tensor enc = model::encode(weights, view.pixels, &mask);
            Tensor pred = model::decode_mae(weights, enc, mask);
            auto loss = objectives::mae_loss(pred, target, mask);
            loss_value = static_cast<double>(loss.value.item());
            check_finite(loss_value, step, last_ckpt);

            graph.backward(loss.value);
            opt.step(static_cast<float>(lr_at(plan.schedule, step)));
            opt.zero_grad();
            graph.clear();

            if (step % cfg.log_every == 0 || step + 1 == plan.total_steps)
                log.append(step + 1,
                           std::chrono::duration<double>(Clock::now() - t0).count(),
                           lr_at(plan.schedule, step), std::vector<double>{loss_value});
            if (cfg.checkpoint_cadence > 0 && (step + 1) % cfg.checkpoint_cadence == 0) {
                model::ModelWeights snap = weights;
                snap.decoder.reset();
                snap.role = model::Role::TeacherMae;
                last_ckpt = (out / ("teacher_mae_step" + std::to_string(step + 1) + ".ckpt")).string();
                io::save_checkpoint(snap, last_ckpt);
            }
        }
    }

    // encoder tagged as the MAE teacher; decoder saved separately, distillation
    // never reads it
    model::ModelWeights encoder_only = weights;
    encoder_only.decoder.reset();
    encoder_only.role = model::Role::TeacherMae;
    const std::string final_path = (out / "teacher_mae.ckpt").string();
    io::save_checkpoint(encoder_only, final_path);

    io::NamedTensors dec;
    dec.config = cfg.model;
    dec.role = "mae_decoder";
    model::ModelWeights full = weights;
    full.for_each_param([&](const std::string& name, Tensor& t) {
        if (name.rfind("decoder.", 0) == 0) dec.tensors.emplace_back(name, t);
    });
    io::save_named(dec, (out / "mae_decoder.ckpt").string());

    RunResult r;
    r.checkpoint = final_path;
    r.final_loss = loss_value;
    r.steps = step;
    r.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

RunResult run_distill(const TrainRunConfig& cfg) {
    const auto t0 = Clock::now();
    const fs::path out = prepare_out_dir(cfg);
    cfg.distill.validate();
    data::Dataset ds = load_train_dataset(cfg.data);
    const LoopPlan plan = make_plan(cfg.optim, ds.size());
    const auto mode = cfg.distill.mode;

    std::optional<model::ModelWeights> t_mae, t_moco;
    if (mode == objectives::DistillMode::MaeToMoco || mode == objectives::DistillMode::Multi)
        t_mae = load_teacher(cfg.teacher_mae_checkpoint, model::Role::TeacherMae);
    if (mode == objectives::DistillMode::MocoToMae || mode == objectives::DistillMode::Multi)
        t_moco = load_teacher(cfg.teacher_moco_checkpoint, model::Role::TeacherMoco);

    model::ModelWeights student = [&] {
        if (cfg.init_checkpoint.empty()) return model::ModelWeights::init(cfg.model, cfg.seed);
        model::ModelWeights w = io::load_checkpoint(cfg.init_checkpoint, &cfg.model);
        w.role = model::Role::Student;
        return w;
    }();
    student.set_trainable(true);

    auto head_mae = model::NormHead::init(t_mae ? t_mae->config.dim : 0);
    auto head_moco = model::NormHead::init(t_moco ? t_moco->config.dim : 0);
    model::Projector proj_mae, proj_moco;
    std::vector<Tensor> params;
    student.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
    if (t_mae) {
        proj_mae = model::Projector::init(student.config.dim, t_mae->config.dim,
                                          Rng::derive(cfg.seed, 0x91));
        params.push_back(proj_mae.weight);
        params.push_back(proj_mae.bias);
    }
    if (t_moco) {
        proj_moco = model::Projector::init(student.config.dim, t_moco->config.dim,
                                           Rng::derive(cfg.seed, 0x92));
        params.push_back(proj_moco.weight);
        params.push_back(proj_moco.bias);
    }
    AdamW opt(params, cfg.optim.adamw);

    const bool multi = mode == objectives::DistillMode::Multi;
    std::vector<std::string> metric_names{"loss", "teacher_grad_norm"};
    if (multi) {
        metric_names.push_back("loss_mae");
        metric_names.push_back("loss_moco");
    }
    io::MetricsLog log((out / "metrics.csv").string(), run_id_of(cfg), metric_names);

    objectives::TeacherBundle mae_bundle{t_mae ? &*t_mae : nullptr, &head_mae};
    objectives::TeacherBundle moco_bundle{t_moco ? &*t_moco : nullptr, &head_moco};

    std::string last_ckpt;
    Graph graph;
    double loss_value = 0.0;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const auto order = epoch_order(ds.size(), cfg.seed, epoch);
        for (int64_t s = 0; s < plan.steps_per_epoch; ++s, ++step) {
            const int64_t begin = s * cfg.optim.batch_size;
            const int64_t end = std::min(begin + cfg.optim.batch_size, ds.size());
            std::vector<int64_t> idx(order.begin() + begin, order.begin() + end);
            data::ImageBatch raw = ds.batch(idx);
            const uint64_t step_seed = Rng::derive(cfg.seed, 0xd1, step);

            GraphScope scope(graph);
            objectives::DistillLossResult result;
            if (multi) {
                result = objectives::multi_teacher_loss(mae_bundle, moco_bundle, student,
                                                        proj_mae, proj_moco, raw, cfg.distill,
                                                        cfg.standard_aug, cfg.strong_aug,
                                                        cfg.data.norm, step_seed);
            } else if (mode == objectives::DistillMode::MaeToMoco) {
                result = objectives::single_teacher_loss(mae_bundle, student, proj_mae, raw,
                                                         cfg.distill, cfg.standard_aug,
                                                         cfg.strong_aug, cfg.data.norm, step_seed);
            } else {
                result = objectives::single_teacher_loss(moco_bundle, student, proj_moco, raw,
                                                         cfg.distill, cfg.standard_aug,
                                                         cfg.strong_aug, cfg.data.norm, step_seed);
            }
            loss_value = static_cast<double>(result.value.item());
            check_finite(loss_value, step, last_ckpt);
            graph.backward(result.value);

            double teacher_gnorm = 0.0;
            if (step % cfg.grad_audit_every == 0) {
                // only {student, projector(s)} may carry gradient
                if (t_mae) teacher_gnorm += grad_norm(*t_mae);
                if (t_moco) teacher_gnorm += grad_norm(*t_moco);
                if (teacher_gnorm != 0.0)
                    throw Error("frozen-teacher contract violated at step " +
                                std::to_string(step));
            }

            opt.step(static_cast<float>(lr_at(plan.schedule, step)));
            opt.zero_grad();
            graph.clear();

            if (step % cfg.log_every == 0 || step + 1 == plan.total_steps) {
                std::vector<double> row{loss_value, teacher_gnorm};
                if (multi) {
                    row.push_back(result.term_mae);
                    row.push_back(result.term_moco);
                }
                log.append(step + 1,
                           std::chrono::duration<double>(Clock::now() - t0).count(),
                           lr_at(plan.schedule, step), row);
            }
            if (cfg.checkpoint_cadence > 0 && (step + 1) % cfg.checkpoint_cadence == 0) {
                last_ckpt = (out / ("student_step" + std::to_string(step + 1) + ".ckpt")).string();
                io::save_checkpoint(student, last_ckpt);
            }
        }
    }

    const std::string final_path = (out / "student.ckpt").string();
    io::save_checkpoint(student, final_path);

    io::NamedTensors projs;
    projs.config = student.config;
    projs.role = "projectors";
    if (t_mae) {
        projs.tensors.emplace_back("projector_mae.weight", proj_mae.weight);
        projs.tensors.emplace_back("projector_mae.bias", proj_mae.bias);
    }
    if (t_moco) {
        projs.tensors.emplace_back("projector_moco.weight", proj_moco.weight);
        projs.tensors.emplace_back("projector_moco.bias", proj_moco.bias);
    }
    io::save_named(projs, (out / "projectors.ckpt").string());

    RunResult r;
    r.checkpoint = final_path;
    r.final_loss = loss_value;
    r.steps = step;
    r.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

namespace {

RunResult run_supervised(const TrainRunConfig& cfg, bool freeze_encoder) {
    const auto t0 = Clock::now();
    const fs::path out = prepare_out_dir(cfg);
    SupervisedSetup s = supervised_setup(cfg, freeze_encoder);
    const LoopPlan plan = make_plan(cfg.optim, s.train.size());

    std::vector<Tensor> params;
    if (!freeze_encoder)
        s.encoder.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
    params.push_back(s.head.weight);
    params.push_back(s.head.bias);
    AdamW opt(params, cfg.optim.adamw);

    io::MetricsLog log((out / "metrics.csv").string(), run_id_of(cfg), {"loss"});
    Graph graph;
    double loss_value = 0.0;
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const auto order = epoch_order(s.train.size(), cfg.seed, epoch);
        for (int64_t st = 0; st < plan.steps_per_epoch; ++st, ++step) {
            const int64_t begin = st * cfg.optim.batch_size;
            const int64_t end = std::min(begin + cfg.optim.batch_size, s.train.size());
            std::vector<int64_t> idx(order.begin() + begin, order.begin() + end);
            data::ImageBatch view = data::augment(s.train.batch(idx), cfg.standard_aug,
                                                  Rng::derive(cfg.seed, 0xf7, step));
            data::normalize(view, cfg.data.norm);

            GraphScope scope(graph);
            Tensor pooled = pooled_features(s.encoder, view.pixels, model::Pooling::MeanTokens);
            Tensor logits = ops::add(ops::matmul(pooled, s.head.weight), s.head.bias);
            Tensor loss = ops::cross_entropy(logits, view.labels);
            loss_value = static_cast<double>(loss.item());
            check_finite(loss_value, step, "");

            graph.backward(loss);
            opt.step(static_cast<float>(lr_at(plan.schedule, step)));
            opt.zero_grad();
            graph.clear();

            if (step % cfg.log_every == 0 || step + 1 == plan.total_steps)
                log.append(step + 1,
                           std::chrono::duration<double>(Clock::now() - t0).count(),
                           lr_at(plan.schedule, step), std::vector<double>{loss_value});
        }
    }

    const std::string final_path = (out / "classifier.ckpt").string();
    save_classifier(s.encoder, s.head, final_path);

    RunResult r;
    r.checkpoint = final_path;
    r.final_loss = loss_value;
    r.steps = step;
    r.top1 = evaluate_top1(s.encoder, s.head, s.eval, cfg.data.norm, cfg.optim.batch_size);
    r.wall_time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

}  // namespace

RunResult run_finetune(const TrainRunConfig& cfg) { return run_supervised(cfg, false); }
RunResult run_linear_probe(const TrainRunConfig& cfg) { return run_supervised(cfg, true); }

RunResult run(const TrainRunConfig& cfg) {
    switch (cfg.kind) {
        case RunKind::PretrainMoco: return run_pretrain_moco(cfg);
        case RunKind::PretrainMae: return run_pretrain_mae(cfg);
        case RunKind::Distill: return run_distill(cfg);
        case RunKind::Finetune: return run_finetune(cfg);
        case RunKind::Probe: return run_linear_probe(cfg);
        case RunKind::Eval: {
            auto [encoder, head] = load_classifier(cfg.init_checkpoint);
            data::Dataset eval = load_eval_dataset(cfg.data);
            RunResult r;
            r.top1 = evaluate_top1(encoder, head, eval, cfg.data.norm, cfg.optim.batch_size);
            return r;
        }
    }
    throw ConfigError("unhandled run kind");
}

}  // namespace moma::train
