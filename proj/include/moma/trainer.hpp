#pragma once

#include <optional>
#include <string>

#include "moma/augment.hpp"
#include "moma/dataset.hpp"
#include "moma/objectives.hpp"
#include "moma/optim.hpp"
#include "moma/vit.hpp"

namespace moma::train {

enum class RunKind { PretrainMoco, PretrainMae, Distill, Finetune, Probe, Eval };

std::string run_kind_name(RunKind kind);
RunKind run_kind_from_name(const std::string& name);

struct DataConfig {
    std::string dataset = "synthetic";  // synthetic | cifar10
    std::string path;                   // cifar10 batch directory
    int64_t train_limit = 0;            // 0 = use everything
    int64_t eval_limit = 0;
    data::SyntheticSpec synthetic;
    data::NormStats norm = data::cifar10_norm();
};

struct OptimConfig {
    int64_t epochs = 20;
    int64_t batch_size = 128;
    double base_lr = 1.5e-4;            // at the reference batch size
    int64_t lr_reference_batch = 4096;  // effective lr = base_lr * batch / reference
    double min_lr = 0.0;
    int64_t warmup_epochs = 4;
    AdamWConfig adamw;

    double effective_lr() const {
        return base_lr * static_cast<double>(batch_size) / static_cast<double>(lr_reference_batch);
    }
};

struct TrainRunConfig {
    RunKind kind = RunKind::Distill;
    uint64_t seed = 0;
    std::string run_id;
    std::string out_dir;

    model::ViTConfig model;  // the trained model (student for distill)
    objectives::DistillConfig distill;
    std::string teacher_moco_checkpoint;
    std::string teacher_mae_checkpoint;
    std::string init_checkpoint;  // student init / finetune / probe encoder

    DataConfig data;
    OptimConfig optim;
    data::AugPolicy standard_aug = data::AugPolicy::standard();
    data::AugPolicy strong_aug = data::AugPolicy::strong();

    double moco_momentum = 0.99;
    double moco_temperature = 0.2;
    double mae_mask_ratio = 0.75;

    int64_t checkpoint_cadence = 0;  // steps between periodic snapshots; 0 = final only
    int64_t log_every = 10;
    int64_t grad_audit_every = 50;  // distill: verify only student/projectors carry grads
};

struct RunResult {
    std::string checkpoint;  // primary artifact path
    double final_loss = 0.0;
    double top1 = -1.0;
    int64_t steps = 0;
    double wall_time_s = 0.0;
};

RunResult run_pretrain_moco(const TrainRunConfig& cfg);
RunResult run_pretrain_mae(const TrainRunConfig& cfg);
RunResult run_distill(const TrainRunConfig& cfg);
RunResult run_finetune(const TrainRunConfig& cfg);
RunResult run_linear_probe(const TrainRunConfig& cfg);
RunResult run(const TrainRunConfig& cfg);

// Linear classifier on pooled encoder output.
struct ClassifierHead {
    Tensor weight;  // [dim, classes]
    Tensor bias;    // [classes]
    static ClassifierHead init(int64_t dim, int64_t classes, uint64_t seed);
};

void save_classifier(const model::ModelWeights& encoder, const ClassifierHead& head,
                     const std::string& path);
std::pair<model::ModelWeights, ClassifierHead> load_classifier(const std::string& path);

// Fraction of eval samples whose argmax logit matches the label.
double evaluate_top1(const model::ModelWeights& encoder, const ClassifierHead& head,
                     const data::Dataset& dataset, const data::NormStats& norm,
                     int64_t batch_size = 256,
                     model::Pooling pooling = model::Pooling::MeanTokens);

data::Dataset load_train_dataset(const DataConfig& cfg);
data::Dataset load_eval_dataset(const DataConfig& cfg);

// Flattened copy of every parameter, for bitwise before/after comparisons.
std::vector<float> snapshot_params(const model::ModelWeights& weights);

// L2 norm of all gradients currently held by the weights (exactly 0 when no
// grad buffer exists anywhere).
double grad_norm(const model::ModelWeights& weights);

}  // namespace moma::train
