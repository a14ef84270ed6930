#pragma once

#include <string>

#include "moma/augment.hpp"
#include "moma/dataset.hpp"
#include "moma/masking.hpp"
#include "moma/ops.hpp"
#include "moma/vit.hpp"

namespace moma::objectives {

using ops::smooth_l1;

enum class DistillMode { MaeToMoco, MocoToMae, Multi };

std::string mode_name(DistillMode mode);
DistillMode mode_from_name(const std::string& name);

struct DistillConfig {
    DistillMode mode = DistillMode::Multi;
    double alpha = 0.5;
    double beta = 0.5;
    double mask_ratio = 0.9;
    bool student_strong_aug = true;   // takes effect in moco_to_mae only
    double teacher_mask_ratio = 0.0;  // ablation switch; degrades quality
    double smooth_l1_beta = 1.0;
    model::Pooling pooling = model::Pooling::MeanTokens;
    bool stop_patch_grad = false;
    // Multi-teacher only: route a strong unmasked student view to the MoCo
    // term and a masked view to the MAE term, instead of one shared masked
    // view for both terms.
    bool split_student_views = false;

    void validate() const;
};

// Symmetrized InfoNCE over in-batch negatives (K = B - 1). Rows are
// L2-normalized internally; keys are detached, gradient reaches queries only.
template <typename S>
TensorT<S> info_nce(const TensorT<S>& queries, const TensorT<S>& keys, S temperature);

template <typename S>
struct MaeLossT {
    TensorT<S> value;
    bool empty_masked_set = false;  // warning flag: loss is 0 by convention
};

// Mean squared error over masked positions only.
template <typename S>
MaeLossT<S> mae_loss(const TensorT<S>& prediction, const TensorT<S>& target,
                     const data::MaskSpec& mask);

// momentum <- m * momentum + (1 - m) * main, elementwise over matching trees.
template <typename S>
void ema_update(model::ModelWeightsT<S>& momentum, const model::ModelWeightsT<S>& main, S m);

// 2-layer MLP used for MoCo projection and prediction heads.
template <typename S>
struct MlpHeadT {
    TensorT<S> fc1_weight, fc1_bias, fc2_weight, fc2_bias;

    static MlpHeadT init(int64_t in, int64_t hidden, int64_t out, uint64_t seed);
    TensorT<S> forward(const TensorT<S>& x) const;
    void for_each_param(const std::string& prefix,
                        const std::function<void(const std::string&, TensorT<S>&)>& fn);
    void set_trainable(bool trainable);
    MlpHeadT clone() const;
};

template <typename S>
void ema_update_head(MlpHeadT<S>& momentum, const MlpHeadT<S>& main, S m);

// Query branch (encoder + projector + predictor) and EMA key branch.
template <typename S>
struct MoCoStateT {
    model::ModelWeightsT<S> main_encoder;
    model::ModelWeightsT<S> momentum_encoder;
    MlpHeadT<S> main_projector, momentum_projector, predictor;
    S momentum = S(0.99);
    S temperature = S(0.2);

    static MoCoStateT init(const model::ViTConfig& cfg, uint64_t seed, S m = S(0.99),
                           S tau = S(0.2));
    void momentum_step();
};

using MoCoState = MoCoStateT<float>;
using MlpHead = MlpHeadT<float>;

// Which views each branch consumed in a distillation step.
struct ViewRecord {
    std::string teacher_view;
    std::string student_view;
    std::string student_view_moco;  // multi with split views, else empty
    int64_t student_visible_count = 0;
};

struct TeacherBundle {
    const model::ModelWeights* weights = nullptr;
    const model::NormHead* norm_head = nullptr;
};

struct DistillLossResult {
    Tensor value;
    ViewRecord views;
    double term_mae = 0.0;   // multi mode per-term values
    double term_moco = 0.0;
};

// One distillation step's loss. The teacher consumes the unmasked
// standard-augmented image; the student consumes the masked view (strong
// augmentation first when mode is moco_to_mae and student_strong_aug is on).
// All randomness derives from step_seed.
DistillLossResult single_teacher_loss(const TeacherBundle& teacher, model::ModelWeights& student,
                                      const model::Projector& projector,
                                      const data::ImageBatch& raw_batch, const DistillConfig& cfg,
                                      const data::AugPolicy& standard_aug,
                                      const data::AugPolicy& strong_aug,
                                      const data::NormStats& norm, uint64_t step_seed);

// Weighted two-teacher alignment: alpha * SmoothL1(P(S), N(T_mae)) +
// beta * SmoothL1(P(S), N(T_moco)), one projector per teacher.
DistillLossResult multi_teacher_loss(const TeacherBundle& teacher_mae,
                                     const TeacherBundle& teacher_moco,
                                     model::ModelWeights& student,
                                     const model::Projector& projector_mae,
                                     const model::Projector& projector_moco,
                                     const data::ImageBatch& raw_batch, const DistillConfig& cfg,
                                     const data::AugPolicy& standard_aug,
                                     const data::AugPolicy& strong_aug,
                                     const data::NormStats& norm, uint64_t step_seed);

}  // namespace moma::objectives
