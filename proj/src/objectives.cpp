#include "moma/objectives.hpp"

#include <cmath>

#include "moma/autograd.hpp"

namespace moma::objectives {

std::string mode_name(DistillMode mode) {
    switch (mode) {
        case DistillMode::MaeToMoco: return "mae_to_moco";
        case DistillMode::MocoToMae: return "moco_to_mae";
        case DistillMode::Multi: return "multi";
    }
    return "multi";
}

DistillMode mode_from_name(const std::string& name) {
    if (name == "mae_to_moco") return DistillMode::MaeToMoco;
    if (name == "moco_to_mae") return DistillMode::MocoToMae;
    if (name == "multi") return DistillMode::Multi;
    throw ValueError("unknown distill mode: " + name +
                     " (expected mae_to_moco, moco_to_mae or multi)");
}

void DistillConfig::validate() const {
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
        throw ValueError("distill.mask_ratio must be in [0, 1), got " + std::to_string(mask_ratio));
    if (teacher_mask_ratio < 0.0 || teacher_mask_ratio >= 1.0)
        throw ValueError("distill.teacher_mask_ratio must be in [0, 1)");
    if (alpha < 0.0 || beta < 0.0) throw ValueError("distill weights must be >= 0");
    if (mode == DistillMode::Multi && alpha + beta <= 0.0)
        throw ValueError("multi mode requires alpha + beta > 0");
    if (smooth_l1_beta <= 0.0) throw ValueError("smooth_l1_beta must be > 0");
}

template <typename S>
TensorT<S> info_nce(const TensorT<S>& queries, const TensorT<S>& keys, S temperature) {
    if (queries.rank() != 2 || keys.rank() != 2 || queries.shape() != keys.shape())
        throw ShapeError("info_nce: queries " + shape_str(queries.shape()) + " vs keys " +
                         shape_str(keys.shape()));
    const int64_t B = queries.dim(0);
    if (B < 2) throw ValueError("info_nce needs batch >= 2, got " + std::to_string(B));
    if (!(temperature > S(0))) throw ValueError("info_nce temperature must be > 0");

    TensorT<S> qn = ops::l2_normalize(queries);
    TensorT<S> kn = ops::l2_normalize(keys.detach());
    TensorT<S> logits = ops::mul_scalar(ops::matmul(qn, ops::transpose(kn, 0, 1)),
                                        S(1) / temperature);
    std::vector<int64_t> labels(static_cast<size_t>(B));
    for (int64_t i = 0; i < B; ++i) labels[static_cast<size_t>(i)] = i;
    TensorT<S> fwd = ops::cross_entropy(logits, labels);
    TensorT<S> bwd = ops::cross_entropy(ops::transpose(logits, 0, 1), labels);
    return ops::mul_scalar(ops::add(fwd, bwd), S(0.5));
}

template <typename S>
MaeLossT<S> mae_loss(const TensorT<S>& prediction, const TensorT<S>& target,
                     const data::MaskSpec& mask) {
    if (prediction.shape() != target.shape())
        throw ShapeError("mae_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
    if (prediction.rank() != 3 || prediction.dim(1) != mask.token_count)
        throw ShapeError("mae_loss: shapes disagree with mask token count " +
                         std::to_string(mask.token_count));
    if (mask.masked_count() == 0)
        return {TensorT<S>::scalar(S(0)), /*empty_masked_set=*/true};

    TensorT<S> pred_masked = ops::gather_tokens(prediction, mask.masked);
    TensorT<S> target_masked = ops::gather_tokens(target.detach(), mask.masked);
    TensorT<S> diff = ops::sub(pred_masked, target_masked);
    return {ops::mean(ops::mul(diff, diff)), false};
}

template <typename S>
void ema_update(model::ModelWeightsT<S>& momentum, const model::ModelWeightsT<S>& main, S m) {
    std::vector<std::pair<std::string, TensorT<S>*>> mom, cur;
    momentum.for_each_param([&](const std::string& n, TensorT<S>& t) { mom.emplace_back(n, &t); });
    const_cast<model::ModelWeightsT<S>&>(main).for_each_param(
        [&](const std::string& n, TensorT<S>& t) { cur.emplace_back(n, &t); });
    if (mom.size() != cur.size()) throw ValueError("ema_update: parameter tree mismatch");
    for (size_t i = 0; i < mom.size(); ++i) {
        if (mom[i].first != cur[i].first || mom[i].second->shape() != cur[i].second->shape())
            throw ValueError("ema_update: tree mismatch at " + mom[i].first);
        auto dst = mom[i].second->mutable_data();
        auto src = cur[i].second->data();
        for (size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (S(1) - m) * src[j];
    }
}

template <typename S>
MlpHeadT<S> MlpHeadT<S>::init(int64_t in, int64_t hidden, int64_t out, uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x331f));
    MlpHeadT<S> h;
    h.fc1_weight = TensorT<S>::trunc_normal({in, hidden}, 0.02, rng);
    h.fc1_bias = TensorT<S>::zeros({hidden});
    h.fc2_weight = TensorT<S>::trunc_normal({hidden, out}, 0.02, rng);
    h.fc2_bias = TensorT<S>::zeros({out});
    h.set_trainable(true);
    return h;
}

template <typename S>
TensorT<S> MlpHeadT<S>::forward(const TensorT<S>& x) const {
    TensorT<S> h = ops::gelu(ops::add(ops::matmul(x, fc1_weight), fc1_bias));
    return ops::add(ops::matmul(h, fc2_weight), fc2_bias);
}

template <typename S>
void MlpHeadT<S>::for_each_param(const std::string& prefix,
                                 const std::function<void(const std::string&, TensorT<S>&)>& fn) {
    fn(prefix + ".fc1.weight", fc1_weight);
    fn(prefix + ".fc1.bias", fc1_bias);
    fn(prefix + ".fc2.weight", fc2_weight);
    fn(prefix + ".fc2.bias", fc2_bias);
}

template <typename S>
void MlpHeadT<S>::set_trainable(bool trainable) {
    for (TensorT<S>* t : {&fc1_weight, &fc1_bias, &fc2_weight, &fc2_bias})
        t->set_requires_grad(trainable);
}

template <typename S>
MlpHeadT<S> MlpHeadT<S>::clone() const {
    MlpHeadT<S> copy = *this;
    copy.fc1_weight = fc1_weight.clone();
    copy.fc1_bias = fc1_bias.clone();
    copy.fc2_weight = fc2_weight.clone();
    copy.fc2_bias = fc2_bias.clone();
    return copy;
}

template <typename S>
void ema_update_head(MlpHeadT<S>& momentum, const MlpHeadT<S>& main, S m) {
    auto blend = [m](TensorT<S>& dst_t, const TensorT<S>& src_t) {
        auto dst = dst_t.mutable_data();
        auto src = src_t.data();
        if (dst.size() != src.size()) throw ValueError("ema_update: head tree mismatch");
        for (size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (S(1) - m) * src[j];
    };
    blend(momentum.fc1_weight, main.fc1_weight);
    blend(momentum.fc1_bias, main.fc1_bias);
    blend(momentum.fc2_weight, main.fc2_weight);
    blend(momentum.fc2_bias, main.fc2_bias);
}

template <typename S>
MoCoStateT<S> MoCoStateT<S>::init(const model::ViTConfig& cfg, uint64_t seed, S m, S tau) {
    MoCoStateT<S> st;
    st.main_encoder = model::ModelWeightsT<S>::init(cfg, seed);
    st.momentum_encoder = st.main_encoder.clone();
    st.momentum_encoder.set_trainable(false);
    st.main_projector = MlpHeadT<S>::init(cfg.dim, 2 * cfg.dim, cfg.dim, Rng::derive(seed, 1));
    st.momentum_projector = st.main_projector.clone();
    st.momentum_projector.set_trainable(false);
    st.predictor = MlpHeadT<S>::init(cfg.dim, 2 * cfg.dim, cfg.dim, Rng::derive(seed, 2));
    st.momentum = m;
    st.temperature = tau;
    return st;
}

template <typename S>
void MoCoStateT<S>::momentum_step() {
    ema_update(momentum_encoder, main_encoder, momentum);
    ema_update_head(momentum_projector, main_projector, momentum);
}

namespace {

void check_projector(const model::Projector& proj, int64_t dim_student, int64_t dim_teacher,
                     const char* which) {
    if (proj.weight.dim(0) != dim_student || proj.weight.dim(1) != dim_teacher)
        throw ShapeError(std::string("projector ") + which + " is " +
                         shape_str(proj.weight.shape()) + ", need [" +
                         std::to_string(dim_student) + "," + std::to_string(dim_teacher) + "]");
}

Tensor teacher_rep_for(const TeacherBundle& teacher, const data::ImageBatch& view,
                       const DistillConfig& cfg, uint64_t mask_seed) {
    NoGradGuard frozen;
    const model::ViTConfig& tcfg = teacher.weights->config;
    Tensor feats;
    if (cfg.teacher_mask_ratio > 0.0) {
        auto tmask = data::sample_mask(view.size(), tcfg.token_count(), cfg.teacher_mask_ratio,
                                       mask_seed);
        feats = model::encode(*teacher.weights, view.pixels, &tmask);
    } else {
        feats = model::encode(*teacher.weights, view.pixels);
    }
    return model::teacher_representation(feats, *teacher.norm_head, cfg.pooling,
                                         tcfg.use_class_token);
}

}  // namespace

DistillLossResult single_teacher_loss(const TeacherBundle& teacher, model::ModelWeights& student,
                                      const model::Projector& projector,
                                      const data::ImageBatch& raw_batch, const DistillConfig& cfg,
                                      const data::AugPolicy& standard_aug,
                                      const data::AugPolicy& strong_aug,
                                      const data::NormStats& norm, uint64_t step_seed) {
    cfg.validate();
    check_projector(projector, student.config.dim, teacher.weights->config.dim, "student->teacher");

    data::ImageBatch teacher_view = data::augment(raw_batch, standard_aug, Rng::derive(step_seed, 1));
    data::normalize(teacher_view, norm);

    // Student rides the teacher's view unless this direction uses strong
    // augmentation (MoCo teacher pre-trained on strong views).
    const bool strong = cfg.mode == DistillMode::MocoToMae && cfg.student_strong_aug;
    data::ImageBatch student_view;
    if (strong) {
        student_view = data::augment(raw_batch, strong_aug, Rng::derive(step_seed, 2));
        data::normalize(student_view, norm);
    } else {
        student_view = teacher_view;
    }

    const int64_t n_tokens = student.config.token_count();
    auto mask = data::sample_mask(raw_batch.size(), n_tokens, cfg.mask_ratio,
                                  Rng::derive(step_seed, 3));

    Tensor target = teacher_rep_for(teacher, teacher_view, cfg, Rng::derive(step_seed, 4));
    Tensor feats = model::encode(student, student_view.pixels, &mask, cfg.stop_patch_grad);
    Tensor rep = model::student_representation(feats, projector, cfg.pooling,
                                               student.config.use_class_token);
    Tensor loss = ops::smooth_l1(rep, target, static_cast<float>(cfg.smooth_l1_beta));

    DistillLossResult out;
    out.value = loss;
    out.views.teacher_view = cfg.teacher_mask_ratio > 0.0 ? "standard+mask" : "standard";
    out.views.student_view = strong ? "strong+mask" : "standard+mask";
    out.views.student_visible_count = mask.visible_count();
    return out;
}

DistillLossResult multi_teacher_loss(const TeacherBundle& teacher_mae,
                                     const TeacherBundle& teacher_moco,
                                     model::ModelWeights& student,
                                     const model::Projector& projector_mae,
                                     const model::Projector& projector_moco,
                                     const data::ImageBatch& raw_batch, const DistillConfig& cfg,
                                     const data::AugPolicy& standard_aug,
                                     const data::AugPolicy& strong_aug,
                                     const data::NormStats& norm, uint64_t step_seed) {
    cfg.validate();
    check_projector(projector_mae, student.config.dim, teacher_mae.weights->config.dim, "mae");
    check_projector(projector_moco, student.config.dim, teacher_moco.weights->config.dim, "moco");

    data::ImageBatch teacher_view = data::augment(raw_batch, standard_aug, Rng::derive(step_seed, 1));
    data::normalize(teacher_view, norm);

    Tensor target_mae = teacher_rep_for(teacher_mae, teacher_view, cfg, Rng::derive(step_seed, 4));
    Tensor target_moco = teacher_rep_for(teacher_moco, teacher_view, cfg, Rng::derive(step_seed, 5));

    const int64_t n_tokens = student.config.token_count();
    auto mask = data::sample_mask(raw_batch.size(), n_tokens, cfg.mask_ratio,
                                  Rng::derive(step_seed, 3));
    const bool cls = student.config.use_class_token;

    DistillLossResult out;
    out.views.teacher_view = cfg.teacher_mask_ratio > 0.0 ? "standard+mask" : "standard";
    out.views.student_visible_count = mask.visible_count();

    Tensor term_mae, term_moco;
    if (cfg.split_student_views) {
        // §3.4 routing: masked view aligns with the MAE teacher, strong
        // unmasked view with the MoCo teacher.
        Tensor feats_masked = model::encode(student, teacher_view.pixels, &mask,
                                            cfg.stop_patch_grad);
        Tensor rep_masked = model::student_representation(feats_masked, projector_mae,
                                                          cfg.pooling, cls);
        data::ImageBatch strong_view = data::augment(raw_batch, strong_aug,
                                                     Rng::derive(step_seed, 2));
        data::normalize(strong_view, norm);
        Tensor feats_strong = model::encode(student, strong_view.pixels, nullptr,
                                            cfg.stop_patch_grad);
        Tensor rep_strong = model::student_representation(feats_strong, projector_moco,
                                                          cfg.pooling, cls);
        term_mae = ops::smooth_l1(rep_masked, target_mae, static_cast<float>(cfg.smooth_l1_beta));
        term_moco = ops::smooth_l1(rep_strong, target_moco, static_cast<float>(cfg.smooth_l1_beta));
        out.views.student_view = "standard+mask";
        out.views.student_view_moco = "strong";
    } else {
        // Eq. 4 as printed: one masked student view feeds both terms.
        Tensor feats = model::encode(student, teacher_view.pixels, &mask, cfg.stop_patch_grad);
        Tensor rep_mae = model::student_representation(feats, projector_mae, cfg.pooling, cls);
        Tensor rep_moco = model::student_representation(feats, projector_moco, cfg.pooling, cls);
        term_mae = ops::smooth_l1(rep_mae, target_mae, static_cast<float>(cfg.smooth_l1_beta));
        term_moco = ops::smooth_l1(rep_moco, target_moco, static_cast<float>(cfg.smooth_l1_beta));
        out.views.student_view = "standard+mask";
    }

    out.term_mae = static_cast<double>(term_mae.item());
    out.term_moco = static_cast<double>(term_moco.item());
    out.value = ops::add(ops::mul_scalar(term_mae, static_cast<float>(cfg.alpha)),
                         ops::mul_scalar(term_moco, static_cast<float>(cfg.beta)));
    return out;
}

#define MOMA_INSTANTIATE_OBJECTIVES(S)                                                          \
    template TensorT<S> info_nce<S>(const TensorT<S>&, const TensorT<S>&, S);                  \
    template MaeLossT<S> mae_loss<S>(const TensorT<S>&, const TensorT<S>&,                     \
                                     const data::MaskSpec&);                                   \
    template void ema_update<S>(model::ModelWeightsT<S>&, const model::ModelWeightsT<S>&, S);  \
    template struct MlpHeadT<S>;                                                               \
    template void ema_update_head<S>(MlpHeadT<S>&, const MlpHeadT<S>&, S);                     \
    template struct MoCoStateT<S>;

MOMA_INSTANTIATE_OBJECTIVES(float)
MOMA_INSTANTIATE_OBJECTIVES(double)

}  // namespace moma::objectives
