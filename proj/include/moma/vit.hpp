#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "moma/masking.hpp"
#include "moma/tensor.hpp"

namespace moma::model {

enum class Role { Student, TeacherMoco, TeacherMae };

std::string role_name(Role role);
Role role_from_name(const std::string& name);

// Architecture description; parameter counts are a pure function of this.
struct ViTConfig {
    int64_t image_size = 32;
    int64_t patch_size = 4;
    int64_t in_channels = 3;
    int64_t depth = 4;
    int64_t heads = 4;
    int64_t dim = 64;
    double mlp_ratio = 4.0;
    int64_t decoder_depth = 1;
    int64_t decoder_dim = 32;
    bool use_class_token = false;

    bool operator==(const ViTConfig&) const = default;

    int64_t grid_size() const { return image_size / patch_size; }
    int64_t token_count() const { return grid_size() * grid_size(); }
    int64_t patch_dim() const { return patch_size * patch_size * in_channels; }
    int64_t head_dim() const { return dim / heads; }
    int64_t mlp_hidden() const { return static_cast<int64_t>(static_cast<double>(dim) * mlp_ratio); }
    int64_t decoder_mlp_hidden() const {
        return static_cast<int64_t>(static_cast<double>(decoder_dim) * mlp_ratio);
    }

    void validate() const;

    // base (12/12/768), large (24/16/1024), small (12/6/384),
    // tiny (6/4/128), micro (4/4/64)
    static ViTConfig preset(const std::string& name, int64_t image_size = 32,
                            int64_t patch_size = 4);

    int64_t encoder_param_count() const;
    int64_t decoder_param_count() const;
};

template <typename S>
struct BlockWeightsT {
    TensorT<S> ln1_gamma, ln1_beta;
    TensorT<S> qkv_weight, qkv_bias;
    TensorT<S> proj_weight, proj_bias;
    TensorT<S> ln2_gamma, ln2_beta;
    TensorT<S> fc1_weight, fc1_bias;
    TensorT<S> fc2_weight, fc2_bias;
};

template <typename S>
struct DecoderWeightsT {
    TensorT<S> embed_weight, embed_bias;  // dim -> decoder_dim
    TensorT<S> mask_token;                // [decoder_dim], shared, learned
    TensorT<S> pos_embed;                 // [N, decoder_dim]
    std::vector<BlockWeightsT<S>> blocks;
    TensorT<S> norm_gamma, norm_beta;
    TensorT<S> pred_weight, pred_bias;    // decoder_dim -> patch_dim
};

// All learnable arrays of one transformer, plus its role tag. Teacher-tagged
// weights are frozen: every tensor has requires_grad off and trainers never
// step them.
template <typename S>
struct ModelWeightsT {
    ViTConfig config;
    Role role = Role::Student;

    TensorT<S> patch_embed_weight;  // [patch_dim, dim]
    TensorT<S> patch_embed_bias;    // [dim]
    TensorT<S> pos_embed;           // [N(+1), dim]; row 0 is the class slot
    TensorT<S> cls_token;           // [dim] when use_class_token
    std::vector<BlockWeightsT<S>> blocks;
    TensorT<S> final_norm_gamma, final_norm_beta;
    std::optional<DecoderWeightsT<S>> decoder;

    static ModelWeightsT init(const ViTConfig& cfg, uint64_t seed, bool with_decoder = false,
                              Role role = Role::Student);

    // Fixed construction-order traversal; checkpoint manifests, optimizer
    // state and EMA pairing all rely on this order.
    void for_each_param(const std::function<void(const std::string&, TensorT<S>&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const TensorT<S>&)>& fn) const;

    std::vector<std::pair<std::string, TensorT<S>>> named_params();

    void set_trainable(bool trainable);
    int64_t param_count() const;
    ModelWeightsT clone() const;
};

// Lightweight single linear layer matching student width to teacher width.
template <typename S>
struct ProjectorT {
    TensorT<S> weight;  // [dim_student, dim_teacher]
    TensorT<S> bias;    // [dim_teacher]

    static ProjectorT init(int64_t dim_student, int64_t dim_teacher, uint64_t seed);
    static ProjectorT identity(int64_t dim);
    void set_trainable(bool trainable);
};

// Layer normalization applied to teacher outputs; frozen with the teacher.
template <typename S>
struct NormHeadT {
    TensorT<S> gamma;
    TensorT<S> beta;
    S eps = S(1e-6);

    static NormHeadT init(int64_t dim_teacher);
};

enum class Pooling { MeanTokens, ClassToken };

// [B, C, H, W] -> [B, N, patch_size^2 * C]; raster-order patches, each
// flattened channel-major.
template <typename S>
TensorT<S> patchify(const TensorT<S>& images, const ViTConfig& cfg);

// Full encoder: patch embed -> (optional stop-gradient) -> positions of
// visible tokens -> optional class token -> blocks -> final norm.
// mask == nullptr means every token is visible. Teacher-tagged weights run
// with gradient tracking disabled.
template <typename S>
TensorT<S> encode(const ModelWeightsT<S>& w, const TensorT<S>& images,
                  const data::MaskSpec* mask = nullptr, bool stop_patch_grad = false);

// MAE decoder over an encoded visible sequence: project to decoder width,
// insert the shared mask token at masked positions, add decoder positions,
// run decoder blocks, project to pixel space. Output [B, N, patch_dim].
template <typename S>
TensorT<S> decode_mae(const ModelWeightsT<S>& w, const TensorT<S>& encoded_visible,
                      const data::MaskSpec& mask);

// Pool student features over (visible) tokens, then project to teacher width.
template <typename S>
TensorT<S> student_representation(const TensorT<S>& features, const ProjectorT<S>& projector,
                                  Pooling pooling, bool has_class_token);

// Pool teacher features over all tokens, then apply the frozen norm head.
// Never tracks gradients.
template <typename S>
TensorT<S> teacher_representation(const TensorT<S>& features, const NormHeadT<S>& head,
                                  Pooling pooling, bool has_class_token);

using ModelWeights = ModelWeightsT<float>;
using Projector = ProjectorT<float>;
using NormHead = NormHeadT<float>;

}  // namespace moma::model
