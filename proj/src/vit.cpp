#include "moma/vit.hpp"

#include <cmath>

#include "moma/autograd.hpp"
#include "moma/ops.hpp"

namespace moma::model {

std::string role_name(Role role) {
    switch (role) {
        case Role::Student: return "student";
        case Role::TeacherMoco: return "teacher_moco";
        case Role::TeacherMae: return "teacher_mae";
    }
    return "student";
}

Role role_from_name(const std::string& name) {
    if (name == "student") return Role::Student;
    if (name == "teacher_moco") return Role::TeacherMoco;
    if (name == "teacher_mae") return Role::TeacherMae;
    throw ValueError("unknown role tag: " + name);
}

void ViTConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
        throw ValueError("image_size " + std::to_string(image_size) +
                         " not divisible by patch_size " + std::to_string(patch_size));
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
        throw ValueError("dim " + std::to_string(dim) + " not divisible by heads " +
                         std::to_string(heads));
    if (depth <= 0) throw ValueError("depth must be positive");
    if (decoder_depth < 0 || decoder_dim <= 0) throw ValueError("bad decoder shape");
}

ViTConfig ViTConfig::preset(const std::string& name, int64_t image_size, int64_t patch_size) {
    ViTConfig cfg;
    cfg.image_size = image_size;
    cfg.patch_size = patch_size;
    if (name == "base") {
        cfg.depth = 12; cfg.heads = 12; cfg.dim = 768;
        cfg.decoder_depth = 8; cfg.decoder_dim = 512;
    } else if (name == "large") {
        cfg.depth = 24; cfg.heads = 16; cfg.dim = 1024;
        cfg.decoder_depth = 8; cfg.decoder_dim = 512;
    } else if (name == "small") {
        // §4.1 style: 12 layers, 6 heads, width 384
        cfg.depth = 12; cfg.heads = 6; cfg.dim = 384;
        cfg.decoder_depth = 4; cfg.decoder_dim = 256;
    } else if (name == "tiny") {
        cfg.depth = 6; cfg.heads = 4; cfg.dim = 128;
        cfg.decoder_depth = 2; cfg.decoder_dim = 64;
    } else if (name == "micro") {
        cfg.depth = 4; cfg.heads = 4; cfg.dim = 64;
        cfg.decoder_depth = 1; cfg.decoder_dim = 32;
    } else {
        throw ValueError("unknown preset: " + name);
    }
    cfg.validate();
    return cfg;
}

namespace {

int64_t block_param_count(int64_t d, int64_t hidden) {
    int64_t n = 0;
    n += 2 * d;                // ln1
    n += d * 3 * d + 3 * d;    // qkv
    n += d * d + d;            // proj
    n += 2 * d;                // ln2
    n += d * hidden + hidden;  // fc1
    n += hidden * d + d;       // fc2
    return n;
}

}  // namespace

int64_t ViTConfig::encoder_param_count() const {
    int64_t n = patch_dim() * dim + dim;
    n += (token_count() + (use_class_token ? 1 : 0)) * dim;
    if (use_class_token) n += dim;
    n += depth * block_param_count(dim, mlp_hidden());
    n += 2 * dim;  // final norm
    return n;
}

int64_t ViTConfig::decoder_param_count() const {
    int64_t n = dim * decoder_dim + decoder_dim;  // embed
    n += decoder_dim;                             // mask token
    n += token_count() * decoder_dim;             // positions
    n += decoder_depth * block_param_count(decoder_dim, decoder_mlp_hidden());
    n += 2 * decoder_dim;                         // norm
    n += decoder_dim * patch_dim() + patch_dim(); // prediction head
    return n;
}

namespace {

template <typename S>
BlockWeightsT<S> init_block(int64_t d, int64_t hidden, Rng& rng) {
    BlockWeightsT<S> b;
    b.ln1_gamma = TensorT<S>::ones({d});
    b.ln1_beta = TensorT<S>::zeros({d});
    b.qkv_weight = TensorT<S>::trunc_normal({d, 3 * d}, 0.02, rng);
    b.qkv_bias = TensorT<S>::zeros({3 * d});
    b.proj_weight = TensorT<S>::trunc_normal({d, d}, 0.02, rng);
    b.proj_bias = TensorT<S>::zeros({d});
    b.ln2_gamma = TensorT<S>::ones({d});
    b.ln2_beta = TensorT<S>::zeros({d});
    b.fc1_weight = TensorT<S>::trunc_normal({d, hidden}, 0.02, rng);
    b.fc1_bias = TensorT<S>::zeros({hidden});
    b.fc2_weight = TensorT<S>::trunc_normal({hidden, d}, 0.02, rng);
    b.fc2_bias = TensorT<S>::zeros({d});
    return b;
}

template <typename S, typename Fn>
void visit_block(BlockWeightsT<S>& b, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".ln1.gamma", b.ln1_gamma);
    fn(prefix + ".ln1.beta", b.ln1_beta);
    fn(prefix + ".qkv.weight", b.qkv_weight);
    fn(prefix + ".qkv.bias", b.qkv_bias);
    fn(prefix + ".proj.weight", b.proj_weight);
    fn(prefix + ".proj.bias", b.proj_bias);
    fn(prefix + ".ln2.gamma", b.ln2_gamma);
    fn(prefix + ".ln2.beta", b.ln2_beta);
    fn(prefix + ".fc1.weight", b.fc1_weight);
    fn(prefix + ".fc1.bias", b.fc1_bias);
    fn(prefix + ".fc2.weight", b.fc2_weight);
    fn(prefix + ".fc2.bias", b.fc2_bias);
}

}  // namespace

template <typename S>
ModelWeightsT<S> ModelWeightsT<S>::init(const ViTConfig& cfg, uint64_t seed, bool with_decoder,
                                        Role role) {
    cfg.validate();
    Rng rng(Rng::derive(seed, 0x11a0de1));
    ModelWeightsT<S> w;
    w.config = cfg;
    w.role = role;
    w.patch_embed_weight = TensorT<S>::trunc_normal({cfg.patch_dim(), cfg.dim}, 0.02, rng);
    w.patch_embed_bias = TensorT<S>::zeros({cfg.dim});
    const int64_t pos_rows = cfg.token_count() + (cfg.use_class_token ? 1 : 0);
    w.pos_embed = TensorT<S>::trunc_normal({pos_rows, cfg.dim}, 0.02, rng);
    if (cfg.use_class_token) w.cls_token = TensorT<S>::trunc_normal({cfg.dim}, 0.02, rng);
    for (int64_t i = 0; i < cfg.depth; ++i)
        w.blocks.push_back(init_block<S>(cfg.dim, cfg.mlp_hidden(), rng));
    w.final_norm_gamma = TensorT<S>::ones({cfg.dim});
    w.final_norm_beta = TensorT<S>::zeros({cfg.dim});

    if (with_decoder) {
        DecoderWeightsT<S> d;
        d.embed_weight = TensorT<S>::trunc_normal({cfg.dim, cfg.decoder_dim}, 0.02, rng);
        d.embed_bias = TensorT<S>::zeros({cfg.decoder_dim});
        d.mask_token = TensorT<S>::trunc_normal({cfg.decoder_dim}, 0.02, rng);
        d.pos_embed = TensorT<S>::trunc_normal({cfg.token_count(), cfg.decoder_dim}, 0.02, rng);
        for (int64_t i = 0; i < cfg.decoder_depth; ++i)
            d.blocks.push_back(init_block<S>(cfg.decoder_dim, cfg.decoder_mlp_hidden(), rng));
        d.norm_gamma = TensorT<S>::ones({cfg.decoder_dim});
        d.norm_beta = TensorT<S>::zeros({cfg.decoder_dim});
        d.pred_weight = TensorT<S>::trunc_normal({cfg.decoder_dim, cfg.patch_dim()}, 0.02, rng);
        d.pred_bias = TensorT<S>::zeros({cfg.patch_dim()});
        w.decoder = std::move(d);
    }
    w.set_trainable(role == Role::Student);
    return w;
}

template <typename S>
void ModelWeightsT<S>::for_each_param(
    const std::function<void(const std::string&, TensorT<S>&)>& fn) {
    fn("patch_embed.weight", patch_embed_weight);
    fn("patch_embed.bias", patch_embed_bias);
    fn("pos_embed", pos_embed);
    if (config.use_class_token) fn("cls_token", cls_token);
    for (size_t i = 0; i < blocks.size(); ++i)
        visit_block(blocks[i], "blocks." + std::to_string(i), fn);
    fn("final_norm.gamma", final_norm_gamma);
    fn("final_norm.beta", final_norm_beta);
    if (decoder) {
        auto& d = *decoder;
        fn("decoder.embed.weight", d.embed_weight);
        fn("decoder.embed.bias", d.embed_bias);
        fn("decoder.mask_token", d.mask_token);
        fn("decoder.pos_embed", d.pos_embed);
        for (size_t i = 0; i < d.blocks.size(); ++i)
            visit_block(d.blocks[i], "decoder.blocks." + std::to_string(i), fn);
        fn("decoder.norm.gamma", d.norm_gamma);
        fn("decoder.norm.beta", d.norm_beta);
        fn("decoder.pred.weight", d.pred_weight);
        fn("decoder.pred.bias", d.pred_bias);
    }
}

template <typename S>
void ModelWeightsT<S>::for_each_param(
    const std::function<void(const std::string&, const TensorT<S>&)>& fn) const {
    auto* self = const_cast<ModelWeightsT<S>*>(this);
    self->for_each_param(
        [&](const std::string& name, TensorT<S>& t) { fn(name, t); });
}

template <typename S>
std::vector<std::pair<std::string, TensorT<S>>> ModelWeightsT<S>::named_params() {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    for_each_param([&](const std::string& name, TensorT<S>& t) { out.emplace_back(name, t); });
    return out;
}

template <typename S>
void ModelWeightsT<S>::set_trainable(bool trainable) {
    for_each_param([&](const std::string&, TensorT<S>& t) { t.set_requires_grad(trainable); });
}

template <typename S>
int64_t ModelWeightsT<S>::param_count() const {
    int64_t n = 0;
    for_each_param([&](const std::string&, const TensorT<S>& t) { n += t.numel(); });
    return n;
}

template <typename S>
ModelWeightsT<S> ModelWeightsT<S>::clone() const {
    ModelWeightsT<S> copy = *this;  // handles still share storage here
    copy.for_each_param([](const std::string&, TensorT<S>& t) { t = t.clone(); });
    return copy;
}

template <typename S>
ProjectorT<S> ProjectorT<S>::init(int64_t dim_student, int64_t dim_teacher, uint64_t seed) {
    Rng rng(Rng::derive(seed, 0x9103));
    ProjectorT<S> p;
    p.weight = TensorT<S>::trunc_normal({dim_student, dim_teacher}, 0.02, rng);
    p.bias = TensorT<S>::zeros({dim_teacher});
    p.set_trainable(true);
    return p;
}

template <typename S>
ProjectorT<S> ProjectorT<S>::identity(int64_t dim) {
    ProjectorT<S> p;
    std::vector<S> eye(static_cast<size_t>(dim * dim), S(0));
    for (int64_t i = 0; i < dim; ++i) eye[static_cast<size_t>(i * dim + i)] = S(1);
    p.weight = TensorT<S>(Shape{dim, dim}, std::move(eye));
    p.bias = TensorT<S>::zeros({dim});
    p.set_trainable(true);
    return p;
}

template <typename S>
void ProjectorT<S>::set_trainable(bool trainable) {
    weight.set_requires_grad(trainable);
    bias.set_requires_grad(trainable);
}

template <typename S>
NormHeadT<S> NormHeadT<S>::init(int64_t dim_teacher) {
    NormHeadT<S> h;
    h.gamma = TensorT<S>::ones({dim_teacher});
    h.beta = TensorT<S>::zeros({dim_teacher});
    return h;
}

template <typename S>
TensorT<S> patchify(const TensorT<S>& images, const ViTConfig& cfg) {
    if (images.rank() != 4 || images.dim(1) != cfg.in_channels ||
        images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size)
        throw ShapeError("patchify: images " + shape_str(images.shape()) + " do not match config " +
                         std::to_string(cfg.in_channels) + "x" + std::to_string(cfg.image_size) +
                         "x" + std::to_string(cfg.image_size));
    const int64_t B = images.dim(0), C = cfg.in_channels;
    const int64_t G = cfg.grid_size(), P = cfg.patch_size, H = cfg.image_size;
    const int64_t N = cfg.token_count(), D = cfg.patch_dim();
    std::vector<S> out(static_cast<size_t>(B * N * D));
    auto px = images.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gy = 0; gy < G; ++gy)
            for (int64_t gx = 0; gx < G; ++gx) {
                const int64_t n = gy * G + gx;
                S* dst = out.data() + (b * N + n) * D;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t dy = 0; dy < P; ++dy)
                        for (int64_t dx = 0; dx < P; ++dx)
                            *dst++ = px[((b * C + c) * H + gy * P + dy) * H + gx * P + dx];
            }
    return TensorT<S>(Shape{B, N, D}, std::move(out));
}

namespace {

template <typename S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    return ops::add(ops::matmul(x, w), b);
}

template <typename S>
TensorT<S> run_block(const TensorT<S>& x_in, const BlockWeightsT<S>& blk, int64_t heads) {
    const int64_t B = x_in.dim(0), T = x_in.dim(1), d = x_in.dim(2);
    const int64_t dh = d / heads;

    TensorT<S> h = ops::layer_norm(x_in, blk.ln1_gamma, blk.ln1_beta);
    TensorT<S> qkv = linear(h, blk.qkv_weight, blk.qkv_bias);
    auto split_heads = [&](TensorT<S> t) {
        return ops::transpose(ops::reshape(t, {B, T, heads, dh}), 1, 2);  // [B,H,T,dh]
    };
    TensorT<S> q = split_heads(ops::slice(qkv, 2, 0, d));
    TensorT<S> k = split_heads(ops::slice(qkv, 2, d, d));
    TensorT<S> v = split_heads(ops::slice(qkv, 2, 2 * d, d));

    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
    TensorT<S> scores = ops::mul_scalar(ops::matmul(q, ops::transpose(k, 2, 3)), scale);
    TensorT<S> attn = ops::softmax(scores, -1);
    TensorT<S> ctx = ops::matmul(attn, v);                                // [B,H,T,dh]
    ctx = ops::reshape(ops::transpose(ctx, 1, 2), {B, T, d});
    TensorT<S> x = ops::add(x_in, linear(ctx, blk.proj_weight, blk.proj_bias));

    TensorT<S> h2 = ops::layer_norm(x, blk.ln2_gamma, blk.ln2_beta);
    TensorT<S> f = ops::gelu(linear(h2, blk.fc1_weight, blk.fc1_bias));
    return ops::add(x, linear(f, blk.fc2_weight, blk.fc2_bias));
}

}  // namespace

template <typename S>
TensorT<S> encode(const ModelWeightsT<S>& w, const TensorT<S>& images, const data::MaskSpec* mask,
                  bool stop_patch_grad) {
    const ViTConfig& cfg = w.config;
    const int64_t N = cfg.token_count();
    const int64_t B = images.dim(0);

    std::optional<NoGradGuard> frozen;
    if (w.role != Role::Student) frozen.emplace();

    TensorT<S> tokens = linear(patchify(images, cfg), w.patch_embed_weight, w.patch_embed_bias);
    if (stop_patch_grad) tokens = tokens.detach();

    const data::MaskSpec full = mask ? data::MaskSpec{} : data::full_visibility(B, N);
    const data::MaskSpec& m = mask ? *mask : full;
    if (m.token_count != N)
        throw ShapeError("encode: mask over " + std::to_string(m.token_count) +
                         " tokens, model has " + std::to_string(N));
    if (m.batch() != B) throw ShapeError("encode: mask batch != image batch");
    for (int64_t b = 1; b < m.batch(); ++b)
        if (m.visible[static_cast<size_t>(b)].size() != m.visible[0].size())
            throw ShapeError("encode: sample " + std::to_string(b) +
                             " visible count differs from sample 0");

    const int64_t cls_offset = cfg.use_class_token ? 1 : 0;
    std::vector<std::vector<int64_t>> pos_idx = m.visible;
    if (cls_offset)
        for (auto& row : pos_idx)
            for (auto& i : row) i += 1;

    TensorT<S> x = ops::add(ops::gather_tokens(tokens, m.visible),
                            ops::embed_rows(w.pos_embed, pos_idx));

    if (cfg.use_class_token) {
        TensorT<S> cls = ops::broadcast_token(w.cls_token, B);
        std::vector<std::vector<int64_t>> zero_idx(static_cast<size_t>(B),
                                                   std::vector<int64_t>{0});
        cls = ops::add(cls, ops::embed_rows(w.pos_embed, zero_idx));
        x = ops::concat(cls, x, 1);
    }

    for (const auto& blk : w.blocks) x = run_block(x, blk, cfg.heads);
    return ops::layer_norm(x, w.final_norm_gamma, w.final_norm_beta);
}

template <typename S>
TensorT<S> decode_mae(const ModelWeightsT<S>& w, const TensorT<S>& encoded_visible,
                      const data::MaskSpec& mask) {
    if (!w.decoder) throw ValueError("decode_mae: model has no decoder weights");
    const ViTConfig& cfg = w.config;
    const auto& d = *w.decoder;
    const int64_t N = cfg.token_count();

    TensorT<S> vis = encoded_visible;
    if (cfg.use_class_token) vis = ops::slice(vis, 1, 1, vis.dim(1) - 1);
    if (vis.dim(1) != mask.visible_count() || mask.token_count != N)
        throw ShapeError("decode_mae: encoded " + shape_str(vis.shape()) +
                         " inconsistent with mask (V=" + std::to_string(mask.visible_count()) +
                         ", N=" + std::to_string(mask.token_count) + ")");

    TensorT<S> emb = linear(vis, d.embed_weight, d.embed_bias);
    TensorT<S> full = ops::scatter_tokens(emb, d.mask_token, mask.visible, N);
    full = ops::add(full, d.pos_embed);
    for (const auto& blk : d.blocks) full = run_block(full, blk, cfg.heads);
    full = ops::layer_norm(full, d.norm_gamma, d.norm_beta);
    return linear(full, d.pred_weight, d.pred_bias);
}

namespace {

template <typename S>
TensorT<S> pool_features(const TensorT<S>& features, Pooling pooling, bool has_class_token) {
    if (pooling == Pooling::ClassToken) {
        if (!has_class_token)
            throw ValueError("class-token pooling requires use_class_token");
        TensorT<S> cls = ops::slice(features, 1, 0, 1);
        return ops::reshape(cls, {features.dim(0), features.dim(2)});
    }
    TensorT<S> tokens = has_class_token
                            ? ops::slice(features, 1, 1, features.dim(1) - 1)
                            : features;
    return ops::mean_axis(tokens, 1);
}

}  // namespace

template <typename S>
TensorT<S> student_representation(const TensorT<S>& features, const ProjectorT<S>& projector,
                                  Pooling pooling, bool has_class_token) {
    TensorT<S> pooled = pool_features(features, pooling, has_class_token);
    return ops::add(ops::matmul(pooled, projector.weight), projector.bias);
}

template <typename S>
TensorT<S> teacher_representation(const TensorT<S>& features, const NormHeadT<S>& head,
                                  Pooling pooling, bool has_class_token) {
    NoGradGuard frozen;
    TensorT<S> pooled = pool_features(features.detach(), pooling, has_class_token);
    return ops::layer_norm(pooled, head.gamma, head.beta, head.eps);
}

#define MOMA_INSTANTIATE_VIT(S)                                                                 \
    template struct ModelWeightsT<S>;                                                          \
    template struct ProjectorT<S>;                                                             \
    template struct NormHeadT<S>;                                                              \
    template TensorT<S> patchify<S>(const TensorT<S>&, const ViTConfig&);                      \
    template TensorT<S> encode<S>(const ModelWeightsT<S>&, const TensorT<S>&,                  \
                                  const data::MaskSpec*, bool);                                \
    template TensorT<S> decode_mae<S>(const ModelWeightsT<S>&, const TensorT<S>&,              \
                                      const data::MaskSpec&);                                  \
    template TensorT<S> student_representation<S>(const TensorT<S>&, const ProjectorT<S>&,     \
                                                  Pooling, bool);                              \
    template TensorT<S> teacher_representation<S>(const TensorT<S>&, const NormHeadT<S>&,      \
                                                  Pooling, bool);

MOMA_INSTANTIATE_VIT(float)
MOMA_INSTANTIATE_VIT(double)

}  // namespace moma::model
