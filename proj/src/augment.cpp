#include "moma/augment.hpp"

#include <algorithm>
#include <cmath>

#include "moma/rng.hpp"

namespace moma::data {

AugPolicy AugPolicy::none() {
    AugPolicy p;
    p.kind = Kind::None;
    return p;
}

AugPolicy AugPolicy::standard() {
    AugPolicy p;
    p.kind = Kind::Standard;
    return p;
}

AugPolicy AugPolicy::strong() {
    AugPolicy p;
    p.kind = Kind::Strong;
    return p;
}

std::string AugPolicy::kind_name() const {
    switch (kind) {
        case Kind::None: return "none";
        case Kind::Standard: return "standard";
        case Kind::Strong: return "strong";
    }
    return "none";
}

void AugPolicy::validate() const {
    auto prob = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0)
            throw ValueError(std::string("augment: ") + name + " must be a probability, got " +
                             std::to_string(p));
    };
    prob(flip_prob, "flip_prob");
    prob(jitter_prob, "jitter_prob");
    prob(grayscale_prob, "grayscale_prob");
    prob(blur_prob, "blur_prob");
    prob(solarize_prob, "solarize_prob");
    if (crop_scale_min <= 0.0 || crop_scale_max > 1.0 || crop_scale_min > crop_scale_max)
        throw ValueError("augment: crop scale range must lie in (0, 1]");
    if (blur_sigma_min <= 0.0 || blur_sigma_min > blur_sigma_max)
        throw ValueError("augment: bad blur sigma range");
}

namespace {

struct Image {
    float* px;  // [C, H, W]
    int64_t c, h, w;
    float& at(int64_t ch, int64_t y, int64_t x) { return px[(ch * h + y) * w + x]; }
    float get(int64_t ch, int64_t y, int64_t x) const { return px[(ch * h + y) * w + x]; }
};

void crop_resize(Image img, std::vector<float>& tmp, Rng& rng, double smin, double smax) {
    const double scale = rng.uniform(smin, smax);
    const int64_t full = std::min(img.h, img.w);
    const int64_t side = std::clamp<int64_t>(
        static_cast<int64_t>(std::lround(std::sqrt(scale) * static_cast<double>(full))), 1, full);
    const int64_t y0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(img.h - side + 1)));
    const int64_t x0 = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(img.w - side + 1)));

    tmp.assign(static_cast<size_t>(img.c * img.h * img.w), 0.0f);
    const double sy_scale = static_cast<double>(side) / static_cast<double>(img.h);
    const double sx_scale = static_cast<double>(side) / static_cast<double>(img.w);
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y) {
            const double sy = (static_cast<double>(y) + 0.5) * sy_scale - 0.5;
            const int64_t yl = static_cast<int64_t>(std::floor(sy));
            const double fy = sy - static_cast<double>(yl);
            const int64_t y1 = std::clamp<int64_t>(yl, 0, side - 1) + y0;
            const int64_t y2 = std::clamp<int64_t>(yl + 1, 0, side - 1) + y0;
            for (int64_t x = 0; x < img.w; ++x) {
                const double sx = (static_cast<double>(x) + 0.5) * sx_scale - 0.5;
                const int64_t xl = static_cast<int64_t>(std::floor(sx));
                const double fx = sx - static_cast<double>(xl);
                const int64_t x1 = std::clamp<int64_t>(xl, 0, side - 1) + x0;
                const int64_t x2 = std::clamp<int64_t>(xl + 1, 0, side - 1) + x0;
                const double v =
                    (1 - fy) * ((1 - fx) * img.get(ch, y1, x1) + fx * img.get(ch, y1, x2)) +
                    fy * ((1 - fx) * img.get(ch, y2, x1) + fx * img.get(ch, y2, x2));
                tmp[static_cast<size_t>((ch * img.h + y) * img.w + x)] = static_cast<float>(v);
            }
        }
    std::copy(tmp.begin(), tmp.end(), img.px);
}

void hflip(Image img) {
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w / 2; ++x)
                std::swap(img.at(ch, y, x), img.at(ch, y, img.w - 1 - x));
}

float luma(const Image& img, int64_t y, int64_t x) {
    if (img.c == 3)
        return 0.299f * img.get(0, y, x) + 0.587f * img.get(1, y, x) + 0.114f * img.get(2, y, x);
    float s = 0;
    for (int64_t ch = 0; ch < img.c; ++ch) s += img.get(ch, y, x);
    return s / static_cast<float>(img.c);
}

void color_jitter(Image img, Rng& rng, double strength) {
    const float fb = static_cast<float>(rng.uniform(1.0 - strength, 1.0 + strength));
    const float fc = static_cast<float>(rng.uniform(1.0 - strength, 1.0 + strength));
    const float fs = static_cast<float>(rng.uniform(1.0 - strength, 1.0 + strength));

    const int64_t total = img.c * img.h * img.w;
    for (int64_t i = 0; i < total; ++i) img.px[i] = std::clamp(img.px[i] * fb, 0.0f, 1.0f);

    float mean_gray = 0;
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) mean_gray += luma(img, y, x);
    mean_gray /= static_cast<float>(img.h * img.w);
    for (int64_t i = 0; i < total; ++i)
        img.px[i] = std::clamp(fc * img.px[i] + (1 - fc) * mean_gray, 0.0f, 1.0f);

    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
            const float g = luma(img, y, x);
            for (int64_t ch = 0; ch < img.c; ++ch)
                img.at(ch, y, x) = std::clamp(fs * img.get(ch, y, x) + (1 - fs) * g, 0.0f, 1.0f);
        }
}

void grayscale(Image img) {
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
            const float g = luma(img, y, x);
            for (int64_t ch = 0; ch < img.c; ++ch) img.at(ch, y, x) = g;
        }
}

// Separable gaussian, kernel radius ceil(2*sigma), replicate edges.
void gaussian_blur(Image img, std::vector<float>& tmp, double sigma) {
    const int64_t radius = static_cast<int64_t>(std::ceil(2.0 * sigma));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int64_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = static_cast<float>(v);
        sum += v;
    }
    for (float& k : kernel) k = static_cast<float>(k / sum);

    tmp.assign(static_cast<size_t>(img.c * img.h * img.w), 0.0f);
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) {
                float acc = 0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    const int64_t xx = std::clamp<int64_t>(x + i, 0, img.w - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] * img.get(ch, y, xx);
                }
                tmp[static_cast<size_t>((ch * img.h + y) * img.w + x)] = acc;
            }
    std::copy(tmp.begin(), tmp.end(), img.px);
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) {
                float acc = 0;
                for (int64_t i = -radius; i <= radius; ++i) {
                    const int64_t yy = std::clamp<int64_t>(y + i, 0, img.h - 1);
                    acc += kernel[static_cast<size_t>(i + radius)] * img.get(ch, yy, x);
                }
                tmp[static_cast<size_t>((ch * img.h + y) * img.w + x)] = acc;
            }
    std::copy(tmp.begin(), tmp.end(), img.px);
}

void solarize(Image img, float threshold) {
    const int64_t total = img.c * img.h * img.w;
    for (int64_t i = 0; i < total; ++i)
        if (img.px[i] >= threshold) img.px[i] = 1.0f - img.px[i];
}

}  // namespace

ImageBatch augment(const ImageBatch& batch, const AugPolicy& policy, uint64_t seed) {
    policy.validate();
    if (batch.normalized)
        throw ValueError("augment operates on raw [0,1] pixels, before normalization");

    ImageBatch out;
    out.pixels = batch.pixels.clone();
    out.labels = batch.labels;
    out.sample_ids = batch.sample_ids;

    if (policy.kind == AugPolicy::Kind::None) return out;

    const int64_t B = out.pixels.dim(0), C = out.pixels.dim(1);
    const int64_t H = out.pixels.dim(2), W = out.pixels.dim(3);
    auto px = out.pixels.mutable_data();
    std::vector<float> tmp;

    for (int64_t b = 0; b < B; ++b) {
        Rng rng(Rng::derive(seed, 0xa06, static_cast<uint64_t>(b)));
        Image img{px.data() + b * C * H * W, C, H, W};

        crop_resize(img, tmp, rng, policy.crop_scale_min, policy.crop_scale_max);
        if (rng.bernoulli(policy.flip_prob)) hflip(img);

        if (policy.kind == AugPolicy::Kind::Strong) {
            if (rng.bernoulli(policy.jitter_prob)) color_jitter(img, rng, policy.jitter_strength);
            if (rng.bernoulli(policy.grayscale_prob)) grayscale(img);
            if (rng.bernoulli(policy.blur_prob))
                gaussian_blur(img, tmp, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
            if (rng.bernoulli(policy.solarize_prob)) solarize(img, static_cast<float>(policy.solarize_threshold));
        }
    }
    return out;
}

}  // namespace moma::data
