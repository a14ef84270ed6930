#include "moma/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "moma/rng.hpp"

namespace moma::data {

namespace fs = std::filesystem;

NormStats cifar10_norm() {
    return NormStats{{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
}

void normalize(ImageBatch& batch, const NormStats& stats) {
    if (batch.normalized) return;
    const int64_t B = batch.pixels.dim(0), C = batch.pixels.dim(1);
    const int64_t plane = batch.pixels.dim(2) * batch.pixels.dim(3);
    auto px = batch.pixels.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const float m = static_cast<float>(stats.mean[static_cast<size_t>(c)]);
            const float inv = 1.0f / static_cast<float>(stats.std[static_cast<size_t>(c)]);
            float* p = px.data() + (b * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
        }
    batch.normalized = true;
}

void denormalize(ImageBatch& batch, const NormStats& stats) {
    if (!batch.normalized) return;
    const int64_t B = batch.pixels.dim(0), C = batch.pixels.dim(1);
    const int64_t plane = batch.pixels.dim(2) * batch.pixels.dim(3);
    auto px = batch.pixels.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const float m = static_cast<float>(stats.mean[static_cast<size_t>(c)]);
            const float s = static_cast<float>(stats.std[static_cast<size_t>(c)]);
            float* p = px.data() + (b * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) p[i] = p[i] * s + m;
        }
    batch.normalized = false;
}

Dataset::Dataset(std::string name, int64_t channels, int64_t height, int64_t width,
                 int64_t classes)
    : name_(std::move(name)), channels_(channels), height_(height), width_(width),
      classes_(classes) {}

void Dataset::append_sample(const uint8_t* pixels, int64_t label) {
    pixels_.insert(pixels_.end(), pixels, pixels + channels_ * height_ * width_);
    labels_.push_back(label);
}

void Dataset::truncate(int64_t n) {
    if (n >= size()) return;
    labels_.resize(static_cast<size_t>(n));
    pixels_.resize(static_cast<size_t>(n * channels_ * height_ * width_));
}

ImageBatch Dataset::batch(std::span<const int64_t> indices) const {
    const int64_t B = static_cast<int64_t>(indices.size());
    const int64_t stride = channels_ * height_ * width_;
    std::vector<float> px(static_cast<size_t>(B * stride));
    ImageBatch out;
    out.labels.reserve(static_cast<size_t>(B));
    out.sample_ids.assign(indices.begin(), indices.end());
    constexpr float kInv255 = 1.0f / 255.0f;
    for (int64_t b = 0; b < B; ++b) {
        const int64_t i = indices[static_cast<size_t>(b)];
        if (i < 0 || i >= size())
            throw ValueError("dataset index " + std::to_string(i) + " out of range");
        const uint8_t* src = pixels_.data() + i * stride;
        float* dst = px.data() + b * stride;
        for (int64_t j = 0; j < stride; ++j) dst[j] = static_cast<float>(src[j]) * kInv255;
        out.labels.push_back(labels_[static_cast<size_t>(i)]);
    }
    out.pixels = Tensor(Shape{B, channels_, height_, width_}, std::move(px));
    return out;
}

ImageBatch Dataset::batch_range(int64_t begin, int64_t end) const {
    std::vector<int64_t> idx(static_cast<size_t>(end - begin));
    for (int64_t i = begin; i < end; ++i) idx[static_cast<size_t>(i - begin)] = i;
    return batch(idx);
}

namespace {

void load_cifar_file(Dataset& ds, const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open " + file.string());
    in.seekg(0, std::ios::end);
    const int64_t bytes = static_cast<int64_t>(in.tellg());
    in.seekg(0);
    constexpr int64_t kRecord = 3073;
    if (bytes % kRecord != 0)
        throw IoError("truncated record in " + file.string() + ": " + std::to_string(bytes) +
                      " bytes is not a multiple of 3073");
    std::vector<uint8_t> record(kRecord);
    const int64_t n = bytes / kRecord;
    for (int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(record.data()), kRecord);
        if (!in) throw IoError("short read in " + file.string());
        const int64_t label = record[0];
        if (label >= 10)
            throw IoError("label byte " + std::to_string(label) + " >= 10 in " + file.string() +
                          " record " + std::to_string(i));
        ds.append_sample(record.data() + 1, label);
    }
}

}  // namespace

Dataset load_cifar10(const std::string& path, const std::string& split) {
    if (split != "train" && split != "test")
        throw ValueError("cifar10 split must be train or test, got " + split);
    Dataset ds("cifar10-" + split, 3, 32, 32, 10);
    const fs::path p(path);
    if (fs::is_regular_file(p)) {
        load_cifar_file(ds, p);
        return ds;
    }
    if (!fs::is_directory(p)) throw IoError("cifar10 path not found: " + path);
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) {
            const fs::path f = p / ("data_batch_" + std::to_string(i) + ".bin");
            if (!fs::exists(f)) throw IoError("missing cifar10 file: " + f.string());
            load_cifar_file(ds, f);
        }
    } else {
        const fs::path f = p / "test_batch.bin";
        if (!fs::exists(f)) throw IoError("missing cifar10 file: " + f.string());
        load_cifar_file(ds, f);
    }
    return ds;
}

namespace {

// Distinct base color per class from an HSV wheel.
void class_color(int64_t c, int64_t classes, double scale, double rgb[3]) {
    const double h = 6.0 * static_cast<double>(c) / static_cast<double>(std::max<int64_t>(classes, 1));
    const double s = 0.8 * scale, v = 0.62;
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

}  // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec) {
    if (spec.n < spec.classes)
        throw ValueError("synthetic dataset needs n >= classes");
    Dataset ds("synthetic", spec.channels, spec.image_size, spec.image_size, spec.classes);
    const int64_t S = spec.image_size, C = spec.channels;

    // noiseless class patterns: flat base color plus a class-positioned blob
    std::vector<double> patterns(static_cast<size_t>(spec.classes * C * S * S));
    for (int64_t c = 0; c < spec.classes; ++c) {
        double rgb[3];
        class_color(c, spec.classes, spec.color_scale, rgb);
        const double ang = 2.0 * 3.14159265358979323846 * static_cast<double>(c) /
                           static_cast<double>(spec.classes);
        const double cx = (0.5 + 0.32 * std::cos(ang)) * static_cast<double>(S);
        const double cy = (0.5 + 0.32 * std::sin(ang)) * static_cast<double>(S);
        const double sigma = 0.16 * static_cast<double>(S);
        for (int64_t ch = 0; ch < C; ++ch)
            for (int64_t y = 0; y < S; ++y)
                for (int64_t x = 0; x < S; ++x) {
                    const double d2 = (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx) +
                                      (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy);
                    const double blob = 0.35 * spec.color_scale * std::exp(-d2 / (2 * sigma * sigma));
                    const double base = rgb[ch % 3];
                    patterns[((c * C + ch) * S + y) * S + x] = std::clamp(base + blob, 0.0, 1.0);
                }
    }

    std::vector<uint8_t> sample(static_cast<size_t>(C * S * S));
    for (int64_t i = 0; i < spec.n; ++i) {
        const int64_t label = i % spec.classes;
        Rng rng(Rng::derive(spec.seed, 0x5d5, static_cast<uint64_t>(i)));
        const double* pat = patterns.data() + label * C * S * S;
        for (int64_t j = 0; j < C * S * S; ++j) {
            const double v = std::clamp(pat[j] + spec.noise_std * rng.normal(), 0.0, 1.0);
            sample[static_cast<size_t>(j)] = static_cast<uint8_t>(std::lround(v * 255.0));
        }
        ds.append_sample(sample.data(), label);
    }
    return ds;
}

void write_cifar_format(const Dataset& ds, const std::string& file) {
    if (ds.channels() != 3 || ds.height() != 32 || ds.width() != 32)
        throw ValueError("cifar format requires 3x32x32 samples");
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write " + file);
    for (int64_t i = 0; i < ds.size(); ++i) {
        ImageBatch b = ds.batch_range(i, i + 1);
        const uint8_t label = static_cast<uint8_t>(b.labels[0]);
        out.put(static_cast<char>(label));
        auto px = b.pixels.data();
        for (int64_t j = 0; j < 3072; ++j)
            out.put(static_cast<char>(std::lround(std::clamp(px[j], 0.0f, 1.0f) * 255.0f)));
    }
}

}  // namespace moma::data
