#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moma/tensor.hpp"

namespace moma::data {

// Per-channel normalization constants. Pixels are scaled to [0,1] first,
// then (x - mean) / std per channel.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
};

NormStats cifar10_norm();

struct ImageBatch {
    Tensor pixels;  // [B, C, H, W]; raw [0,1] until normalized
    std::vector<int64_t> labels;      // empty when unlabeled
    std::vector<int64_t> sample_ids;  // [B]
    bool normalized = false;

    int64_t size() const { return pixels.defined() ? pixels.dim(0) : 0; }
};

void normalize(ImageBatch& batch, const NormStats& stats);
void denormalize(ImageBatch& batch, const NormStats& stats);

// In-memory dataset; pixels stored as bytes, scaled to [0,1] on batch fetch.
class Dataset {
public:
    Dataset(std::string name, int64_t channels, int64_t height, int64_t width, int64_t classes);

    int64_t size() const { return static_cast<int64_t>(labels_.size()); }
    int64_t channels() const { return channels_; }
    int64_t height() const { return height_; }
    int64_t width() const { return width_; }
    int64_t classes() const { return classes_; }
    const std::string& name() const { return name_; }
    int64_t label(int64_t i) const { return labels_[static_cast<size_t>(i)]; }

    ImageBatch batch(std::span<const int64_t> indices) const;
    ImageBatch batch_range(int64_t begin, int64_t end) const;

    void append_sample(const uint8_t* pixels, int64_t label);
    void truncate(int64_t n);

private:
    std::string name_;
    int64_t channels_, height_, width_, classes_;
    std::vector<uint8_t> pixels_;
    std::vector<int64_t> labels_;
};

// Standard CIFAR binary batches (3073-byte records: label byte + 3072 pixel
// bytes, planar R,G,B row-major). split is "train" or "test". path may be the
// batch directory or a single .bin file.
Dataset load_cifar10(const std::string& path, const std::string& split);

// Class-colored patterns plus noise, linearly separable by construction.
// Deterministic in (n, classes, seed); labels are i % classes.
struct SyntheticSpec {
    int64_t n = 512;
    int64_t classes = 10;
    uint64_t seed = 0;
    int64_t image_size = 32;
    int64_t channels = 3;
    double noise_std = 0.25;
    double color_scale = 1.0;  // < 1 pulls class colors together (harder)
};

Dataset synthetic_dataset(const SyntheticSpec& spec);

// Minimum L2 distance between noiseless class patterns at color_scale 1,
// image 32x32x3; the generator construction guarantees it.
inline constexpr double kSyntheticClassMarginL2 = 2.0;

// Writes a dataset back out in the CIFAR binary record format.
void write_cifar_format(const Dataset& ds, const std::string& file);

}  // namespace moma::data
