#pragma once

#include <cstdint>
#include <string>

#include "moma/dataset.hpp"

namespace moma::data {

// The two augmentation policies: standard is random resized crop plus
// horizontal flip; strong adds color jitter, grayscale, gaussian blur and
// solarization on top. Operates on raw [0,1] pixels, before normalization.
struct AugPolicy {
    enum class Kind { None, Standard, Strong };
    Kind kind = Kind::Standard;

    double crop_scale_min = 0.2;
    double crop_scale_max = 1.0;
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    double jitter_strength = 0.4;
    double grayscale_prob = 0.2;
    double blur_prob = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;
    double solarize_prob = 0.2;
    double solarize_threshold = 0.5;

    static AugPolicy none();
    static AugPolicy standard();
    static AugPolicy strong();

    void validate() const;
    std::string kind_name() const;
};

// Pure function of (batch, policy, seed): identical outputs across calls and
// across runs. Labels and sample ids pass through.
ImageBatch augment(const ImageBatch& batch, const AugPolicy& policy, uint64_t seed);

}  // namespace moma::data
