#pragma once

#include <cstdint>
#include <vector>

namespace moma::data {

// Per-sample partition of token indices into visible and masked sets.
struct MaskSpec {
    int64_t token_count = 0;
    double mask_ratio = 0.0;
    std::vector<std::vector<int64_t>> visible;  // sorted, length V per sample
    std::vector<std::vector<int64_t>> masked;   // sorted complement

    int64_t batch() const { return static_cast<int64_t>(visible.size()); }
    int64_t visible_count() const { return visible.empty() ? 0 : static_cast<int64_t>(visible[0].size()); }
    int64_t masked_count() const { return token_count - visible_count(); }

    // Throws unless visible/masked partition {0..N-1} per sample with equal V.
    void validate() const;
};

// round((1 - ratio) * n); the rounding rule every mask consumer shares.
int64_t visible_count_for(int64_t token_count, double mask_ratio);

// Uniform random subset without replacement, independent per sample,
// deterministic under seed. Requires 0 <= ratio < 1 and V >= 1.
MaskSpec sample_mask(int64_t batch, int64_t token_count, double mask_ratio, uint64_t seed);

// ratio-0 mask: every token visible, in order.
MaskSpec full_visibility(int64_t batch, int64_t token_count);

}  // namespace moma::data
