#include "moma/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "moma/errors.hpp"
#include "moma/rng.hpp"

namespace moma::data {

void MaskSpec::validate() const {
    if (visible.size() != masked.size())
        throw ValueError("mask: visible/masked batch mismatch");
    const size_t v = visible.empty() ? 0 : visible[0].size();
    for (size_t b = 0; b < visible.size(); ++b) {
        if (visible[b].size() != v)
            throw ValueError("mask: sample " + std::to_string(b) +
                             " visible count differs from sample 0");
        std::vector<char> seen(static_cast<size_t>(token_count), 0);
        for (int64_t i : visible[b]) {
            if (i < 0 || i >= token_count || seen[static_cast<size_t>(i)])
                throw ValueError("mask: bad visible index in sample " + std::to_string(b));
            seen[static_cast<size_t>(i)] = 1;
        }
        for (int64_t i : masked[b]) {
            if (i < 0 || i >= token_count || seen[static_cast<size_t>(i)])
                throw ValueError("mask: bad masked index in sample " + std::to_string(b));
            seen[static_cast<size_t>(i)] = 1;
        }
        if (visible[b].size() + masked[b].size() != static_cast<size_t>(token_count))
            throw ValueError("mask: sample " + std::to_string(b) + " does not partition tokens");
    }
}

int64_t visible_count_for(int64_t token_count, double mask_ratio) {
    return std::llround((1.0 - mask_ratio) * static_cast<double>(token_count));
}

MaskSpec sample_mask(int64_t batch, int64_t token_count, double mask_ratio, uint64_t seed) {
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
        throw ValueError("mask_ratio must be in [0, 1), got " + std::to_string(mask_ratio));
    const int64_t v = visible_count_for(token_count, mask_ratio);
    if (v < 1)
        throw ValueError("mask_ratio " + std::to_string(mask_ratio) + " leaves no visible token of " +
                         std::to_string(token_count));

    MaskSpec spec;
    spec.token_count = token_count;
    spec.mask_ratio = mask_ratio;
    spec.visible.resize(static_cast<size_t>(batch));
    spec.masked.resize(static_cast<size_t>(batch));

    Rng rng(seed);
    std::vector<int64_t> perm(static_cast<size_t>(token_count));
    for (int64_t b = 0; b < batch; ++b) {
        std::iota(perm.begin(), perm.end(), 0);
        // partial Fisher-Yates: the first v entries are the visible subset
        for (int64_t i = 0; i < v; ++i) {
            const int64_t j = i + static_cast<int64_t>(rng.uniform_index(
                                      static_cast<uint64_t>(token_count - i)));
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        }
        auto& vis = spec.visible[static_cast<size_t>(b)];
        auto& msk = spec.masked[static_cast<size_t>(b)];
        vis.assign(perm.begin(), perm.begin() + v);
        msk.assign(perm.begin() + v, perm.end());
        std::sort(vis.begin(), vis.end());
        std::sort(msk.begin(), msk.end());
    }
    return spec;
}

MaskSpec full_visibility(int64_t batch, int64_t token_count) {
    MaskSpec spec;
    spec.token_count = token_count;
    spec.mask_ratio = 0.0;
    spec.visible.assign(static_cast<size_t>(batch), std::vector<int64_t>(static_cast<size_t>(token_count)));
    spec.masked.assign(static_cast<size_t>(batch), {});
    for (auto& v : spec.visible) std::iota(v.begin(), v.end(), 0);
    return spec;
}

}  // namespace moma::data
