#pragma once

#include <cstdint>
#include <vector>

#include "moma/tensor.hpp"

namespace moma::train {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Decoupled weight decay (param -= lr*wd*param) followed by the
// bias-corrected Adam update. Moments live per parameter, in step order.
template <typename S>
class AdamWT {
public:
    AdamWT(std::vector<TensorT<S>> params, AdamWConfig cfg);

    // Missing grads count as zero; non-finite grads abort the step.
    void step(S lr);
    void zero_grad();

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<TensorT<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    int64_t t_ = 0;
    AdamWConfig cfg_;
};

using AdamW = AdamWT<float>;

// Linear warmup 0 -> base_lr, then cosine from base_lr to min_lr.
struct Schedule {
    int64_t total_steps = 1;
    int64_t warmup_steps = 0;
    double base_lr = 1.5e-4;
    double min_lr = 0.0;

    void validate() const;
};

double lr_at(const Schedule& schedule, int64_t step);

}  // namespace moma::train
