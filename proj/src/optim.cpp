#include "moma/optim.hpp"

#include <cmath>

#include "moma/errors.hpp"

namespace moma::train {

template <typename S>
AdamWT<S>::AdamWT(std::vector<TensorT<S>> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), S(0));
        v_.emplace_back(static_cast<size_t>(p.numel()), S(0));
    }
}

template <typename S>
void AdamWT<S>::step(S lr) {
    if (lr < S(0)) throw ValueError("adamw: negative learning rate");
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        TensorT<S>& p = params_[i];
        auto data = p.mutable_data();
        const S* g = p.has_grad() ? p.grad().data() : nullptr;
        auto& m = m_[i];
        auto& v = v_[i];
        const S decay = static_cast<S>(1.0 - static_cast<double>(lr) * cfg_.weight_decay);
        for (size_t j = 0; j < data.size(); ++j) {
            const double gj = g ? static_cast<double>(g[j]) : 0.0;
            if (!std::isfinite(gj))
                throw ValueError("adamw: non-finite gradient at param " + std::to_string(i) +
                                 " element " + std::to_string(j));
            data[j] *= decay;
            m[j] = static_cast<S>(b1 * m[j] + (1.0 - b1) * gj);
            v[j] = static_cast<S>(b2 * v[j] + (1.0 - b2) * gj * gj);
            const double mhat = static_cast<double>(m[j]) / bc1;
            const double vhat = static_cast<double>(v[j]) / bc2;
            data[j] -= static_cast<S>(static_cast<double>(lr) * mhat /
                                      (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

template <typename S>
void AdamWT<S>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class AdamWT<float>;
template class AdamWT<double>;

void Schedule::validate() const {
    if (total_steps <= 0) throw ValueError("schedule: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
        throw ValueError("schedule: warmup_steps must satisfy 0 <= warmup < total, got " +
                         std::to_string(warmup_steps) + " of " + std::to_string(total_steps));
    if (base_lr < 0 || min_lr < 0 || min_lr > base_lr)
        throw ValueError("schedule: need 0 <= min_lr <= base_lr");
}

double lr_at(const Schedule& schedule, int64_t step) {
    schedule.validate();
    if (step < 0 || step > schedule.total_steps)
        throw ValueError("schedule: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(schedule.total_steps) + "]");
    if (step < schedule.warmup_steps)
        return schedule.base_lr * static_cast<double>(step) /
               static_cast<double>(schedule.warmup_steps);
    const double progress = static_cast<double>(step - schedule.warmup_steps) /
                            static_cast<double>(schedule.total_steps - schedule.warmup_steps);
    return schedule.min_lr +
           0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace moma::train
