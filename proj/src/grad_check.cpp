#include "moma/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "moma/autograd.hpp"
#include "moma/rng.hpp"

namespace moma {

namespace {

double eval_scalar(const std::function<Tensor64(std::vector<Tensor64>&)>& f,
                   std::vector<Tensor64>& inputs) {
    NoGradGuard no_grad;
    Tensor64 out = f(inputs);
    if (out.numel() != 1) throw ValueError("grad_check: f must be scalar-valued");
    return out.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor64(std::vector<Tensor64>&)>& f,
                           std::vector<Tensor64> inputs, double eps, double tolerance,
                           int64_t subset_elements, uint64_t subset_seed) {
    GradCheckReport report;

    for (auto& t : inputs) t.set_requires_grad(true).zero_grad();

    Graph64 graph;
    {
        GraphScope64 scope(graph);
        Tensor64 loss = f(inputs);
        if (loss.numel() != 1) throw ValueError("grad_check: f must be scalar-valued");
        if (!std::isfinite(loss.item())) {
            report.finite = false;
            report.worst = "non-finite loss at base point";
            return report;
        }
        graph.backward(loss);
    }

    // Candidate (input, element) pairs, optionally subsampled.
    std::vector<std::pair<size_t, int64_t>> elements;
    for (size_t i = 0; i < inputs.size(); ++i)
        for (int64_t j = 0; j < inputs[i].numel(); ++j) elements.emplace_back(i, j);
    if (subset_elements > 0 && subset_elements < static_cast<int64_t>(elements.size())) {
        Rng rng(Rng::derive(subset_seed, 0x67c0de));
        for (size_t i = 0; i < static_cast<size_t>(subset_elements); ++i) {
            const size_t j = i + static_cast<size_t>(rng.uniform_index(elements.size() - i));
            std::swap(elements[i], elements[j]);
        }
        elements.resize(static_cast<size_t>(subset_elements));
    }

    report.pass = true;
    for (const auto& [i, j] : elements) {
        Tensor64& t = inputs[i];
        const double ad = t.has_grad() ? t.grad()[static_cast<size_t>(j)] : 0.0;
        double* slot = t.mutable_data().data() + j;
        const double saved = *slot;

        *slot = saved + eps;
        const double f_plus = eval_scalar(f, inputs);
        *slot = saved - eps;
        const double f_minus = eval_scalar(f, inputs);
        *slot = saved;

        if (!std::isfinite(f_plus) || !std::isfinite(f_minus) || !std::isfinite(ad)) {
            report.finite = false;
            report.pass = false;
            std::ostringstream os;
            os << "non-finite value at input " << i << " element " << j;
            report.worst = os.str();
            return report;
        }

        const double fd = (f_plus - f_minus) / (2.0 * eps);
        const double denom = std::max({std::abs(ad), std::abs(fd), 1.0});
        const double rel = std::abs(ad - fd) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            std::ostringstream os;
            os << "input " << i << " element " << j << ": autodiff=" << ad << " fd=" << fd;
            report.worst = os.str();
        }
    }
    report.pass = report.finite && report.max_rel_err <= tolerance;
    return report;
}

}  // namespace moma
