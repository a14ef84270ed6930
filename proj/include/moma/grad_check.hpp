#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moma/tensor.hpp"

namespace moma {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    bool finite = true;
    std::string worst;  // "input 2 element 17: ad=..., fd=..."
};

// Central finite differences against reverse-mode gradients, in 64-bit.
// f must be a pure scalar-valued function of the given inputs; it is re-run
// under perturbation, so it must not cache activations across calls.
// subset_elements > 0 checks only that many randomly chosen elements across
// all inputs (for deep compositions); <= 0 checks every element.
GradCheckReport grad_check(const std::function<Tensor64(std::vector<Tensor64>&)>& f,
                           std::vector<Tensor64> inputs, double eps = 1e-5,
                           double tolerance = 1e-5, int64_t subset_elements = -1,
                           uint64_t subset_seed = 0);

}  // namespace moma
