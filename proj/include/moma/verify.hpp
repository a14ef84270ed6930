#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace moma::verify {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct SuiteResult {
    std::vector<CheckResult> checks;
    bool pass = false;
    double seconds = 0.0;
};

// Central-finite-difference verification of every autodiff primitive
// (tolerance 1e-5) and the full distillation loss end to end (1e-4), each
// over `seeds` random seeds, all in 64-bit.
SuiteResult run_gradient_suite(int seeds, std::ostream* log = nullptr);

}  // namespace moma::verify
