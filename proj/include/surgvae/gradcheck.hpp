#pragma once

#include <functional>
#include <vector>

#include "surgvae/tensor.hpp"

namespace surgvae {

/// Per-coordinate record from a finite-difference gradient comparison.
struct GradCheckEntry {
    std::size_t tensor_index;
    std::size_t flat_index;
    double analytic;
    double numeric;
    double rel_err;
    bool pass;
};

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::vector<GradCheckEntry> entries;
};

using ScalarFn = std::function<double(const std::vector<Tensor>&)>;
using GradFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&)>;

/// Compares `analytic(params)` against central differences of `f`:
/// (f(p + h e_i) - f(p - h e_i)) / 2h, coordinate by coordinate.
/// Relative error uses max(|analytic|, |numeric|) clamped below at 1e-8.
/// Throws NumericalError naming the coordinate when a probe evaluates
/// non-finite.
GradCheckReport gradient_check(const ScalarFn& f, const GradFn& analytic,
                               std::vector<Tensor> params, double h = 1e-5,
                               double tol = 1e-4);

}  // namespace surgvae
