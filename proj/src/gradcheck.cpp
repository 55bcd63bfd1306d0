#include "surgvae/gradcheck.hpp"

#include <cmath>
#include <string>

#include "surgvae/errors.hpp"

namespace surgvae {

GradCheckReport gradient_check(const ScalarFn& f, const GradFn& analytic,
                               std::vector<Tensor> params, double h, double tol) {
    GradCheckReport report;
    const std::vector<Tensor> grads = analytic(params);
    if (grads.size() != params.size()) {
        throw UsageError("gradient_check: analytic returned " + std::to_string(grads.size()) +
                         " tensors for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (!grads[t].same_shape(params[t])) {
            throw DimensionError("gradient_check: gradient shape " + grads[t].shape_str() +
                                 " != parameter shape " + params[t].shape_str());
        }
        for (std::size_t i = 0; i < params[t].numel(); ++i) {
            const double saved = params[t][i];
            double fp, fm;
            try {
                params[t][i] = saved + h;
                fp = f(params);
                params[t][i] = saved - h;
                fm = f(params);
            } catch (const std::exception& e) {
                params[t][i] = saved;
                throw NumericalError("gradient_check: probe failed at tensor " +
                                     std::to_string(t) + " coordinate " + std::to_string(i) +
                                     ": " + e.what());
            }
            params[t][i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericalError("gradient_check: non-finite probe at tensor " +
                                     std::to_string(t) + " coordinate " + std::to_string(i));
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = grads[t][i];
            const double denom = std::max(1e-8, std::max(std::fabs(a), std::fabs(numeric)));
            const double rel = std::fabs(a - numeric) / denom;
            GradCheckEntry entry{t, i, a, numeric, rel, rel < tol};
            report.max_rel_err = std::max(report.max_rel_err, rel);
            report.pass = report.pass && entry.pass;
            ++report.checked;
            report.entries.push_back(entry);
        }
    }
    return report;
}

}  // namespace surgvae
