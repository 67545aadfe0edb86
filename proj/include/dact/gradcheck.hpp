// Central finite-difference verification of analytic gradients.

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dact/tensor.hpp"

namespace dact {

struct GradCheckEntry {
    std::string parameter;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> per_parameter;
    double max_rel_error = 0.0;

    bool passes(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares analytic gradients against central differences
/// (f(x+h) - f(x-h)) / 2h with h = `step`, element by element.
///
/// `loss` evaluates the scalar loss at the current parameter values without
/// touching gradients; `accumulate_gradients` zeroes gradients and runs one
/// forward/backward pass. Relative error per element is
/// |a - n| / max(|a|, |n|, 1e-8). Non-trainable parameters are excluded from
/// updates and therefore skipped.
inline GradCheckReport gradient_check(const std::vector<Parameter*>& params,
                                      const std::function<double()>& loss,
                                      const std::function<void()>& accumulate_gradients,
                                      double step = 1e-5) {
    accumulate_gradients();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(p->grad);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        if (!p.trainable) continue;
        GradCheckEntry entry;
        entry.parameter = p.name;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + step;
            const double loss_plus = loss();
            p.value[i] = saved - step;
            const double loss_minus = loss();
            p.value[i] = saved;

            const double numeric = (loss_plus - loss_minus) / (2.0 * step);
            const double a = analytic[pi][i];
            const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel >= entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
            ++entry.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.per_parameter.push_back(std::move(entry));
    }
    return report;
}

}  // namespace dact
