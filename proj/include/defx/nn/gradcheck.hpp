#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "defx/nn/tape.hpp"

namespace defx::nn {

/// max(|a|, |b|, 1e-8)-normalized difference.
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    bool passed() const {
        return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
    }
    double max_rel_error() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_error);
        return m;
    }
};

/// Builds a scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences for every entry
/// of every listed parameter. Gradients of `params` are zeroed first and hold
/// the analytic gradient on return; values are restored exactly.
inline GradCheckReport grad_check(std::span<Param* const> params, const LossBuilder& build_loss,
                                  double tol = 1e-4, double h = 1e-5) {
    for (Param* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(build_loss(tape));
    }
    auto eval = [&] {
        Tape tape;
        return tape.value(build_loss(tape))[0];
    };

    GradCheckReport report;
    report.tolerance = tol;
    for (Param* p : params) {
        GradCheckEntry entry;
        entry.name = p->name;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double up = eval();
            p->value[i] = saved - h;
            const double down = eval();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = p->trainable ? p->grad[i] : 0.0;
            const double err = relative_error(analytic, p->trainable ? numeric : 0.0);
            if (err > entry.max_rel_error || i == 0) {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        entry.passed = entry.max_rel_error < tol;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace defx::nn
