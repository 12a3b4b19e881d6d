#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "defx/nn/matrix.hpp"

namespace defx::nn {

struct AdamWConfig {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Moment estimates for each parameter, in the order parameters are passed to
/// adamw_step. The order must stay fixed for the lifetime of the state.
struct OptState {
    struct Slot {
        std::string name;
        Matrix m;
        Matrix v;
    };

    AdamWConfig config;
    std::vector<Slot> slots;
    std::size_t step = 0;

    OptState() = default;
    explicit OptState(AdamWConfig c) : config(c) {}
};

/// One AdamW update with decoupled weight decay:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
/// Frozen (non-trainable) parameters keep their slot but are not touched.
/// Gradients are read as-is; callers average accumulated gradients first.
inline void adamw_step(std::span<Param* const> params, OptState& state) {
    for (const Param* p : params) {
        if (!p->trainable) continue;
        if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter " + p->name);
    }
    if (state.slots.empty()) {
        state.slots.reserve(params.size());
        for (const Param* p : params)
            state.slots.push_back({p->name, Matrix(p->value.rows(), p->value.cols()),
                                   Matrix(p->value.rows(), p->value.cols())});
    }
    if (state.slots.size() != params.size())
        throw UsageError("adamw: optimizer state tracks " + std::to_string(state.slots.size()) +
                         " parameters, got " + std::to_string(params.size()));

    ++state.step;
    const AdamWConfig& c = state.config;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        OptState::Slot& s = state.slots[i];
        if (s.name != p.name || !s.m.same_shape(p.value))
            throw UsageError("adamw: parameter " + p.name + " does not match optimizer slot " + s.name);
        if (!p.trainable) continue;
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j];
            s.m[j] = c.beta1 * s.m[j] + (1.0 - c.beta1) * g;
            s.v[j] = c.beta2 * s.v[j] + (1.0 - c.beta2) * g * g;
            const double m_hat = s.m[j] / bc1;
            const double v_hat = s.v[j] / bc2;
            p.value[j] -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * p.value[j]);
        }
    }
}

} // namespace defx::nn
