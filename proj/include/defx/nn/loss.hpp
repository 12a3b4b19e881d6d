#pragma once

#include <cmath>
#include <string>

#include "defx/nn/tape.hpp"

namespace defx::nn {

/// -log softmax(logits)[label] via log-sum-exp, for a 1 x C logit row.
inline double cross_entropy_value(const Matrix& logits, int label) {
    if (logits.rows() != 1 || logits.cols() < 2)
        throw UsageError("cross_entropy: expected a 1xC logit row, got " + logits.shape_string());
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols())
        throw UsageError("cross_entropy: label " + std::to_string(label) + " out of range");
    double mx = logits[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) sum += std::exp(logits[c] - mx);
    return mx + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

inline Matrix softmax(const Matrix& logits) { return Tape::softmax_rows_value(logits); }

/// Scalar loss node; d(loss)/d(logits) = softmax(logits) - onehot(label).
inline Var softmax_cross_entropy(Tape& tape, Var logits, int label) {
    const Matrix& lv = tape.value(logits);
    Matrix loss(1, 1, cross_entropy_value(lv, label));
    Matrix probs = softmax(lv);
    const std::size_t out = tape.size();
    return tape.push(std::move(loss), [logits, label, probs = std::move(probs), out](Tape& t) {
        const double g = t.grad(Var{out})[0];
        Matrix& gl = t.grad(logits);
        for (std::size_t c = 0; c < probs.cols(); ++c)
            gl[c] += g * (probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0));
    });
}

} // namespace defx::nn
