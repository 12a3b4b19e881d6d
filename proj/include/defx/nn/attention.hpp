#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "defx/nn/tape.hpp"

namespace defx::nn {

/// Q/K/V/O projections of one multi-head self-attention layer. The key
/// projection has no bias: it would add the same score to every key of a
/// query row, which softmax cancels.
struct AttentionParams {
    Param wq, bq, wk, wv, bv, wo, bo;
    std::size_t heads = 1;

    AttentionParams() = default;
    AttentionParams(const std::string& prefix, std::size_t d_model, std::size_t n_heads, Rng& rng)
        : wq(prefix + "wq", Matrix(d_model, d_model)), bq(prefix + "bq", Matrix(1, d_model)),
          wk(prefix + "wk", Matrix(d_model, d_model)),
          wv(prefix + "wv", Matrix(d_model, d_model)), bv(prefix + "bv", Matrix(1, d_model)),
          wo(prefix + "wo", Matrix(d_model, d_model)), bo(prefix + "bo", Matrix(1, d_model)),
          heads(n_heads) {
        if (n_heads == 0 || d_model % n_heads != 0)
            throw UsageError("attention: d_model " + std::to_string(d_model) + " not divisible by heads " +
                             std::to_string(n_heads));
        for (Param* p : {&wq, &wk, &wv, &wo}) xavier_uniform(p->value, rng);
    }

    template <class F>
    void visit(F&& f) {
        for (Param* p : {&wq, &bq, &wk, &wv, &bv, &wo, &bo}) f(*p);
    }
};

struct AttentionOutput {
    Var output;
    /// Per-head L x L attention probabilities.
    std::vector<Var> weights;
};

/// softmax(Q K^T / sqrt(d/h)) V per head, heads concatenated, then output-projected.
inline AttentionOutput self_attention(Tape& tape, Var x, AttentionParams& p) {
    const std::size_t d = tape.value(x).cols();
    if (p.heads == 0 || d % p.heads != 0)
        throw UsageError("self_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(p.heads) + " heads");
    if (p.wq.value.cols() != d) throw UsageError("self_attention: projection width mismatch");
    const std::size_t dh = d / p.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Var q = tape.linear(x, tape.param(p.wq), tape.param(p.bq));
    Var k = tape.matmul_nt(x, tape.param(p.wk));
    Var v = tape.linear(x, tape.param(p.wv), tape.param(p.bv));

    AttentionOutput out;
    std::vector<Var> head_out;
    for (std::size_t h = 0; h < p.heads; ++h) {
        Var qh = tape.slice_cols(q, h * dh, dh);
        Var kh = tape.slice_cols(k, h * dh, dh);
        Var vh = tape.slice_cols(v, h * dh, dh);
        Var probs = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale));
        out.weights.push_back(probs);
        head_out.push_back(tape.matmul(probs, vh));
    }
    Var merged = p.heads == 1 ? head_out.front() : tape.concat_cols(head_out);
    out.output = tape.linear(merged, tape.param(p.wo), tape.param(p.bo));
    return out;
}

} // namespace defx::nn
