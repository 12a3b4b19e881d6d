#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "defx/graph.hpp"
#include "defx/nn/tape.hpp"
#include "defx/text.hpp"

namespace defx::gcn {

using text::WordId;

enum class Aggregation { mean, max };

struct GcnConfig {
    std::size_t d_gcn = 64;
    std::size_t rounds = 1;
    Aggregation aggregation = Aggregation::mean;
};

/// Per-word gates plus the readout projection. The gate of word w is
/// sigmoid(gate_raw[w]) and weighs a node's own representation against its
/// aggregated neighbor message.
struct GcnParams {
    nn::Param gate_raw;
    nn::Param readout_w;
    nn::Param readout_b;
    GcnConfig config;

    GcnParams() = default;
    GcnParams(std::size_t vocab_size, std::size_t d_w, GcnConfig cfg, nn::Rng& rng)
        : gate_raw("gcn.gate_raw", nn::Matrix(vocab_size, 1)),
          readout_w("gcn.readout.w", nn::Matrix(cfg.d_gcn, d_w)),
          readout_b("gcn.readout.b", nn::Matrix(1, cfg.d_gcn)), config(cfg) {
        if (cfg.rounds == 0) throw UsageError("gcn: rounds must be at least 1");
        if (cfg.d_gcn == 0) throw UsageError("gcn: d_gcn must be positive");
        nn::xavier_uniform(readout_w.value, rng);
    }

    template <class F>
    void visit(F&& f) {
        f(gate_raw);
        f(readout_w);
        f(readout_b);
    }
};

/// Value-only message pass: M_i aggregates edge_w(j->i) * r_j over in-edges
/// (zero for isolated nodes), then r_i' = gate_i * r_i + (1 - gate_i) * M_i.
/// `edge_weights` is indexed like graph.edges, `gates` by node.
inline nn::Matrix message_pass_values(const graph::TextGraph& g, const nn::Matrix& reps,
                                      std::span<const double> edge_weights, std::span<const double> gates,
                                      Aggregation agg = Aggregation::mean) {
    if (reps.rows() != g.node_count()) throw UsageError("message_pass: reps rows do not match node count");
    if (edge_weights.size() != g.edge_count() || gates.size() != g.node_count())
        throw UsageError("message_pass: edge weight or gate count mismatch");
    const std::size_t d = reps.cols();
    nn::Matrix out(reps.rows(), d);
    std::vector<double> msg(d);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const std::size_t begin = g.in_offsets[i];
        const std::size_t end = g.in_offsets[i + 1];
        std::fill(msg.begin(), msg.end(), 0.0);
        if (end > begin) {
            if (agg == Aggregation::mean) {
                for (std::size_t e = begin; e < end; ++e)
                    for (std::size_t c = 0; c < d; ++c) msg[c] += edge_weights[e] * reps(g.edges[e].src, c);
                for (double& m : msg) m /= static_cast<double>(end - begin);
            } else {
                std::fill(msg.begin(), msg.end(), -std::numeric_limits<double>::infinity());
                for (std::size_t e = begin; e < end; ++e)
                    for (std::size_t c = 0; c < d; ++c)
                        msg[c] = std::max(msg[c], edge_weights[e] * reps(g.edges[e].src, c));
            }
        }
        for (std::size_t c = 0; c < d; ++c) out(i, c) = gates[i] * reps(i, c) + (1.0 - gates[i]) * msg[c];
    }
    return out;
}

inline double squash_gate(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

/// Message pass using the store's current weights and the word gates.
inline nn::Matrix message_pass(const graph::TextGraph& g, const nn::Matrix& reps,
                               const graph::EdgeWeightStore& store, const GcnParams& params) {
    std::vector<double> weights;
    weights.reserve(g.edge_count());
    for (const auto& e : g.edges)
        weights.push_back(store.weight(store.edge_weight(g.node_word_ids[e.src], g.node_word_ids[e.dst])));
    std::vector<double> gates;
    gates.reserve(g.node_count());
    for (WordId w : g.node_word_ids) gates.push_back(squash_gate(params.gate_raw.value[w]));
    return message_pass_values(g, reps, weights, gates, params.config.aggregation);
}

/// Differentiable message pass. `edge_weights` is edge_count x 1, `gates`
/// node_count x 1 (already squashed).
inline nn::Var message_pass(nn::Tape& tape, const graph::TextGraph& g, nn::Var reps, nn::Var edge_weights,
                            nn::Var gates, Aggregation agg = Aggregation::mean) {
    const nn::Matrix& rv = tape.value(reps);
    const nn::Matrix& ev = tape.value(edge_weights);
    const nn::Matrix& gv = tape.value(gates);
    if (ev.cols() > 1 || gv.cols() != 1) throw UsageError("message_pass: weights and gates must be columns");
    nn::Matrix out = message_pass_values(g, rv, ev.data(), gv.data(), agg);

    // Aggregated message per node, needed for the gate gradient; for max
    // aggregation also the winning edge per (node, channel).
    const std::size_t d = rv.cols();
    nn::Matrix msg(rv.rows(), d);
    std::vector<std::size_t> winner;
    if (agg == Aggregation::max) winner.assign(rv.rows() * d, 0);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
        const std::size_t begin = g.in_offsets[i];
        const std::size_t end = g.in_offsets[i + 1];
        if (end == begin) continue;
        for (std::size_t c = 0; c < d; ++c) {
            if (agg == Aggregation::mean) {
                double acc = 0.0;
                for (std::size_t e = begin; e < end; ++e) acc += ev[e] * rv(g.edges[e].src, c);
                msg(i, c) = acc / static_cast<double>(end - begin);
            } else {
                std::size_t best = begin;
                double best_v = ev[begin] * rv(g.edges[begin].src, c);
                for (std::size_t e = begin + 1; e < end; ++e) {
                    const double v = ev[e] * rv(g.edges[e].src, c);
                    if (v > best_v) best_v = v, best = e;
                }
                msg(i, c) = best_v;
                winner[i * d + c] = best;
            }
        }
    }

    const graph::TextGraph* graph = &g;
    const std::size_t out_id = tape.size();
    return tape.push(std::move(out), [graph, reps, edge_weights, gates, agg, msg = std::move(msg),
                                      winner = std::move(winner), out_id](nn::Tape& t) {
        const nn::Matrix& go = t.grad(nn::Var{out_id});
        const nn::Matrix& rv = t.value(reps);
        const nn::Matrix& ev = t.value(edge_weights);
        const nn::Matrix& gv = t.value(gates);
        nn::Matrix& gr = t.grad(reps);
        nn::Matrix& ge = t.grad(edge_weights);
        nn::Matrix& gg = t.grad(gates);
        const std::size_t d = rv.cols();
        for (std::size_t i = 0; i < graph->node_count(); ++i) {
            const double eta = gv[i];
            double d_gate = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                gr(i, c) += eta * go(i, c);
                d_gate += go(i, c) * (rv(i, c) - msg(i, c));
            }
            gg[i] += d_gate;
            const std::size_t begin = graph->in_offsets[i];
            const std::size_t end = graph->in_offsets[i + 1];
            if (end == begin) continue;
            if (agg == Aggregation::mean) {
                const double inv = 1.0 / static_cast<double>(end - begin);
                for (std::size_t e = begin; e < end; ++e) {
                    const std::size_t j = graph->edges[e].src;
                    double d_w = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dm = (1.0 - eta) * go(i, c) * inv;
                        gr(j, c) += dm * ev[e];
                        d_w += dm * rv(j, c);
                    }
                    ge[e] += d_w;
                }
            } else {
                for (std::size_t c = 0; c < d; ++c) {
                    const std::size_t e = winner[i * d + c];
                    const std::size_t j = graph->edges[e].src;
                    const double dm = (1.0 - eta) * go(i, c);
                    gr(j, c) += dm * ev[e];
                    ge[e] += dm * rv(j, c);
                }
            }
        }
    });
}

/// Node representations after `rounds` message passes (pre-readout).
inline nn::Var node_representations(nn::Tape& tape, const graph::TextGraph& g, graph::EdgeWeightStore& store,
                                    text::EmbeddingTable& embeddings, GcnParams& params) {
    const auto& ids = g.node_word_ids;
    nn::Var reps = tape.gather_rows(embeddings.vectors, ids);
    const auto handles = g.handles();
    nn::Var weights = tape.gather_rows(store.weights, handles);
    nn::Var gates = tape.sigmoid(tape.gather_rows(params.gate_raw, ids));
    for (std::size_t r = 0; r < params.config.rounds; ++r)
        reps = message_pass(tape, g, reps, weights, gates, params.config.aggregation);
    return reps;
}

/// Sentence feature: message passing, mean-pool over nodes, linear readout, ReLU.
/// The graph must already be resolved against `store`.
inline nn::Var gcn_encode(nn::Tape& tape, const graph::TextGraph& g, graph::EdgeWeightStore& store,
                          text::EmbeddingTable& embeddings, GcnParams& params) {
    nn::Var reps = node_representations(tape, g, store, embeddings, params);
    nn::Var pooled = tape.mean_rows(reps);
    return tape.relu(tape.linear(pooled, tape.param(params.readout_w), tape.param(params.readout_b)));
}

/// Builds and resolves the graph on the fly. The graph is kept alive inside
/// `graph_storage` since the tape references it until backward completes.
inline nn::Var gcn_encode(nn::Tape& tape, std::span<const WordId> word_ids, std::size_t window,
                          graph::EdgeWeightStore& store, text::EmbeddingTable& embeddings, GcnParams& params,
                          graph::TextGraph& graph_storage) {
    graph_storage = graph::build_graph(word_ids, window, store);
    return gcn_encode(tape, graph_storage, store, embeddings, params);
}

} // namespace defx::gcn
