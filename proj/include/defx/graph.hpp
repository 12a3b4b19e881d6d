#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "defx/corpus.hpp"
#include "defx/error.hpp"
#include "defx/nn/matrix.hpp"
#include "defx/text.hpp"

namespace defx::graph {

using text::WordId;

/// Trainable scalar per ordered (source word, destination word) pair. Row
/// `public_handle()` of `weights` is the shared fallback for unseen pairs.
class EdgeWeightStore {
public:
    static constexpr const char* param_name = "gcn.edge_weights";

    EdgeWeightStore() : weights(param_name, nn::Matrix(1, 1, 1.0)) {}

    /// Handles follow insertion order; all weights start at `init`.
    explicit EdgeWeightStore(const std::vector<std::pair<WordId, WordId>>& pairs, double init = 1.0) {
        for (const auto& [src, dst] : pairs) index_.try_emplace(key(src, dst), index_.size());
        weights = nn::Param(param_name, nn::Matrix(index_.size() + 1, 1, init));
    }

    std::size_t pair_count() const noexcept { return index_.size(); }
    std::size_t public_handle() const noexcept { return index_.size(); }

    bool contains(WordId src, WordId dst) const { return index_.contains(key(src, dst)); }

    /// Parameter row for the pair; total, falls back to the public weight.
    std::size_t edge_weight(WordId src, WordId dst) const {
        auto it = index_.find(key(src, dst));
        return it == index_.end() ? public_handle() : it->second;
    }

    double weight(std::size_t handle) const { return weights.value[handle]; }
    double public_weight() const { return weights.value[public_handle()]; }

    /// (src, dst) for every stored pair, indexed by handle.
    std::vector<std::pair<WordId, WordId>> pairs() const {
        std::vector<std::pair<WordId, WordId>> out(index_.size());
        for (const auto& [k, h] : index_) out[h] = {static_cast<WordId>(k >> 32), static_cast<WordId>(k & 0xffffffffu)};
        return out;
    }

    nn::Param weights;

private:
    static std::uint64_t key(WordId src, WordId dst) {
        return (static_cast<std::uint64_t>(src) << 32) | static_cast<std::uint64_t>(dst & 0xffffffffu);
    }

    std::unordered_map<std::uint64_t, std::size_t> index_;
};

/// Directed edge src -> dst carrying a store handle.
struct Edge {
    std::size_t src = 0;
    std::size_t dst = 0;
    std::size_t handle = 0;
};

/// Positional word graph of one sentence. Edges are grouped by destination:
/// the in-edges of node i are edges[in_offsets[i] .. in_offsets[i+1]), with
/// sources in ascending order.
struct TextGraph {
    std::vector<WordId> node_word_ids;
    std::size_t window = 1;
    std::vector<Edge> edges;
    std::vector<std::size_t> in_offsets;

    std::size_t node_count() const noexcept { return node_word_ids.size(); }
    std::size_t edge_count() const noexcept { return edges.size(); }

    std::span<const Edge> in_edges(std::size_t node) const {
        return std::span<const Edge>(edges).subspan(in_offsets[node], in_offsets[node + 1] - in_offsets[node]);
    }

    std::vector<std::size_t> neighbors(std::size_t node) const {
        std::vector<std::size_t> out;
        for (const Edge& e : in_edges(node)) out.push_back(e.src);
        return out;
    }

    std::vector<std::size_t> handles() const {
        std::vector<std::size_t> out;
        out.reserve(edges.size());
        for (const Edge& e : edges) out.push_back(e.handle);
        return out;
    }
};

/// neighbors(i) = { j : 0 < |i - j| <= window }. Handles stay 0 until resolved.
inline TextGraph build_graph(std::span<const WordId> word_ids, std::size_t window) {
    if (word_ids.empty()) throw DataError("empty graph");
    if (window == 0) throw UsageError("build_graph: window must be at least 1");
    TextGraph g;
    g.node_word_ids.assign(word_ids.begin(), word_ids.end());
    g.window = window;
    const std::size_t n = word_ids.size();
    g.in_offsets.reserve(n + 1);
    g.in_offsets.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= window ? i - window : 0;
        const std::size_t hi = std::min(n - 1, i + window);
        for (std::size_t j = lo; j <= hi; ++j)
            if (j != i) g.edges.push_back({j, i, 0});
        g.in_offsets.push_back(g.edges.size());
    }
    return g;
}

inline void resolve_edges(TextGraph& g, const EdgeWeightStore& store) {
    for (Edge& e : g.edges) e.handle = store.edge_weight(g.node_word_ids[e.src], g.node_word_ids[e.dst]);
}

inline TextGraph build_graph(std::span<const WordId> word_ids, std::size_t window, const EdgeWeightStore& store) {
    TextGraph g = build_graph(word_ids, window);
    resolve_edges(g, store);
    return g;
}

/// One weight per ordered word pair co-occurring within `window` in the
/// training sentences, all initialized to 1.0.
inline EdgeWeightStore build_store(const std::vector<corpus::SentenceRecord>& training_records,
                                   const text::Vocab& vocab, std::size_t window) {
    std::vector<std::pair<WordId, WordId>> pairs;
    for (const auto& r : training_records) {
        const auto ids = text::ids_of(text::tokenize(r.text), vocab);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t lo = i >= window ? i - window : 0;
            const std::size_t hi = std::min(ids.size() - 1, i + window);
            for (std::size_t j = lo; j <= hi; ++j)
                if (j != i) pairs.emplace_back(ids[j], ids[i]);
        }
    }
    return EdgeWeightStore(pairs, 1.0);
}

/// Text dump: `src_word_id dst_word_id weight` per pair in handle order, then
/// `public weight`. Weights are printed with round-trip precision.
inline void write_store(const EdgeWeightStore& store, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    char buf[64];
    const auto pairs = store.pairs();
    for (std::size_t h = 0; h < pairs.size(); ++h) {
        std::snprintf(buf, sizeof buf, "%.17g", store.weight(h));
        out << pairs[h].first << ' ' << pairs[h].second << ' ' << buf << '\n';
    }
    std::snprintf(buf, sizeof buf, "%.17g", store.public_weight());
    out << "public " << buf << '\n';
}

inline EdgeWeightStore read_store(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edge store " + path.string());
    std::vector<std::pair<WordId, WordId>> pairs;
    std::vector<double> weights;
    double public_weight = 1.0;
    bool saw_public = false;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string first;
        fields >> first;
        if (first == "public") {
            if (!(fields >> public_weight)) throw DataError(path.string() + ": bad public weight at line " + std::to_string(line_no));
            saw_public = true;
            continue;
        }
        WordId src = 0, dst = 0;
        double w = 0.0;
        std::istringstream head(first);
        if (!(head >> src) || !(fields >> dst >> w))
            throw DataError(path.string() + ": malformed edge at line " + std::to_string(line_no));
        pairs.emplace_back(src, dst);
        weights.push_back(w);
    }
    if (!saw_public) throw DataError(path.string() + ": missing public weight line");
    EdgeWeightStore store(pairs);
    if (store.pair_count() != pairs.size()) throw DataError(path.string() + ": duplicate edge pairs");
    for (std::size_t h = 0; h < weights.size(); ++h) store.weights.value[h] = weights[h];
    store.weights.value[store.public_handle()] = public_weight;
    return store;
}

} // namespace defx::graph
