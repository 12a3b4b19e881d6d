#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "defx/gcn.hpp"
#include "defx/nn/gradcheck.hpp"

using namespace defx;
using namespace defx::gcn;
using nn::Matrix;

namespace {

struct Fixture {
    text::Vocab vocab;
    text::EmbeddingTable emb;
    graph::EdgeWeightStore store;
    GcnParams params;

    Fixture(std::size_t d_w, GcnConfig cfg, std::uint64_t seed)
        : vocab(std::vector<std::string>{"a", "b", "c", "d"}) {
        nn::Rng rng(seed);
        emb = text::random_embeddings(vocab, d_w, rng, 0.5);
        std::vector<std::pair<WordId, WordId>> pairs;
        for (WordId s = 0; s < 3; ++s)
            for (WordId d = 0; d < 3; ++d)
                if (s != d) pairs.emplace_back(s, d);
        store = graph::EdgeWeightStore(pairs);
        for (std::size_t h = 0; h <= store.pair_count(); ++h) store.weights.value[h] = nn::uniform(rng, 0.3, 1.7);
        params = GcnParams(vocab.size(), d_w, cfg, rng);
        for (std::size_t w = 0; w < vocab.size(); ++w) params.gate_raw.value[w] = nn::uniform(rng, -1.0, 1.0);
        nn::uniform_fill(params.readout_b.value, rng, 0.5);
    }

    std::vector<nn::Param*> all() { return {&emb.vectors, &store.weights, &params.gate_raw, &params.readout_w, &params.readout_b}; }
};

} // namespace

TEST(MessagePass, TwoNodeWorkedExample) {
    const std::vector<WordId> ids{0, 1};
    const auto g = graph::build_graph(ids, 1);
    const Matrix reps(2, 2, {1.0, 0.0, 0.0, 1.0});
    const std::vector<double> w(g.edge_count(), 1.0), gates{0.5, 0.5};
    const Matrix out = message_pass_values(g, reps, w, gates);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], 0.5);
}

TEST(MessagePass, UnitGateIsIdentity) {
    std::mt19937_64 rng(2);
    const std::vector<WordId> ids{0, 1, 2, 1, 0};
    const auto g = graph::build_graph(ids, 2);
    Matrix reps(5, 3);
    for (std::size_t i = 0; i < reps.size(); ++i) reps[i] = nn::uniform(rng, -1, 1);
    std::vector<double> w(g.edge_count());
    for (double& x : w) x = nn::uniform(rng, -2, 2);
    const std::vector<double> gates(5, 1.0);
    EXPECT_EQ(message_pass_values(g, reps, w, gates), reps);
    EXPECT_EQ(message_pass_values(g, reps, w, gates, Aggregation::max), reps);
}

TEST(MessagePass, ZeroEdgeWeightsScaleByGate) {
    const std::vector<WordId> ids{0, 1, 2};
    const auto g = graph::build_graph(ids, 2);
    const Matrix reps(3, 2, {1, 2, 3, 4, 5, 6});
    const std::vector<double> w(g.edge_count(), 0.0), gates{0.25, 0.5, 0.75};
    const Matrix out = message_pass_values(g, reps, w, gates);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(out(i, c), gates[i] * reps(i, c));
}

TEST(MessagePass, MeanAndMaxMatchHandComputation) {
    const std::vector<WordId> ids{0, 1, 2};
    const auto g = graph::build_graph(ids, 1);
    const Matrix reps(3, 1, {1.0, -2.0, 4.0});
    const std::vector<double> w(g.edge_count(), 1.0), gates{0.0, 0.0, 0.0};
    const Matrix mean = message_pass_values(g, reps, w, gates, Aggregation::mean);
    EXPECT_DOUBLE_EQ(mean[0], -2.0);
    EXPECT_DOUBLE_EQ(mean[1], 2.5);
    EXPECT_DOUBLE_EQ(mean[2], -2.0);
    const Matrix mx = message_pass_values(g, reps, w, gates, Aggregation::max);
    EXPECT_DOUBLE_EQ(mx[0], -2.0);
    EXPECT_DOUBLE_EQ(mx[1], 4.0);
    EXPECT_DOUBLE_EQ(mx[2], -2.0);
}

TEST(MessagePass, GatesStartAtOneHalf) {
    nn::Rng rng(1);
    GcnParams p(10, 4, GcnConfig{}, rng);
    for (std::size_t w = 0; w < 10; ++w) EXPECT_EQ(squash_gate(p.gate_raw.value[w]), 0.5);
}

TEST(GcnEncode, OutputShapeAndNonNegative) {
    Fixture f(6, GcnConfig{.d_gcn = 5}, 3);
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<WordId> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = i % 4;
        nn::Tape tape;
        graph::TextGraph g;
        const auto out = gcn_encode(tape, ids, 5, f.store, f.emb, f.params, g);
        ASSERT_EQ(tape.value(out).rows(), 1u);
        ASSERT_EQ(tape.value(out).cols(), 5u);
        for (double v : tape.value(out).data()) EXPECT_GE(v, 0.0);
    }
}

TEST(GcnEncode, SingleTokenReadout) {
    Fixture f(3, GcnConfig{.d_gcn = 4}, 9);
    const std::vector<WordId> ids{2};
    nn::Tape tape;
    graph::TextGraph g;
    const Matrix out = tape.value(gcn_encode(tape, ids, 5, f.store, f.emb, f.params, g));
    const double gate = squash_gate(f.params.gate_raw.value[2]);
    for (std::size_t o = 0; o < 4; ++o) {
        double z = f.params.readout_b.value[o];
        for (std::size_t c = 0; c < 3; ++c) z += f.params.readout_w.value(o, c) * gate * f.emb.vectors.value(2, c);
        EXPECT_NEAR(out[o], std::max(0.0, z), 1e-14);
    }
}

TEST(GcnEncode, OneRoundIsLocalToWindow) {
    Fixture f(4, GcnConfig{.d_gcn = 3}, 4);
    std::vector<WordId> ids{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    const std::size_t window = 2, changed = 7;
    auto reps = [&](const std::vector<WordId>& w) {
        nn::Tape tape;
        const auto g = graph::build_graph(w, window, f.store);
        return tape.value(node_representations(tape, g, f.store, f.emb, f.params));
    };
    const Matrix before = reps(ids);
    ids[changed] = 3;
    const Matrix after = reps(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::size_t d = i > changed ? i - changed : changed - i;
        bool same = true;
        for (std::size_t c = 0; c < 4; ++c) same = same && before(i, c) == after(i, c);
        if (d > window) {
            EXPECT_TRUE(same) << "node " << i;
        }
    }
}

TEST(GcnEncode, EdgeWeightsReceiveGradient) {
    Fixture f(4, GcnConfig{.d_gcn = 3}, 5);
    const std::vector<WordId> ids{0, 1, 2};
    nn::Tape tape;
    graph::TextGraph g;
    const auto out = gcn_encode(tape, ids, 5, f.store, f.emb, f.params, g);
    f.store.weights.zero_grad();
    const Matrix coef(3, 1, {1.0, 1.0, 1.0});
    const auto loss = tape.matmul(tape.add_row(out, tape.constant(Matrix(1, 3, 1.0))), tape.constant(coef));
    tape.backward(loss);
    double total = 0.0;
    for (double v : f.store.weights.grad.data()) total += std::abs(v);
    EXPECT_GT(total, 0.0);
}

class GcnGradient : public ::testing::TestWithParam<std::pair<Aggregation, std::size_t>> {};

TEST_P(GcnGradient, MatchesFiniteDifferences) {
    const auto [agg, rounds] = GetParam();
    Fixture f(4, GcnConfig{.d_gcn = 3, .rounds = rounds, .aggregation = agg}, 8);
    // Shift the readout bias so the ReLU stays away from its kink.
    for (double& b : f.params.readout_b.value.data()) b += 2.0;
    const std::vector<WordId> ids{0, 1, 2, 3, 1};
    const auto g = graph::build_graph(ids, 2, f.store);
    const Matrix coef(3, 1, {0.7, -1.3, 0.4});
    const auto report = nn::grad_check(f.all(), [&](nn::Tape& tape) {
        const auto out = gcn_encode(tape, g, f.store, f.emb, f.params);
        return tape.matmul(out, tape.constant(coef));
    });
    for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " rel " << e.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(Aggregations, GcnGradient,
                         ::testing::Values(std::pair{Aggregation::mean, std::size_t{1}},
                                           std::pair{Aggregation::mean, std::size_t{2}},
                                           std::pair{Aggregation::max, std::size_t{1}}));
