#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "defx/corpus.hpp"
#include "defx/encoder.hpp"
#include "defx/gcn.hpp"
#include "defx/graph.hpp"
#include "defx/nn/loss.hpp"
#include "defx/text.hpp"

namespace defx {

enum class ModelKind { gcn_only, encoder_only, joint };
enum class EncoderSource { toy, precomputed };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
    case ModelKind::gcn_only: return "gcn_only";
    case ModelKind::encoder_only: return "encoder_only";
    case ModelKind::joint: return "joint";
    }
    return "joint";
}

inline std::string_view to_string(EncoderSource s) { return s == EncoderSource::toy ? "toy" : "precomputed"; }

inline ModelKind parse_model_kind(std::string_view s) {
    if (s == "gcn_only") return ModelKind::gcn_only;
    if (s == "encoder_only") return ModelKind::encoder_only;
    if (s == "joint") return ModelKind::joint;
    throw UsageError("unknown model kind '" + std::string(s) + "' (expected gcn_only, encoder_only or joint)");
}

inline EncoderSource parse_encoder_source(std::string_view s) {
    if (s == "toy") return EncoderSource::toy;
    if (s == "precomputed") return EncoderSource::precomputed;
    throw UsageError("unknown encoder '" + std::string(s) + "' (expected toy or precomputed)");
}

struct ModelConfig {
    ModelKind kind = ModelKind::joint;
    EncoderSource encoder = EncoderSource::toy;
    std::size_t window = 5;
    std::size_t embedding_dim = 50;
    bool freeze_embeddings = false;
    gcn::GcnConfig gcn;
    encoder::EncoderConfig enc;

    bool uses_gcn() const noexcept { return kind != ModelKind::encoder_only; }
    bool uses_encoder() const noexcept { return kind != ModelKind::gcn_only; }
    bool uses_toy_encoder() const noexcept { return uses_encoder() && encoder == EncoderSource::toy; }
};

/// A sentence prepared for the forward pass.
struct Example {
    std::string id;
    std::string text;
    int label = -1;
    std::vector<text::WordId> word_ids;
    graph::TextGraph graph;
    const std::vector<double>* features = nullptr;
};

/// All trainable state of one classifier plus the shared lookup structures.
/// Copies are independent (each fold owns its own model); the feature store
/// is only referenced and must outlive the model.
struct Model {
    ModelConfig config;
    text::Vocab vocab;
    text::EmbeddingTable embeddings;
    graph::EdgeWeightStore store;
    gcn::GcnParams gcn;
    encoder::EncoderParams enc;
    encoder::EncoderHead enc_head;
    encoder::JointHead joint_head;
    encoder::GcnHead gcn_head;
    const encoder::FeatureStore* features = nullptr;

    std::size_t enc_dim() const {
        if (!config.uses_encoder()) return 0;
        if (config.encoder == EncoderSource::toy) return config.enc.d_model;
        if (!features) throw UsageError("precomputed encoder requires a feature store");
        return features->dim();
    }

    /// Parameters the configured kind actually uses, in a fixed order.
    std::vector<nn::Param*> params() {
        std::vector<nn::Param*> out;
        auto add = [&out](nn::Param& p) { out.push_back(&p); };
        if (config.uses_gcn()) {
            add(embeddings.vectors);
            add(store.weights);
            gcn.visit(add);
        }
        if (config.uses_toy_encoder()) enc.visit(add);
        switch (config.kind) {
        case ModelKind::gcn_only: gcn_head.visit(add); break;
        case ModelKind::encoder_only: enc_head.visit(add); break;
        case ModelKind::joint: joint_head.visit(add); break;
        }
        return out;
    }

    std::vector<const nn::Param*> params() const {
        auto mut = const_cast<Model*>(this)->params();
        return {mut.begin(), mut.end()};
    }

    void zero_grad() {
        for (nn::Param* p : params()) p->zero_grad();
    }

    Example prepare(const corpus::SentenceRecord& r) const {
        Example ex;
        ex.id = r.id;
        ex.text = r.text;
        ex.label = r.label;
        ex.word_ids = text::ids_of(text::tokenize(r.text), vocab);
        if (ex.word_ids.empty()) throw DataError("sentence " + r.id + " has no tokens");
        if (config.uses_gcn()) ex.graph = graph::build_graph(ex.word_ids, config.window, store);
        if (config.uses_toy_encoder() && ex.word_ids.size() + 1 > config.enc.max_len)
            throw DataError("sentence " + r.id + " has " + std::to_string(ex.word_ids.size()) +
                            " tokens; enc.max_len " + std::to_string(config.enc.max_len) + " is too small");
        if (config.uses_encoder() && config.encoder == EncoderSource::precomputed) {
            if (!features) throw UsageError("precomputed encoder requires a feature store");
            ex.features = &features->lookup(r.id);
        }
        return ex;
    }

    std::vector<Example> prepare(const std::vector<corpus::SentenceRecord>& records) const {
        std::vector<Example> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(prepare(r));
        return out;
    }

    /// 1 x 2 logit row for one example.
    nn::Var logits(nn::Tape& tape, const Example& ex) {
        std::optional<nn::Var> gcn_vec;
        std::optional<nn::Var> cls_vec;
        if (config.uses_gcn()) gcn_vec = gcn::gcn_encode(tape, ex.graph, store, embeddings, gcn);
        if (config.uses_encoder()) {
            if (config.encoder == EncoderSource::toy) {
                cls_vec = encoder::transformer_encode(tape, ex.word_ids, enc);
            } else {
                if (!ex.features) throw UsageError("example " + ex.id + " has no precomputed features");
                cls_vec = tape.constant(nn::Matrix::row(*ex.features));
            }
        }
        switch (config.kind) {
        case ModelKind::gcn_only: return encoder::classify_gcn_only(tape, *gcn_vec, gcn_head);
        case ModelKind::encoder_only: return encoder::classify_encoder_only(tape, *cls_vec, enc_head);
        case ModelKind::joint: return encoder::classify_joint(tape, *cls_vec, *gcn_vec, joint_head);
        }
        throw UsageError("unreachable model kind");
    }

    nn::Var loss(nn::Tape& tape, const Example& ex) {
        return nn::softmax_cross_entropy(tape, logits(tape, ex), ex.label);
    }

    nn::Matrix predict_logits(const Example& ex) {
        nn::Tape tape;
        return tape.value(logits(tape, ex));
    }
};

/// Builds fresh models from shared read-only inputs. When no pretrained
/// embeddings are supplied the vocabulary comes from the training records and
/// vectors are drawn uniformly at random.
struct ModelBuilder {
    ModelConfig config;
    std::optional<text::LoadedEmbeddings> pretrained;
    const encoder::FeatureStore* features = nullptr;

    Model build(const std::vector<corpus::SentenceRecord>& training_records, std::uint64_t seed) const {
        nn::Rng rng(seed);
        Model m;
        m.config = config;
        m.features = features;
        if (pretrained) {
            m.vocab = pretrained->vocab;
            m.embeddings = pretrained->table;
            if (m.embeddings.dim != config.embedding_dim)
                throw UsageError("embedding_dim " + std::to_string(config.embedding_dim) +
                                 " does not match loaded vectors of width " + std::to_string(m.embeddings.dim));
        } else {
            m.vocab = text::Vocab::from_records(training_records);
            m.embeddings = text::random_embeddings(m.vocab, config.embedding_dim, rng);
        }
        m.embeddings.set_trainable(!config.freeze_embeddings);
        m.store = graph::build_store(training_records, m.vocab, config.window);
        m.gcn = gcn::GcnParams(m.vocab.size(), m.embeddings.dim, config.gcn, rng);
        if (config.uses_toy_encoder()) m.enc = encoder::EncoderParams(m.vocab.size(), config.enc, rng);
        const std::size_t d_enc = m.enc_dim();
        if (config.kind == ModelKind::encoder_only) m.enc_head = encoder::EncoderHead(d_enc, rng);
        if (config.kind == ModelKind::joint) m.joint_head = encoder::JointHead(d_enc, config.gcn.d_gcn, rng);
        if (config.kind == ModelKind::gcn_only) m.gcn_head = encoder::GcnHead(config.gcn.d_gcn, rng);
        return m;
    }
};

} // namespace defx
