#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "defx/error.hpp"
#include "defx/nn/attention.hpp"
#include "defx/nn/tape.hpp"
#include "defx/text.hpp"

namespace defx::encoder {

using text::WordId;

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ffn_dim = 128;
    std::size_t max_len = 128;
    double ln_eps = 1e-5;

    void validate() const {
        if (d_model == 0 || heads == 0 || d_model % heads != 0)
            throw UsageError("encoder: d_model " + std::to_string(d_model) + " must be a positive multiple of heads " +
                             std::to_string(heads));
        if (layers == 0 || ffn_dim == 0) throw UsageError("encoder: layers and ffn_dim must be positive");
        if (max_len < 2) throw UsageError("encoder: max_len must be at least 2");
    }
};

/// Post-layernorm transformer block.
struct EncoderBlock {
    nn::AttentionParams attention;
    nn::Param ln1_g, ln1_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_g, ln2_b;

    EncoderBlock() = default;
    EncoderBlock(const std::string& prefix, const EncoderConfig& c, nn::Rng& rng)
        : attention(prefix + "attn.", c.d_model, c.heads, rng),
          ln1_g(prefix + "ln1.g", nn::Matrix(1, c.d_model, 1.0)), ln1_b(prefix + "ln1.b", nn::Matrix(1, c.d_model)),
          ffn_w1(prefix + "ffn.w1", nn::Matrix(c.ffn_dim, c.d_model)), ffn_b1(prefix + "ffn.b1", nn::Matrix(1, c.ffn_dim)),
          ffn_w2(prefix + "ffn.w2", nn::Matrix(c.d_model, c.ffn_dim)), ffn_b2(prefix + "ffn.b2", nn::Matrix(1, c.d_model)),
          ln2_g(prefix + "ln2.g", nn::Matrix(1, c.d_model, 1.0)), ln2_b(prefix + "ln2.b", nn::Matrix(1, c.d_model)) {
        nn::xavier_uniform(ffn_w1.value, rng);
        nn::xavier_uniform(ffn_w2.value, rng);
    }

    template <class F>
    void visit(F&& f) {
        attention.visit(f);
        for (nn::Param* p : {&ln1_g, &ln1_b, &ffn_w1, &ffn_b1, &ffn_w2, &ffn_b2, &ln2_g, &ln2_b}) f(*p);
    }
};

/// Toy transformer sentence encoder with its own token, CLS and learned
/// position embeddings.
struct EncoderParams {
    EncoderConfig config;
    nn::Param token_embedding;
    nn::Param cls;
    nn::Param positions;
    std::vector<EncoderBlock> blocks;

    EncoderParams() = default;
    EncoderParams(std::size_t vocab_size, const EncoderConfig& c, nn::Rng& rng)
        : config(c), token_embedding("enc.token", nn::Matrix(vocab_size, c.d_model)),
          cls("enc.cls", nn::Matrix(1, c.d_model)), positions("enc.pos", nn::Matrix(c.max_len, c.d_model)) {
        c.validate();
        nn::uniform_fill(token_embedding.value, rng, 0.1);
        nn::uniform_fill(cls.value, rng, 0.1);
        nn::uniform_fill(positions.value, rng, 0.1);
        for (std::size_t l = 0; l < c.layers; ++l)
            blocks.emplace_back("enc.layer" + std::to_string(l) + ".", c, rng);
    }

    std::size_t output_dim() const noexcept { return config.d_model; }

    template <class F>
    void visit(F&& f) {
        f(token_embedding);
        f(cls);
        f(positions);
        for (auto& b : blocks) b.visit(f);
    }
};

/// CLS-row feature (1 x d_model) of `[CLS] tokens...`.
inline nn::Var transformer_encode(nn::Tape& tape, std::span<const WordId> tokens, EncoderParams& p) {
    const std::size_t len = tokens.size() + 1;
    if (len > p.config.max_len)
        throw DataError("encoder: input of " + std::to_string(tokens.size()) + " tokens exceeds max_len " +
                        std::to_string(p.config.max_len) + " (including CLS)");
    std::vector<nn::Var> rows{tape.param(p.cls)};
    if (!tokens.empty()) rows.push_back(tape.gather_rows(p.token_embedding, tokens));
    nn::Var x = rows.size() == 1 ? rows.front() : tape.concat_rows(rows);
    std::vector<std::size_t> pos(len);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    x = tape.add(x, tape.gather_rows(p.positions, pos));

    const double eps = p.config.ln_eps;
    for (auto& b : p.blocks) {
        nn::Var attn = nn::self_attention(tape, x, b.attention).output;
        x = tape.layer_norm(tape.add(x, attn), tape.param(b.ln1_g), tape.param(b.ln1_b), eps);
        nn::Var h = tape.gelu(tape.linear(x, tape.param(b.ffn_w1), tape.param(b.ffn_b1)));
        nn::Var f = tape.linear(h, tape.param(b.ffn_w2), tape.param(b.ffn_b2));
        x = tape.layer_norm(tape.add(x, f), tape.param(b.ln2_g), tape.param(b.ln2_b), eps);
    }
    return tape.select_row(x, 0);
}

/// Externally exported sentence features keyed by sentence id.
class FeatureStore {
public:
    FeatureStore() = default;
    explicit FeatureStore(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return features_.size(); }
    bool contains(const std::string& id) const { return features_.contains(id); }

    void insert(const std::string& id, std::vector<double> v) {
        if (v.size() != dim_) throw DataError("feature store: width mismatch for id " + id);
        if (!features_.emplace(id, std::move(v)).second) throw DataError("feature store: duplicate id " + id);
    }

    const std::vector<double>& lookup(const std::string& id) const {
        auto it = features_.find(id);
        if (it == features_.end()) throw DataError("no feature for id " + id);
        return it->second;
    }

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, std::vector<double>> features_;
};

/// Header `dim=<d>`, then `sentence_id<TAB>v1 v2 ... vd` per line.
inline FeatureStore load_feature_store(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open feature file " + path.string());
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw DataError(path.string() + ": " + what + " at line " + std::to_string(line_no));
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) break;
    }
    std::size_t dim = 0;
    {
        std::string_view h(line);
        if (!h.starts_with("dim=")) fail("missing dim=<d> header");
        h.remove_prefix(4);
        auto [ptr, ec] = std::from_chars(h.data(), h.data() + h.size(), dim);
        if (ec != std::errc() || ptr != h.data() + h.size() || dim == 0) fail("bad dim header");
    }
    FeatureStore store(dim);
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) fail("expected sentence_id<TAB>values");
        std::string id = line.substr(0, tab);
        std::vector<double> v;
        v.reserve(dim);
        std::string_view rest = std::string_view(line).substr(tab + 1);
        while (!rest.empty()) {
            const auto sp = rest.find(' ');
            const auto tok = rest.substr(0, sp);
            double x = 0.0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
            if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(x))
                fail("unparsable value '" + std::string(tok) + "'");
            v.push_back(x);
            if (sp == std::string_view::npos) break;
            rest.remove_prefix(sp + 1);
        }
        if (v.size() != dim) fail("width " + std::to_string(v.size()) + " != dim " + std::to_string(dim));
        if (store.contains(id)) fail("duplicate id " + id);
        store.insert(id, std::move(v));
    }
    return store;
}

/// Pooler-then-classifier head: linear(d->d), tanh, linear(d->2).
struct EncoderHead {
    nn::Param w1, b1, w2, b2;

    EncoderHead() = default;
    EncoderHead(std::size_t d_enc, nn::Rng& rng)
        : w1("head.enc.w1", nn::Matrix(d_enc, d_enc)), b1("head.enc.b1", nn::Matrix(1, d_enc)),
          w2("head.enc.w2", nn::Matrix(2, d_enc)), b2("head.enc.b2", nn::Matrix(1, 2)) {
        nn::xavier_uniform(w1.value, rng);
        nn::xavier_uniform(w2.value, rng);
    }

    template <class F>
    void visit(F&& f) {
        for (nn::Param* p : {&w1, &b1, &w2, &b2}) f(*p);
    }
};

/// Single linear layer over concat(cls, gcn) -> 2 logits.
struct JointHead {
    nn::Param w, b;
    std::size_t d_enc = 0;
    std::size_t d_gcn = 0;

    JointHead() = default;
    JointHead(std::size_t enc_dim, std::size_t gcn_dim, nn::Rng& rng)
        : w("head.joint.w", nn::Matrix(2, enc_dim + gcn_dim)), b("head.joint.b", nn::Matrix(1, 2)), d_enc(enc_dim),
          d_gcn(gcn_dim) {
        nn::xavier_uniform(w.value, rng);
    }

    template <class F>
    void visit(F&& f) {
        f(w);
        f(b);
    }
};

/// Linear d_gcn -> 2 head for the graph-only model.
struct GcnHead {
    nn::Param w, b;

    GcnHead() = default;
    GcnHead(std::size_t d_gcn, nn::Rng& rng) : w("head.gcn.w", nn::Matrix(2, d_gcn)), b("head.gcn.b", nn::Matrix(1, 2)) {
        nn::xavier_uniform(w.value, rng);
    }

    template <class F>
    void visit(F&& f) {
        f(w);
        f(b);
    }
};

inline nn::Var classify_encoder_only(nn::Tape& tape, nn::Var cls_vec, EncoderHead& head) {
    const auto width = tape.value(cls_vec).cols();
    if (width != head.w1.value.cols())
        throw UsageError("classify_encoder_only: feature width " + std::to_string(width) + " != " +
                         std::to_string(head.w1.value.cols()));
    nn::Var h = tape.tanh(tape.linear(cls_vec, tape.param(head.w1), tape.param(head.b1)));
    return tape.linear(h, tape.param(head.w2), tape.param(head.b2));
}

inline nn::Var classify_joint(nn::Tape& tape, nn::Var cls_vec, nn::Var gcn_vec, JointHead& head) {
    if (tape.value(cls_vec).cols() != head.d_enc || tape.value(gcn_vec).cols() != head.d_gcn)
        throw UsageError("classify_joint: expected widths " + std::to_string(head.d_enc) + " and " +
                         std::to_string(head.d_gcn));
    const nn::Var parts[] = {cls_vec, gcn_vec};
    return tape.linear(tape.concat_cols(parts), tape.param(head.w), tape.param(head.b));
}

inline nn::Var classify_gcn_only(nn::Tape& tape, nn::Var gcn_vec, GcnHead& head) {
    if (tape.value(gcn_vec).cols() != head.w.value.cols()) throw UsageError("classify_gcn_only: width mismatch");
    return tape.linear(gcn_vec, tape.param(head.w), tape.param(head.b));
}

} // namespace defx::encoder
