#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "defx/config.hpp"
#include "defx/harness.hpp"
#include "defx/nn/checkpoint.hpp"

namespace defx::io {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

inline ordered_json to_json(const harness::Metrics& m) {
    return ordered_json{{"tp", m.tp},
                        {"fp", m.fp},
                        {"fn", m.fn},
                        {"tn", m.tn},
                        {"precision", m.precision},
                        {"recall", m.recall},
                        {"f1_positive", m.f1_positive},
                        {"accuracy", m.accuracy}};
}

inline ordered_json config_json(const config::FlatConfig& cfg) {
    ordered_json out = ordered_json::object();
    for (const auto& [k, v] : cfg.values()) out[k] = v;
    return out;
}

inline void write_json(const ordered_json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline ordered_json cv_json(const harness::CvResult& r, const config::FlatConfig& cfg,
                            const std::optional<harness::Metrics>& test_metrics = std::nullopt) {
    ordered_json folds = ordered_json::array();
    for (const auto& f : r.folds) {
        ordered_json fj = to_json(f.metrics);
        fj["fold"] = f.index;
        fj["loss_history"] = f.loss_history;
        folds.push_back(std::move(fj));
    }
    ordered_json j{{"command", "cv"},
                   {"seed", cfg.get("seed")},
                   {"config", config_json(cfg)},
                   {"folds", folds},
                   {"mean",
                    {{"precision", r.mean_precision},
                     {"recall", r.mean_recall},
                     {"f1_positive", r.mean_f1},
                     {"accuracy", r.mean_accuracy}}},
                   {"stddev", {{"f1_positive", r.stddev_f1}}}};
    if (test_metrics) j["test_ensemble"] = to_json(*test_metrics);
    return j;
}

/// Rows shaped like the usual results table: model, validation F1, test F1.
struct ResultRow {
    std::string model;
    std::optional<double> validation_f1;
    std::optional<double> test_f1;
};

inline std::string format_results_table(const std::vector<ResultRow>& rows) {
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", *v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "| Model | Validation Set | Test Set |\n|---|---|---|\n";
    for (const auto& r : rows) out << "| " << r.model << " | " << cell(r.validation_f1) << " | " << cell(r.test_f1) << " |\n";
    return out.str();
}

inline std::string format_loss(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// `rank<TAB>loss<TAB>pred<TAB>gold<TAB>sentence`.
inline void write_error_report(const std::vector<harness::ErrorReportRow>& rows, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : rows)
        out << r.rank << '\t' << format_loss(r.loss) << '\t' << r.predicted << '\t' << r.gold << '\t' << r.sentence << '\n';
}

/// `sentence<TAB>label`.
inline void write_predictions(const std::vector<corpus::SentenceRecord>& records, const std::vector<int>& labels,
                              const fs::path& path) {
    if (records.size() != labels.size()) throw UsageError("write_predictions: size mismatch");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (std::size_t i = 0; i < records.size(); ++i) out << records[i].raw_text << '\t' << labels[i] << '\n';
}

/// TSV artifacts keep their exact column layout; the effective config goes
/// next to them as `<path>.config`.
inline void write_config_sidecar(const config::FlatConfig& cfg, const fs::path& artifact) {
    std::ofstream out(artifact.string() + ".config");
    if (!out) throw DataError("cannot write " + artifact.string() + ".config");
    out << cfg.serialize();
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

/// Model directory: config.txt, vocab.txt, edges.txt, model.ckpt.
inline void save_model(const Model& model, const config::FlatConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.serialize());
    text::write_vocab(model.vocab, dir / "vocab.txt");
    graph::write_store(model.store, dir / "edges.txt");
    nn::save_checkpoint((dir / "model.ckpt").string(), model.params());
}

struct LoadedModel {
    config::FlatConfig config;
    harness::TrainConfig train_config;
    Model model;
};

/// Rebuilds parameter shapes from the saved config and vocab, then fills
/// values from the checkpoint.
inline LoadedModel load_model(const fs::path& dir, const encoder::FeatureStore* features) {
    LoadedModel out;
    out.config.merge_file(dir / "config.txt");
    out.train_config = out.config.to_train_config();
    const ModelConfig& mc = out.train_config.model;
    Model& m = out.model;
    m.config = mc;
    m.features = features;
    m.vocab = text::read_vocab(dir / "vocab.txt");
    m.store = graph::read_store(dir / "edges.txt");
    nn::Rng rng(0);
    m.embeddings.dim = mc.embedding_dim;
    m.embeddings.vectors = nn::Param(text::embedding_param_name, nn::Matrix(m.vocab.size(), mc.embedding_dim));
    m.embeddings.set_trainable(!mc.freeze_embeddings);
    m.gcn = gcn::GcnParams(m.vocab.size(), mc.embedding_dim, mc.gcn, rng);
    if (mc.uses_toy_encoder()) m.enc = encoder::EncoderParams(m.vocab.size(), mc.enc, rng);
    const std::size_t d_enc = m.enc_dim();
    if (mc.kind == ModelKind::encoder_only) m.enc_head = encoder::EncoderHead(d_enc, rng);
    if (mc.kind == ModelKind::joint) m.joint_head = encoder::JointHead(d_enc, mc.gcn.d_gcn, rng);
    if (mc.kind == ModelKind::gcn_only) m.gcn_head = encoder::GcnHead(mc.gcn.d_gcn, rng);
    nn::load_checkpoint((dir / "model.ckpt").string(), m.params());
    return out;
}

} // namespace defx::io
