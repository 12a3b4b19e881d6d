#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "defx/corpus.hpp"
#include "defx/model.hpp"
#include "defx/nn/adamw.hpp"
#include "defx/nn/loss.hpp"

namespace defx::harness {

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    nn::AdamWConfig optimizer;
    ModelConfig model;

    void validate() const {
        if (epochs < 1) throw UsageError("epochs must be at least 1");
        if (batch_size < 1) throw UsageError("batch_size must be at least 1");
        if (!(optimizer.lr > 0.0)) throw UsageError("lr must be positive");
        if (model.window < 1) throw UsageError("window must be at least 1");
        model.enc.validate();
    }
};

/// Confusion counts with the positive class = label 1.
struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1_positive = 0.0;
    double accuracy = 0.0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }

    /// Derived values; 0 whenever a denominator is 0.
    static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
        Metrics m{tp, fp, fn, tn};
        const auto d = [](std::size_t x) { return static_cast<double>(x); };
        m.precision = tp + fp ? d(tp) / d(tp + fp) : 0.0;
        m.recall = tp + fn ? d(tp) / d(tp + fn) : 0.0;
        m.f1_positive = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        m.accuracy = m.total() ? d(tp + tn) / d(m.total()) : 0.0;
        return m;
    }
};

inline Metrics metrics_from_predictions(std::span<const int> predicted, std::span<const int> gold) {
    if (predicted.size() != gold.size()) throw UsageError("metrics: prediction and gold sizes differ");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool p = predicted[i] == 1;
        const bool g = gold[i] == 1;
        if (p && g) ++tp;
        else if (p) ++fp;
        else if (g) ++fn;
        else ++tn;
    }
    return Metrics::from_counts(tp, fp, fn, tn);
}

/// Argmax of a 1 x 2 row; ties go to the negative class.
inline int predicted_label(const nn::Matrix& logits_or_probs) { return logits_or_probs[1] > logits_or_probs[0] ? 1 : 0; }

struct TrainResult {
    /// Mean example loss per epoch.
    std::vector<double> loss_history;
};

/// Seeded per-epoch shuffle, per-example forward/backward, one AdamW step per
/// `batch_size` examples on the averaged accumulated gradient.
inline TrainResult train(const TrainConfig& config, const std::vector<Example>& examples, Model& model,
                         nn::OptState& state) {
    config.validate();
    if (examples.empty()) throw DataError("train: empty training set");
    const bool has_pos = std::any_of(examples.begin(), examples.end(), [](const Example& e) { return e.label == 1; });
    const bool has_neg = std::any_of(examples.begin(), examples.end(), [](const Example& e) { return e.label == 0; });
    if (!has_pos || !has_neg) throw DataError("train: training set must contain both labels");
    for (const auto& e : examples)
        if (e.label != 0 && e.label != 1) throw DataError("train: example " + e.id + " is unlabeled");

    auto params = model.params();
    for (nn::Param* p : params) p->zero_grad();
    nn::Rng rng(config.seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t in_batch = 0;
        auto flush = [&] {
            const double inv = 1.0 / static_cast<double>(in_batch);
            for (nn::Param* p : params)
                for (double& g : p->grad.data()) g *= inv;
            nn::adamw_step(params, state);
            for (nn::Param* p : params) p->zero_grad();
            in_batch = 0;
        };
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            const Example& ex = examples[order[pos]];
            nn::Tape tape;
            nn::Var loss = model.loss(tape, ex);
            const double lv = tape.value(loss)[0];
            if (!std::isfinite(lv))
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", example " + ex.id);
            tape.backward(loss);
            total += lv;
            if (++in_batch == config.batch_size) flush();
        }
        if (in_batch > 0) flush();
        result.loss_history.push_back(total / static_cast<double>(examples.size()));
    }
    return result;
}

inline TrainResult train(const TrainConfig& config, const std::vector<Example>& examples, Model& model) {
    nn::OptState state(config.optimizer);
    return train(config, examples, model, state);
}

/// Softmax probabilities (1 x 2) per example.
inline std::vector<nn::Matrix> predict_proba(Model& model, const std::vector<Example>& examples) {
    std::vector<nn::Matrix> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(nn::softmax(model.predict_logits(ex)));
    return out;
}

inline std::vector<int> predict(Model& model, const std::vector<Example>& examples) {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(predicted_label(model.predict_logits(ex)));
    return out;
}

inline Metrics evaluate(Model& model, const std::vector<Example>& examples) {
    std::vector<int> gold;
    gold.reserve(examples.size());
    for (const auto& ex : examples) gold.push_back(ex.label);
    const auto pred = predict(model, examples);
    return metrics_from_predictions(pred, gold);
}

struct ErrorReportRow {
    std::size_t rank = 0;
    double loss = 0.0;
    int predicted = 0;
    int gold = 0;
    std::string sentence;
    std::string id;
};

/// Per-example cross-entropy, sorted by descending loss (stable on ties),
/// truncated to top_n.
inline std::vector<ErrorReportRow> error_analysis(Model& model, const std::vector<Example>& examples, std::size_t top_n) {
    if (top_n < 1) throw UsageError("error_analysis: top_n must be at least 1");
    std::vector<ErrorReportRow> rows;
    rows.reserve(examples.size());
    for (const auto& ex : examples) {
        if (ex.label != 0 && ex.label != 1) throw DataError("error_analysis: example " + ex.id + " is unlabeled");
        const nn::Matrix logits = model.predict_logits(ex);
        rows.push_back({0, nn::cross_entropy_value(logits, ex.label), predicted_label(logits), ex.label, ex.text, ex.id});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.loss > b.loss; });
    if (rows.size() > top_n) rows.resize(top_n);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = i + 1;
    return rows;
}

struct FoldResult {
    std::size_t index = 0;
    Metrics metrics;
    std::vector<double> loss_history;
    /// Softmax probabilities on the test set, if one was supplied.
    std::vector<nn::Matrix> test_probs;
};

struct CvResult {
    std::vector<FoldResult> folds;
    double mean_f1 = 0.0, stddev_f1 = 0.0;
    double mean_precision = 0.0, mean_recall = 0.0, mean_accuracy = 0.0;
    /// Probability-mean ensemble over fold models.
    std::vector<nn::Matrix> test_probs;
    std::vector<int> test_predictions;
};

/// Mean of equally weighted probability rows; argmax with ties to 0.
inline std::vector<nn::Matrix> ensemble_mean(const std::vector<std::vector<nn::Matrix>>& per_model) {
    if (per_model.empty()) return {};
    std::vector<nn::Matrix> out(per_model.front().size(), nn::Matrix(1, 2));
    for (const auto& probs : per_model) {
        if (probs.size() != out.size()) throw UsageError("ensemble: models disagree on example count");
        for (std::size_t i = 0; i < probs.size(); ++i)
            for (std::size_t c = 0; c < 2; ++c) out[i][c] += probs[i][c];
    }
    const double inv = 1.0 / static_cast<double>(per_model.size());
    for (auto& row : out)
        for (double& v : row.data()) v *= inv;
    return out;
}

/// Per-fold seed derived from the run seed (splitmix64 finalizer).
inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (fold + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Stratified k-fold: one fresh model per fold trained on its train split and
/// scored on its validation split after the last epoch. Folds run on up to
/// `jobs` threads; every fold owns its model, so results do not depend on
/// `jobs`.
inline CvResult cross_validate(const TrainConfig& config, const ModelBuilder& builder,
                               const std::vector<corpus::SentenceRecord>& records, std::size_t k,
                               const std::vector<corpus::SentenceRecord>* test = nullptr, std::size_t jobs = 1) {
    config.validate();
    const auto folds = corpus::make_folds(records, k, config.seed);
    CvResult result;
    result.folds.resize(k);
    std::vector<std::exception_ptr> errors(k);

    auto run_fold = [&](std::size_t f) {
        try {
            std::vector<corpus::SentenceRecord> train_records, val_records;
            for (std::size_t i : folds[f].train_indices) train_records.push_back(records[i]);
            for (std::size_t i : folds[f].val_indices) val_records.push_back(records[i]);
            TrainConfig fc = config;
            fc.seed = fold_seed(config.seed, f);
            Model model = builder.build(train_records, fc.seed);
            const auto train_ex = model.prepare(train_records);
            const auto val_ex = model.prepare(val_records);
            FoldResult& fr = result.folds[f];
            fr.index = f;
            fr.loss_history = train(fc, train_ex, model).loss_history;
            fr.metrics = evaluate(model, val_ex);
            if (test) fr.test_probs = predict_proba(model, model.prepare(*test));
        } catch (...) {
            errors[f] = std::current_exception();
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(jobs, 1, k);
    if (workers == 1) {
        for (std::size_t f = 0; f < k; ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t f = w; f < k; f += workers) run_fold(f);
            });
        for (auto& t : pool) t.join();
    }
    for (std::size_t f = 0; f < k; ++f) {
        if (!errors[f]) continue;
        try {
            std::rethrow_exception(errors[f]);
        } catch (const Error& e) {
            rethrow_with_prefix(e, "fold " + std::to_string(f) + ": ");
        } catch (const std::exception& e) {
            throw DataError("fold " + std::to_string(f) + ": " + e.what());
        }
    }

    double sum_f1 = 0.0;
    for (const auto& fr : result.folds) {
        sum_f1 += fr.metrics.f1_positive;
        result.mean_precision += fr.metrics.precision;
        result.mean_recall += fr.metrics.recall;
        result.mean_accuracy += fr.metrics.accuracy;
    }
    const double kk = static_cast<double>(k);
    result.mean_f1 = sum_f1 / kk;
    result.mean_precision /= kk;
    result.mean_recall /= kk;
    result.mean_accuracy /= kk;
    double ss = 0.0;
    for (const auto& fr : result.folds) ss += (fr.metrics.f1_positive - result.mean_f1) * (fr.metrics.f1_positive - result.mean_f1);
    result.stddev_f1 = std::sqrt(ss / kk);

    if (test) {
        std::vector<std::vector<nn::Matrix>> per_model;
        for (const auto& fr : result.folds) per_model.push_back(fr.test_probs);
        result.test_probs = ensemble_mean(per_model);
        for (const auto& p : result.test_probs) result.test_predictions.push_back(predicted_label(p));
    }
    return result;
}

} // namespace defx::harness
