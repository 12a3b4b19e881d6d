#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "defx/config.hpp"
#include "defx/corpus.hpp"
#include "defx/harness.hpp"
#include "defx/io.hpp"

namespace defx::cli {

namespace fs = std::filesystem;

/// Options shared by train and cv: `--config` plus one `--<key>` flag per
/// config key. Flags override the file, the file overrides DEFX_SEED for
/// the seed, which overrides the built-in default.
struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    CLI::App* app = nullptr;

    void attach(CLI::App* sub) {
        app = sub;
        sub->add_option("--config", config_file, "flat key = value config file");
        for (const auto& [key, def] : config::FlatConfig::defaults())
            sub->add_option("--" + key, values[key], "config key '" + key + "' (default: " + (def.empty() ? "none" : def) + ")");
    }

    config::FlatConfig resolve() const {
        config::FlatConfig cfg;
        bool seed_from_file = false;
        if (!config_file.empty()) {
            cfg.merge_file(config_file);
            seed_from_file = file_seed_set(config_file);
        }
        if (!seed_from_file && app->count("--seed") == 0)
            if (const char* env = std::getenv("DEFX_SEED"); env && *env) cfg.set("seed", env);
        for (const auto& [key, v] : values)
            if (app->count("--" + key) > 0) cfg.set(key, v);
        cfg.to_train_config();
        return cfg;
    }

private:
    static bool file_seed_set(const std::string& path) {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string key = line.substr(0, eq);
            key.erase(0, key.find_first_not_of(" \t"));
            key.erase(key.find_last_not_of(" \t") + 1);
            if (key == "seed") return true;
        }
        return false;
    }
};

inline std::set<std::string> token_set(const std::vector<const std::vector<corpus::SentenceRecord>*>& sets) {
    std::set<std::string> out;
    for (const auto* records : sets)
        for (const auto& r : *records)
            for (auto& t : text::tokenize(r.text)) out.insert(std::move(t));
    return out;
}

/// Shared inputs for building models from a resolved config.
struct Resources {
    harness::TrainConfig train;
    std::unique_ptr<encoder::FeatureStore> features;
    ModelBuilder builder;
};

inline Resources load_resources(const config::FlatConfig& cfg,
                                const std::vector<const std::vector<corpus::SentenceRecord>*>& data) {
    Resources res;
    res.train = cfg.to_train_config();
    const ModelConfig& mc = res.train.model;
    res.builder.config = mc;
    if (mc.uses_encoder() && mc.encoder == EncoderSource::precomputed) {
        if (cfg.get("features").empty())
            throw UsageError("--features is required for model " + std::string(to_string(mc.kind)) + " with --encoder precomputed");
        res.features = std::make_unique<encoder::FeatureStore>(encoder::load_feature_store(cfg.get("features")));
        res.builder.features = res.features.get();
    }
    if (mc.uses_gcn() && cfg.get("embeddings").empty())
        throw UsageError("--embeddings is required for model " + std::string(to_string(mc.kind)));
    if (!cfg.get("embeddings").empty()) {
        const auto keep = token_set(data);
        res.builder.pretrained = text::load_embeddings(cfg.get("embeddings"), mc.embedding_dim, &keep);
    }
    return res;
}

inline std::vector<corpus::SentenceRecord> load_labeled(const std::string& path) {
    corpus::LoadStats stats;
    auto records = corpus::load_dataset(path, &stats);
    if (stats.rejected_empty > 0)
        std::cerr << "warning: " << path << ": dropped " << stats.rejected_empty << " empty sentence(s)\n";
    return records;
}

inline int cmd_prepare(const std::string& input, const std::string& output, const std::string& subjects_file,
                       const std::string& subject_flag, bool add_subject) {
    auto records = load_labeled(input);
    if (add_subject) {
        std::string subject = subject_flag;
        if (subject.empty() && !subjects_file.empty()) {
            const auto map = corpus::load_subjects(subjects_file);
            const auto it = map.find(fs::path(input).filename().string());
            if (it != map.end()) subject = it->second;
        }
        if (subject.empty())
            throw UsageError("--add-subject: no subject for " + fs::path(input).filename().string() +
                             " (pass --subject or a --subjects sidecar entry)");
        corpus::apply_subject(records, subject);
    }
    corpus::write_dataset(records, output);
    return 0;
}

inline int cmd_train(const config::FlatConfig& cfg, const std::string& train_path, const std::string& dev_path,
                     const std::string& out_dir) {
    const auto train_records = load_labeled(train_path);
    std::vector<corpus::SentenceRecord> dev_records;
    if (!dev_path.empty()) dev_records = load_labeled(dev_path);
    Resources res = load_resources(cfg, {&train_records, &dev_records});
    Model model = res.builder.build(train_records, res.train.seed);
    const auto train_ex = model.prepare(train_records);
    const auto history = harness::train(res.train, train_ex, model);

    io::ordered_json j{{"command", "train"},
                       {"seed", cfg.get("seed")},
                       {"config", io::config_json(cfg)},
                       {"loss_history", history.loss_history},
                       {"train", io::to_json(harness::evaluate(model, train_ex))}};
    if (!dev_records.empty()) {
        const auto m = harness::evaluate(model, model.prepare(dev_records));
        j["validation"] = io::to_json(m);
        std::cout << io::format_results_table({{std::string(to_string(res.train.model.kind)), m.f1_positive, std::nullopt}});
    }
    io::save_model(model, cfg, out_dir);
    io::write_json(j, fs::path(out_dir) / "metrics.json");
    return 0;
}

inline int cmd_cv(const config::FlatConfig& cfg, const std::string& train_path, const std::string& test_path,
                  const std::string& metrics_path, const std::string& predictions_path, const std::string& folds_path) {
    const auto records = load_labeled(train_path);
    std::vector<corpus::SentenceRecord> test_records;
    if (!test_path.empty()) test_records = corpus::load_sentences(test_path);
    Resources res = load_resources(cfg, {&records, &test_records});
    const std::size_t k = cfg.size_value("folds");
    if (!folds_path.empty()) {
        corpus::write_folds(corpus::make_folds(records, k, res.train.seed), folds_path);
        io::write_config_sidecar(cfg, folds_path);
    }
    const auto result = harness::cross_validate(res.train, res.builder, records, k,
                                                test_path.empty() ? nullptr : &test_records, cfg.size_value("jobs"));
    std::optional<harness::Metrics> test_metrics;
    if (!test_path.empty()) {
        const bool labeled = std::all_of(test_records.begin(), test_records.end(), [](const auto& r) { return r.label >= 0; });
        if (labeled) {
            std::vector<int> gold;
            for (const auto& r : test_records) gold.push_back(r.label);
            test_metrics = harness::metrics_from_predictions(result.test_predictions, gold);
        }
        if (!predictions_path.empty()) {
            io::write_predictions(test_records, result.test_predictions, predictions_path);
            io::write_config_sidecar(cfg, predictions_path);
        }
    }
    io::write_json(io::cv_json(result, cfg, test_metrics), metrics_path);
    std::cout << io::format_results_table({{std::string(to_string(res.train.model.kind)), result.mean_f1,
                                            test_metrics ? std::optional<double>(test_metrics->f1_positive) : std::nullopt}});
    return 0;
}

inline io::LoadedModel open_model(const std::string& dir, const std::string& features_flag,
                                  std::unique_ptr<encoder::FeatureStore>& features) {
    config::FlatConfig saved;
    saved.merge_file(fs::path(dir) / "config.txt");
    const auto tc = saved.to_train_config();
    if (tc.model.uses_encoder() && tc.model.encoder == EncoderSource::precomputed) {
        const std::string path = features_flag.empty() ? saved.get("features") : features_flag;
        if (path.empty()) throw UsageError("--features is required for a precomputed-encoder model");
        features = std::make_unique<encoder::FeatureStore>(encoder::load_feature_store(path));
    }
    auto loaded = io::load_model(dir, features.get());
    if (!features_flag.empty()) loaded.config.set("features", features_flag);
    return loaded;
}

inline int cmd_predict(const std::string& model_dir, const std::string& input, const std::string& output,
                       const std::string& features_flag) {
    std::unique_ptr<encoder::FeatureStore> features;
    auto loaded = open_model(model_dir, features_flag, features);
    const auto records = corpus::load_sentences(input);
    const auto labels = harness::predict(loaded.model, loaded.model.prepare(records));
    io::write_predictions(records, labels, output);
    io::write_config_sidecar(loaded.config, output);
    return 0;
}

inline int cmd_errors(const std::string& model_dir, const std::string& input, const std::string& output,
                      const std::string& features_flag, std::size_t top) {
    std::unique_ptr<encoder::FeatureStore> features;
    auto loaded = open_model(model_dir, features_flag, features);
    const auto records = load_labeled(input);
    const auto rows = harness::error_analysis(loaded.model, loaded.model.prepare(records), top);
    io::write_error_report(rows, output);
    io::write_config_sidecar(loaded.config, output);
    return 0;
}

/// Entry point; returns the process exit code (0 ok, 1 usage, 2 data, 3 numerical).
inline int run(int argc, char** argv) {
    CLI::App app{"Definition-sentence classification: text-level GCN, toy transformer encoder, joint model"};
    app.require_subcommand(1);

    std::string input, output, subjects, subject, train_path, dev_path, test_path, out_dir, metrics_path,
        predictions_path, folds_path, model_dir, features_flag;
    bool add_subject = false;
    std::size_t top = 20;

    auto* prepare = app.add_subcommand("prepare", "strip leading line numbers, optionally prepend the subject token");
    prepare->add_option("--input", input, "dataset TSV (sentence<TAB>label)")->required();
    prepare->add_option("--output", output, "output TSV")->required();
    prepare->add_option("--subjects", subjects, "sidecar TSV filename<TAB>subject");
    prepare->add_option("--subject", subject, "subject token for every sentence");
    prepare->add_flag("--add-subject", add_subject, "prepend the subject token");

    ConfigFlags train_flags, cv_flags;
    auto* train = app.add_subcommand("train", "train one model and save it to a directory");
    train->add_option("--train", train_path, "training TSV")->required();
    train->add_option("--dev", dev_path, "optional validation TSV scored after the final epoch");
    train->add_option("--output", out_dir, "model output directory")->required();
    train_flags.attach(train);

    auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation");
    cv->add_option("--train", train_path, "training TSV")->required();
    cv->add_option("--test", test_path, "optional test sentences for the fold-ensemble prediction");
    cv->add_option("--output", metrics_path, "metrics JSON path")->required();
    cv->add_option("--predictions", predictions_path, "ensemble predictions TSV for --test");
    cv->add_option("--folds-out", folds_path, "fold assignment dump");
    cv_flags.attach(cv);

    auto* predict = app.add_subcommand("predict", "label sentences with a trained model");
    predict->add_option("--model-dir", model_dir, "directory written by train")->required();
    predict->add_option("--input", input, "sentences, optionally with a label column")->required();
    predict->add_option("--output", output, "predictions TSV (sentence<TAB>label)")->required();
    predict->add_option("--features", features_flag, "feature file for precomputed-encoder models");

    auto* errors = app.add_subcommand("errors", "rank labeled sentences by descending cross-entropy loss");
    errors->add_option("--model-dir", model_dir, "directory written by train")->required();
    errors->add_option("--input", input, "labeled TSV")->required();
    errors->add_option("--output", output, "report TSV")->required();
    errors->add_option("--features", features_flag, "feature file for precomputed-encoder models");
    errors->add_option("--top", top, "number of rows to report")->default_val(20);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*prepare) return cmd_prepare(input, output, subjects, subject, add_subject);
        if (*train) return cmd_train(train_flags.resolve(), train_path, dev_path, out_dir);
        if (*cv) return cmd_cv(cv_flags.resolve(), train_path, test_path, metrics_path, predictions_path, folds_path);
        if (*predict) return cmd_predict(model_dir, input, output, features_flag);
        if (*errors) return cmd_errors(model_dir, input, output, features_flag, top);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

} // namespace defx::cli
