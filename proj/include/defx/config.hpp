#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "defx/error.hpp"
#include "defx/harness.hpp"

namespace defx::config {

/// Flat `key = value` configuration. Keys are fixed by `defaults()`; nested
/// settings use dotted names such as `enc.layers`.
class FlatConfig {
public:
    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d{
            {"model", "joint"},
            {"encoder", "toy"},
            {"window", "5"},
            {"embedding_dim", "50"},
            {"freeze_embeddings", "false"},
            {"gcn.dim", "64"},
            {"gcn.rounds", "1"},
            {"gcn.aggregation", "mean"},
            {"enc.d_model", "64"},
            {"enc.layers", "2"},
            {"enc.heads", "2"},
            {"enc.ffn_dim", "128"},
            {"enc.max_len", "128"},
            {"epochs", "5"},
            {"lr", "2e-5"},
            {"batch_size", "16"},
            {"seed", "0"},
            {"beta1", "0.9"},
            {"beta2", "0.999"},
            {"eps", "1e-8"},
            {"weight_decay", "0.01"},
            {"folds", "10"},
            {"jobs", "1"},
            {"embeddings", ""},
            {"features", ""},
        };
        return d;
    }

    FlatConfig() : values_(defaults()) {}

    static bool known(const std::string& key) { return defaults().contains(key); }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw UsageError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
        return it->second;
    }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    /// Merges `key = value` lines; `#` starts a comment line.
    void merge_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open config " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw UsageError(path.string() + ": expected key = value at line " + std::to_string(line_no));
            const std::string key(trim(t.substr(0, eq)));
            if (!known(key))
                throw UsageError(path.string() + ": unknown config key '" + key + "' at line " + std::to_string(line_no));
            values_[key] = std::string(trim(t.substr(eq + 1)));
        }
    }

    std::string serialize() const {
        std::ostringstream out;
        for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
        return out.str();
    }

    std::string str(const std::string& key) const { return get(key); }

    std::size_t size_value(const std::string& key) const {
        const auto& v = get(key);
        std::size_t out = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
            throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
        return out;
    }

    std::uint64_t u64_value(const std::string& key) const {
        const auto& v = get(key);
        std::uint64_t out = 0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
            throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
        return out;
    }

    double real_value(const std::string& key) const {
        const auto& v = get(key);
        double out = 0.0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
            throw UsageError("config key '" + key + "': expected a number, got '" + v + "'");
        return out;
    }

    bool bool_value(const std::string& key) const {
        const auto& v = get(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw UsageError("config key '" + key + "': expected true or false, got '" + v + "'");
    }

    harness::TrainConfig to_train_config() const {
        harness::TrainConfig c;
        c.epochs = size_value("epochs");
        c.batch_size = size_value("batch_size");
        c.seed = u64_value("seed");
        c.optimizer.lr = real_value("lr");
        c.optimizer.beta1 = real_value("beta1");
        c.optimizer.beta2 = real_value("beta2");
        c.optimizer.eps = real_value("eps");
        c.optimizer.weight_decay = real_value("weight_decay");
        ModelConfig& m = c.model;
        m.kind = parse_model_kind(str("model"));
        m.encoder = parse_encoder_source(str("encoder"));
        m.window = size_value("window");
        m.embedding_dim = size_value("embedding_dim");
        m.freeze_embeddings = bool_value("freeze_embeddings");
        m.gcn.d_gcn = size_value("gcn.dim");
        m.gcn.rounds = size_value("gcn.rounds");
        const auto& agg = str("gcn.aggregation");
        if (agg == "mean") m.gcn.aggregation = gcn::Aggregation::mean;
        else if (agg == "max") m.gcn.aggregation = gcn::Aggregation::max;
        else throw UsageError("gcn.aggregation must be mean or max, got '" + agg + "'");
        m.enc.d_model = size_value("enc.d_model");
        m.enc.layers = size_value("enc.layers");
        m.enc.heads = size_value("enc.heads");
        m.enc.ffn_dim = size_value("enc.ffn_dim");
        m.enc.max_len = size_value("enc.max_len");
        c.validate();
        if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0 && c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0))
            throw UsageError("beta1 and beta2 must lie in [0, 1)");
        if (m.embedding_dim == 0 || m.gcn.d_gcn == 0 || m.gcn.rounds == 0)
            throw UsageError("embedding_dim, gcn.dim and gcn.rounds must be positive");
        return c;
    }

private:
    static std::string_view trim(std::string_view s) {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
        return s;
    }

    std::map<std::string, std::string> values_;
};

} // namespace defx::config
