#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "defx/corpus.hpp"
#include "defx/error.hpp"
#include "defx/nn/matrix.hpp"

namespace defx::text {

using WordId = std::size_t;

/// Lowercases ASCII letters and splits on whitespace runs. Bytes outside
/// ASCII pass through unchanged.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc)) {
            if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(uc < 128 ? static_cast<char>(std::tolower(uc)) : ch);
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

class Vocab {
public:
    static constexpr std::string_view unk_token = "<unk>";

    Vocab() { finalize(); }

    /// Known tokens in id order; the unknown entry is appended after them.
    explicit Vocab(const std::vector<std::string>& tokens) {
        for (const auto& t : tokens)
            if (t != unk_token && !token_to_id_.contains(t)) {
                token_to_id_.emplace(t, id_to_token_.size());
                id_to_token_.push_back(t);
            }
        finalize();
    }

    /// Every distinct token of the records' processed text, in first-seen order.
    static Vocab from_records(const std::vector<corpus::SentenceRecord>& records) {
        std::vector<std::string> tokens;
        std::set<std::string> seen;
        for (const auto& r : records)
            for (auto& t : tokenize(r.text))
                if (seen.insert(t).second) tokens.push_back(std::move(t));
        return Vocab(tokens);
    }

    std::size_t size() const noexcept { return id_to_token_.size(); }
    WordId unk_id() const noexcept { return unk_id_; }
    bool contains(std::string_view token) const { return token_to_id_.contains(std::string(token)); }
    const std::string& token(WordId id) const { return id_to_token_.at(id); }
    const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

    WordId id(std::string_view token) const {
        auto it = token_to_id_.find(std::string(token));
        return it == token_to_id_.end() ? unk_id_ : it->second;
    }

private:
    void finalize() {
        unk_id_ = id_to_token_.size();
        id_to_token_.emplace_back(unk_token);
        token_to_id_.emplace(std::string(unk_token), unk_id_);
    }

    std::unordered_map<std::string, WordId> token_to_id_;
    std::vector<std::string> id_to_token_;
    WordId unk_id_ = 0;
};

inline std::vector<WordId> ids_of(const std::vector<std::string>& tokens, const Vocab& vocab) {
    std::vector<WordId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id(t));
    return ids;
}

/// Per-word vectors, one row per vocab id.
struct EmbeddingTable {
    std::size_t dim = 0;
    nn::Param vectors;

    bool trainable() const noexcept { return vectors.trainable; }
    void set_trainable(bool t) { vectors.trainable = t; }
};

inline constexpr const char* embedding_param_name = "gcn.embedding";

/// U(-scale, scale) vectors for every vocab entry.
inline EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, nn::Rng& rng, double scale = 0.1) {
    EmbeddingTable table;
    table.dim = dim;
    table.vectors = nn::Param(embedding_param_name, nn::Matrix(vocab.size(), dim));
    nn::uniform_fill(table.vectors.value, rng, scale);
    return table;
}

struct LoadedEmbeddings {
    Vocab vocab;
    EmbeddingTable table;
};

/// Reads the word-vector text format (`token v1 ... vd` per line). A leading
/// word2vec-style `count dim` header line is accepted. When `keep` is
/// non-null only those tokens are retained. The unknown-word row is the mean
/// of the retained vectors, or the file's own `<unk>` vector if present.
inline LoadedEmbeddings load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                                        const std::set<std::string>* keep = nullptr) {
    if (expected_dim == 0) throw UsageError("load_embeddings: dimension must be positive");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embeddings " + path.string());

    std::vector<std::string> tokens;
    std::set<std::string> seen;
    std::vector<double> values;
    std::vector<double> unk_row;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (!rest.empty()) {
            const auto start = rest.find_first_not_of(" \t");
            if (start == std::string_view::npos) break;
            rest.remove_prefix(start);
            const auto end = rest.find_first_of(" \t");
            fields.push_back(rest.substr(0, end));
            rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
        }
        if (fields.empty()) continue;
        if (line_no == 1 && fields.size() == 2 && fields[1] == std::to_string(expected_dim) &&
            std::all_of(fields[0].begin(), fields[0].end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
            continue;
        if (fields.size() != expected_dim + 1)
            throw DataError(path.string() + ": expected " + std::to_string(expected_dim) + " values at line " +
                            std::to_string(line_no) + ", found " + std::to_string(fields.size() - 1));
        std::vector<double> row(expected_dim);
        for (std::size_t i = 0; i < expected_dim; ++i) {
            const auto f = fields[i + 1];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), row[i]);
            if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(row[i]))
                throw DataError(path.string() + ": unparsable value '" + std::string(f) + "' at line " +
                                std::to_string(line_no));
        }
        std::string token(fields[0]);
        if (token == Vocab::unk_token) {
            unk_row = std::move(row);
            continue;
        }
        if (keep && !keep->contains(token)) continue;
        if (!seen.insert(token).second) continue;
        tokens.push_back(std::move(token));
        values.insert(values.end(), row.begin(), row.end());
    }

    LoadedEmbeddings out{Vocab(tokens), {}};
    if (unk_row.empty()) {
        unk_row.assign(expected_dim, 0.0);
        if (!tokens.empty()) {
            for (std::size_t r = 0; r < tokens.size(); ++r)
                for (std::size_t c = 0; c < expected_dim; ++c) unk_row[c] += values[r * expected_dim + c];
            for (double& v : unk_row) v /= static_cast<double>(tokens.size());
        }
    }
    values.insert(values.end(), unk_row.begin(), unk_row.end());
    out.table.dim = expected_dim;
    out.table.vectors = nn::Param(embedding_param_name, nn::Matrix(out.vocab.size(), expected_dim, std::move(values)));
    return out;
}

/// One token per line, id order, unknown entry last.
inline void write_vocab(const Vocab& vocab, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (WordId i = 0; i < vocab.unk_id(); ++i) out << vocab.token(i) << '\n';
}

inline Vocab read_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    Vocab v(tokens);
    if (v.size() != tokens.size() + 1) throw DataError(path.string() + ": duplicate vocab entries");
    return v;
}

} // namespace defx::text
