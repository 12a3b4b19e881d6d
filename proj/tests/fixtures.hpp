#pragma once

// Synthetic corpora shared by the harness, CLI and acceptance tests.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "defx/corpus.hpp"
#include "defx/encoder.hpp"
#include "defx/nn/matrix.hpp"

namespace defx::fixtures {

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words{
        "the",    "a",      "cell",   "water",  "energy", "process", "of",      "in",     "and",    "with",
        "plant",  "light",  "animal", "market", "price",  "goods",   "people",  "many",   "small",  "large",
        "during", "after",  "before", "which",  "this",   "that",    "several", "most",   "other",  "new",
        "system", "theory", "law",    "court",  "state",  "river",   "growth",  "number", "result", "form",
        "as",     "is",     "can",    "be",     "used",   "found",   "often",   "some",   "its",    "their"};
    return words;
}

inline std::string random_phrase(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    const auto& w = filler_words();
    std::string out;
    const std::size_t n = lo + rng() % (hi - lo + 1);
    for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + w[rng() % w.size()];
    return out;
}

/// Positives contain a definitor phrase that never occurs in negatives.
inline std::vector<corpus::SentenceRecord> separable_corpus(std::size_t n, std::uint64_t seed,
                                                            const std::string& id_prefix = "gen") {
    std::mt19937_64 rng(seed);
    const std::vector<std::string> definitors{"is defined as", "refers to", "is called", "means"};
    std::vector<corpus::SentenceRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        corpus::SentenceRecord r;
        r.label = (rng() % 2 == 0) ? 1 : 0;
        if (r.label == 1)
            r.text = random_phrase(rng, 1, 3) + " " + definitors[rng() % definitors.size()] + " " + random_phrase(rng, 2, 6) + " .";
        else
            r.text = random_phrase(rng, 3, 10) + " .";
        r.raw_text = r.text;
        r.id = id_prefix + "#" + std::to_string(i + 1);
        out.push_back(std::move(r));
    }
    if (out.size() >= 2) {
        out[0].label = 1;
        out[0].text = out[0].raw_text = "osmosis is defined as diffusion of water .";
        out[1].label = 0;
        out[1].text = out[1].raw_text = "the plant grows in light .";
    }
    return out;
}

inline void write_embeddings(const std::filesystem::path& path, const std::vector<std::string>& tokens, std::size_t dim,
                             std::uint64_t seed) {
    std::ofstream out(path);
    nn::Rng rng(seed);
    char buf[32];
    for (const auto& t : tokens) {
        out << t;
        for (std::size_t c = 0; c < dim; ++c) {
            std::snprintf(buf, sizeof buf, " %.6f", nn::uniform(rng, -0.5, 0.5));
            out << buf;
        }
        out << '\n';
    }
}

inline std::vector<std::string> all_tokens() {
    std::vector<std::string> t = filler_words();
    for (const char* extra : {"defined", "refers", "to", "called", "means", "osmosis", "diffusion", "grows", "."})
        t.emplace_back(extra);
    return t;
}

inline void write_tsv(const std::filesystem::path& path, const std::vector<corpus::SentenceRecord>& records) {
    std::ofstream out(path);
    for (const auto& r : records) out << r.raw_text << '\t' << r.label << '\n';
}

struct ScopedDir {
    std::filesystem::path path;
    explicit ScopedDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("defx_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~ScopedDir() { std::filesystem::remove_all(path); }
    ScopedDir(const ScopedDir&) = delete;
    ScopedDir& operator=(const ScopedDir&) = delete;
};

} // namespace defx::fixtures
