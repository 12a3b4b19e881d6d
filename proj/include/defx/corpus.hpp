#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "defx/error.hpp"

namespace defx::corpus {

/// One labeled sentence.
struct SentenceRecord {
    std::string id;
    std::string raw_text;
    std::string text;
    std::optional<std::string> subject;
    int label = 0;
};

struct LoadStats {
    std::size_t lines = 0;
    std::size_t rejected_empty = 0;
};

/// Removes a leading line number (`12 .`, ` 3706 . `, `7. `). Repeats until
/// the text no longer starts with one, so the result is a fixed point.
inline std::string strip_line_number(std::string_view text) {
    static const std::regex pattern(R"(^[ \t]*[0-9]+[ \t]*\.?[ \t]+)");
    std::string out(text);
    std::smatch m;
    while (std::regex_search(out, m, pattern, std::regex_constants::match_continuous))
        out.erase(0, static_cast<std::size_t>(m.length(0)));
    return out;
}

/// `<subject> <text>`.
inline std::string prepend_subject(std::string_view text, std::string_view subject) {
    if (subject.empty()) throw DataError("prepend_subject: empty subject");
    std::string out;
    out.reserve(subject.size() + 1 + text.size());
    out.append(subject).append(" ").append(text);
    return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool is_blank(std::string_view s) { return trim(s).empty(); }

inline std::string chomp(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

inline std::optional<int> parse_label(std::string_view field) {
    field = trim(field);
    if (field == "0") return 0;
    if (field == "1") return 1;
    return std::nullopt;
}

} // namespace detail

/// Reads `sentence<TAB>label` lines. Ids are `<filename>#<line-number>`
/// (1-based). Blank lines are skipped; records whose text is empty after
/// line-number stripping are dropped and counted in `stats`.
inline std::vector<SentenceRecord> load_dataset(const std::filesystem::path& path, LoadStats* stats = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path.string());
    const std::string filename = path.filename().string();
    std::vector<SentenceRecord> records;
    LoadStats local;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::chomp(std::move(line));
        if (detail::is_blank(line)) continue;
        ++local.lines;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos)
            throw DataError(path.string() + ": missing tab separator at line " + std::to_string(line_no));
        const auto label = detail::parse_label(std::string_view(line).substr(tab + 1));
        if (!label) throw DataError(path.string() + ": invalid label at line " + std::to_string(line_no));
        SentenceRecord r;
        r.id = filename + "#" + std::to_string(line_no);
        r.raw_text = line.substr(0, tab);
        r.text = strip_line_number(r.raw_text);
        r.label = *label;
        if (detail::is_blank(r.text)) {
            ++local.rejected_empty;
            continue;
        }
        records.push_back(std::move(r));
    }
    if (stats) *stats = local;
    return records;
}

/// Like load_dataset but the label column is optional (for unlabeled test
/// input); unlabeled lines get label -1.
inline std::vector<SentenceRecord> load_sentences(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input " + path.string());
    const std::string filename = path.filename().string();
    std::vector<SentenceRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::chomp(std::move(line));
        if (detail::is_blank(line)) continue;
        SentenceRecord r;
        r.id = filename + "#" + std::to_string(line_no);
        r.label = -1;
        const auto tab = line.rfind('\t');
        std::optional<int> label;
        if (tab != std::string::npos) label = detail::parse_label(std::string_view(line).substr(tab + 1));
        if (label) {
            r.raw_text = line.substr(0, tab);
            r.label = *label;
        } else {
            r.raw_text = line;
        }
        r.text = strip_line_number(r.raw_text);
        if (detail::is_blank(r.text))
            throw DataError(path.string() + ": empty sentence at line " + std::to_string(line_no));
        records.push_back(std::move(r));
    }
    return records;
}

enum class TextField { raw, processed };

/// Writes `sentence<TAB>label` lines.
inline void write_dataset(const std::vector<SentenceRecord>& records, const std::filesystem::path& path,
                          TextField field = TextField::processed) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records)
        out << (field == TextField::raw ? r.raw_text : r.text) << '\t' << r.label << '\n';
}

/// Sidecar `filename<TAB>subject` mapping.
inline std::map<std::string, std::string> load_subjects(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open subject sidecar " + path.string());
    std::map<std::string, std::string> subjects;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::chomp(std::move(line));
        if (detail::is_blank(line)) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path.string() + ": missing tab separator at line " + std::to_string(line_no));
        std::string subject(detail::trim(std::string_view(line).substr(tab + 1)));
        if (subject.empty()) throw DataError(path.string() + ": empty subject at line " + std::to_string(line_no));
        subjects[std::string(detail::trim(std::string_view(line).substr(0, tab)))] = std::move(subject);
    }
    return subjects;
}

/// Sets `subject` on every record and prepends it to `text`.
inline void apply_subject(std::vector<SentenceRecord>& records, const std::string& subject) {
    for (auto& r : records) {
        r.text = prepend_subject(r.text, subject);
        r.subject = subject;
    }
}

struct Fold {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

/// Stratified k-fold split. Each label's indices are shuffled with `seed`,
/// then positives followed by negatives are dealt round-robin over the folds
/// with one running counter, so fold sizes and per-fold label counts each
/// differ by at most one. Index lists are in dataset order.
inline std::vector<Fold> make_folds(const std::vector<SentenceRecord>& records, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw UsageError("make_folds: k must be at least 2");
    if (k > records.size())
        throw UsageError("make_folds: k=" + std::to_string(k) + " exceeds dataset size " +
                         std::to_string(records.size()));
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < records.size(); ++i) (records[i].label == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw DataError("make_folds: both labels must be present");

    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    std::vector<std::size_t> fold_of(records.size());
    std::size_t counter = 0;
    for (const auto* group : {&pos, &neg})
        for (std::size_t idx : *group) fold_of[idx] = counter++ % k;

    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t f = 0; f < k; ++f) {
            const bool val = fold_of[i] == f;
            (val ? folds[f].val_indices : folds[f].train_indices).push_back(i);
            (val ? folds[f].val_ids : folds[f].train_ids).push_back(records[i].id);
        }
    return folds;
}

/// Audit dump: `fold_index<TAB>val_id,val_id,...`.
inline void write_folds(const std::vector<Fold>& folds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (std::size_t f = 0; f < folds.size(); ++f) {
        out << f << '\t';
        for (std::size_t i = 0; i < folds[f].val_ids.size(); ++i) out << (i ? "," : "") << folds[f].val_ids[i];
        out << '\n';
    }
}

inline double positive_rate(const std::vector<SentenceRecord>& records, std::span<const std::size_t> indices) {
    if (indices.empty()) return 0.0;
    std::size_t pos = 0;
    for (std::size_t i : indices) pos += records[i].label == 1 ? 1 : 0;
    return static_cast<double>(pos) / static_cast<double>(indices.size());
}

} // namespace defx::corpus
