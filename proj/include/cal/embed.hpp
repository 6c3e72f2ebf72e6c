#pragma once

#include "error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cal {

struct SparseVector {
    /// (index, weight) with strictly increasing indices
    std::vector<std::pair<std::uint32_t, double>> entries;
    std::size_t dim = 0;

    double squared_norm() const {
        double s = 0.0;
        for (const auto& [_, w] : entries) {
            s += w * w;
        }
        return s;
    }

    double norm() const { return std::sqrt(squared_norm()); }

    double dot(std::span<const double> dense) const {
        double s = 0.0;
        for (const auto& [i, w] : entries) {
            s += w * dense[i];
        }
        return s;
    }

    bool operator==(const SparseVector&) const = default;
};

struct VocabParams {
    std::size_t min_df = 2;
    std::size_t max_features = 50000;
    bool lowercase = true;
};

namespace detail {

/// Decodes one UTF-8 code point at `pos`, advancing it. Malformed bytes decode
/// as U+FFFD and consume a single byte.
inline char32_t next_code_point(std::string_view s, std::size_t& pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    auto cont = [&](std::size_t k) -> int {
        if (pos + k >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[pos + k]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) {
        ++pos;
        return b0;
    }
    int len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++pos;
        return 0xFFFD;
    }
    for (int k = 1; k < len; ++k) {
        const int c = cont(static_cast<std::size_t>(k));
        if (c < 0) {
            ++pos;
            return 0xFFFD;
        }
        cp = (cp << 6) | static_cast<char32_t>(c);
    }
    pos += static_cast<std::size_t>(len);
    return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Approximation of the Unicode letter/digit classes without ICU: ASCII
// alphanumerics plus every non-ASCII code point outside the common
// punctuation, symbol, space and control blocks.
inline bool is_word_char(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    }
    if (cp < 0xC0) return cp == 0xAA || cp == 0xB5 || cp == 0xBA; // Latin-1 punctuation/symbols
    if (cp == 0xD7 || cp == 0xF7) return false;                     // multiplication / division
    if (cp >= 0x2000 && cp <= 0x2BFF) return false;                 // general punctuation .. misc symbols
    if (cp >= 0x3000 && cp <= 0x303F) return false;                 // CJK punctuation
    if (cp >= 0xFE30 && cp <= 0xFE4F) return false;                 // CJK compatibility forms
    if (cp >= 0xFF00 && cp <= 0xFF0F) return false;                 // fullwidth punctuation
    if (cp == 0xFEFF || cp == 0xFFFD) return false;
    if (cp >= 0x1F000 && cp <= 0x1FAFF) return false;               // emoji and pictographs
    return true;
}

inline char32_t fold_case(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;        // Latin-1
    if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;     // Greek
    if (cp >= 0x410 && cp <= 0x42F) return cp + 32;                    // Cyrillic
    if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
    return cp;
}

} // namespace detail

/// Maximal runs of letters/digits, at least two code points long.
inline std::vector<std::string> tokenize(std::string_view text, bool lowercase = true) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t run = 0;
    auto flush = [&] {
        if (run >= 2) {
            tokens.push_back(std::move(current));
        }
        current.clear();
        run = 0;
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        char32_t cp = detail::next_code_point(text, pos);
        if (detail::is_word_char(cp)) {
            detail::append_utf8(current, lowercase ? detail::fold_case(cp) : cp);
            ++run;
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

class Vocabulary {
public:
    Vocabulary() = default;

    Vocabulary(std::vector<std::string> terms, std::vector<double> idf, VocabParams params)
        : terms_(std::move(terms)), idf_(std::move(idf)), params_(params) {
        if (terms_.size() != idf_.size()) {
            throw Error(ErrorCode::parse, "vocabulary terms and idf differ in length");
        }
        index_.reserve(terms_.size());
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            if (!index_.emplace(terms_[i], static_cast<std::uint32_t>(i)).second) {
                throw Error(ErrorCode::parse, "duplicate vocabulary term '" + terms_[i] + "'");
            }
        }
    }

    std::size_t size() const { return terms_.size(); }
    const VocabParams& params() const { return params_; }
    const std::string& term(std::size_t i) const { return terms_[i]; }
    double idf(std::size_t i) const { return idf_[i]; }

    std::optional<std::uint32_t> lookup(std::string_view term) const {
        auto it = index_.find(std::string(term));
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::optional<double> idf(std::string_view term) const {
        auto i = lookup(term);
        if (!i) {
            return std::nullopt;
        }
        return idf_[*i];
    }

    nlohmann::json to_json() const {
        return {{"terms", terms_},
                {"idf", idf_},
                {"min_df", params_.min_df},
                {"max_features", params_.max_features},
                {"lowercase", params_.lowercase}};
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        VocabParams p;
        p.min_df = j.at("min_df").get<std::size_t>();
        p.max_features = j.at("max_features").get<std::size_t>();
        p.lowercase = j.at("lowercase").get<bool>();
        return Vocabulary(j.at("terms").get<std::vector<std::string>>(), j.at("idf").get<std::vector<double>>(), p);
    }

private:
    std::vector<std::string> terms_;
    std::vector<double> idf_;
    std::unordered_map<std::string, std::uint32_t> index_;
    VocabParams params_;
};

/// Smoothed idf ln((1+N)/(1+df)) + 1. Terms rarer than min_df are dropped; the
/// max_features most frequent (by df, ties lexicographic) are kept, indexed in
/// that order.
inline Vocabulary fit_vocab(std::span<const std::string> texts, const VocabParams& params = {}) {
    if (texts.empty()) {
        throw Error(ErrorCode::bad_request, "cannot fit a vocabulary on an empty corpus");
    }
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& text : texts) {
        auto tokens = tokenize(text, params.lowercase);
        std::sort(tokens.begin(), tokens.end());
        tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
        for (auto& t : tokens) {
            ++df[std::move(t)];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [term, count] : df) {
        if (count >= params.min_df) {
            kept.emplace_back(term, count);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (kept.size() > params.max_features) {
        kept.resize(params.max_features);
    }
    const double n = static_cast<double>(texts.size());
    std::vector<std::string> terms;
    std::vector<double> idf;
    terms.reserve(kept.size());
    idf.reserve(kept.size());
    for (auto& [term, count] : kept) {
        terms.push_back(std::move(term));
        idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
    }
    return Vocabulary(std::move(terms), std::move(idf), params);
}

/// term count x idf, L2-normalized. Out-of-vocabulary tokens are ignored; a
/// document without in-vocabulary tokens maps to the zero vector.
inline SparseVector transform(std::string_view text, const Vocabulary& vocab) {
    std::unordered_map<std::uint32_t, double> counts;
    for (const auto& tok : tokenize(text, vocab.params().lowercase)) {
        if (auto i = vocab.lookup(tok)) {
            counts[*i] += 1.0;
        }
    }
    SparseVector v;
    v.dim = vocab.size();
    v.entries.reserve(counts.size());
    for (const auto& [i, c] : counts) {
        v.entries.emplace_back(i, c * vocab.idf(i));
    }
    std::sort(v.entries.begin(), v.entries.end());
    const double norm = v.norm();
    if (norm > 0.0) {
        for (auto& [_, w] : v.entries) {
            w /= norm;
        }
    }
    return v;
}

inline nlohmann::json to_json(const SparseVector& v) {
    nlohmann::json idx = nlohmann::json::array();
    nlohmann::json val = nlohmann::json::array();
    for (const auto& [i, w] : v.entries) {
        idx.push_back(i);
        val.push_back(w);
    }
    return {{"dim", v.dim}, {"indices", idx}, {"values", val}};
}

} // namespace cal
