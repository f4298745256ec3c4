#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/rng.hpp"
#include "slidealign/vocab.hpp"

namespace slidealign {

/// Splits on '.', '!' or '?' followed by whitespace or end of input. The
/// terminator stays with its sentence; fragments are trimmed and empty ones
/// dropped. A trailing fragment without a terminator is kept as a sentence.
inline std::vector<std::string> segment_sentences(const std::string& caption) {
    if (caption.empty()) throw std::invalid_argument("segment_sentences: empty caption");
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    auto trim = [&](const std::string& s) {
        std::size_t b = 0, e = s.size();
        while (b < e && is_space(s[b])) ++b;
        while (e > b && is_space(s[e - 1])) --e;
        return s.substr(b, e - b);
    };
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < caption.size(); ++i) {
        const char c = caption[i];
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == caption.size() || is_space(caption[i + 1]))) {
            std::string frag = trim(caption.substr(start, i + 1 - start));
            if (!frag.empty()) out.push_back(frag);
            start = i + 1;
        }
    }
    if (start < caption.size()) {
        std::string frag = trim(caption.substr(start));
        if (!frag.empty()) out.push_back(frag);
    }
    if (out.empty()) throw std::invalid_argument("segment_sentences: no sentences after trimming");
    return out;
}

inline std::string join_sentences(const std::vector<std::string>& sentences) {
    std::string s;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i) s += ' ';
        s += sentences[i];
    }
    return s;
}

inline std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> toks;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (!cur.empty()) toks.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) toks.push_back(std::move(cur));
    return toks;
}

/// Tokenizes to ids with UNK fallback and a leading CLS.
inline std::vector<int> tokenize_with_cls(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids{Vocabulary::CLS};
    for (const auto& t : split_whitespace(text)) ids.push_back(vocab.id(t));
    return ids;
}

inline std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& t : split_whitespace(text)) ids.push_back(vocab.id(t));
    return ids;
}

/// A sampled subset of caption sentences, kept in original order.
struct Subcaption {
    std::vector<int> sentence_indices;  // sorted
    std::string text;                   // selected sentences joined by spaces
};

/// Bernoulli(p_keep) per sentence, resampled until non-empty. With one
/// sentence or p_keep == 1 every subcaption equals the full caption.
inline std::vector<Subcaption> sample_subcaptions(const std::vector<std::string>& sentences,
                                                  int k, double p_keep, Rng& rng) {
    if (sentences.empty()) throw std::invalid_argument("sample_subcaptions: no sentences");
    if (k < 1) throw std::invalid_argument("sample_subcaptions: K must be >= 1");
    if (!(p_keep > 0.0) || p_keep > 1.0)
        throw std::invalid_argument("sample_subcaptions: p_keep must be in (0, 1]");
    std::vector<Subcaption> subs;
    subs.reserve(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
        Subcaption sub;
        while (sub.sentence_indices.empty()) {
            for (std::size_t i = 0; i < sentences.size(); ++i)
                if (rng.bernoulli(p_keep)) sub.sentence_indices.push_back(static_cast<int>(i));
        }
        std::vector<std::string> chosen;
        chosen.reserve(sub.sentence_indices.size());
        for (int i : sub.sentence_indices) chosen.push_back(sentences[static_cast<std::size_t>(i)]);
        sub.text = join_sentences(chosen);
        subs.push_back(std::move(sub));
    }
    return subs;
}

}  // namespace slidealign
