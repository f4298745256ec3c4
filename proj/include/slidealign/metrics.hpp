#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "slidealign/mat.hpp"

namespace slidealign {

enum class RetrievalDirection { ImageToText, TextToImage };

/// Fraction of queries whose true match (the diagonal) ranks in the top k.
/// Ties break toward the lower index: candidate j beats the true match i when
/// s > s_true, or s == s_true and j < i.
inline double recall_at_k(const MatD& similarity, int k, RetrievalDirection direction) {
    const int b = similarity.rows;
    if (similarity.cols != b) throw std::invalid_argument("recall_at_k: matrix must be square");
    if (b < 1) throw std::invalid_argument("recall_at_k: empty matrix");
    if (k < 1 || k > b)
        throw std::invalid_argument("recall_at_k: k = " + std::to_string(k) +
                                    " out of range [1, " + std::to_string(b) + "]");
    int hits = 0;
    for (int i = 0; i < b; ++i) {
        const double truth = similarity(i, i);
        int beaten_by = 0;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            const double s = direction == RetrievalDirection::ImageToText ? similarity(i, j)
                                                                          : similarity(j, i);
            if (s > truth || (s == truth && j < i)) ++beaten_by;
        }
        if (beaten_by + 1 <= k) ++hits;
    }
    return static_cast<double>(hits) / b;
}

/// Cosine score of every slide embedding against every class prompt
/// embedding. Rows: slides, columns: classes.
inline MatD zero_shot_scores(const MatD& slide_embeds, const MatD& prompt_embeds) {
    if (prompt_embeds.rows < 1) throw std::invalid_argument("zero_shot_scores: no class prompts");
    if (slide_embeds.cols != prompt_embeds.cols)
        throw std::invalid_argument("zero_shot_scores: embedding dim mismatch");
    auto norm = [](const MatD& m, int row, const char* what) {
        double s = 0;
        for (int j = 0; j < m.cols; ++j) s += m(row, j) * m(row, j);
        if (!(s > 0))
            throw std::invalid_argument(std::string("zero_shot_scores: zero-norm ") + what +
                                        " at index " + std::to_string(row));
        return std::sqrt(s);
    };
    MatD scores(slide_embeds.rows, prompt_embeds.rows);
    for (int i = 0; i < slide_embeds.rows; ++i) {
        const double ni = norm(slide_embeds, i, "slide embedding");
        for (int c = 0; c < prompt_embeds.rows; ++c) {
            const double nc = norm(prompt_embeds, c, "prompt embedding");
            double dot = 0;
            for (int j = 0; j < slide_embeds.cols; ++j)
                dot += slide_embeds(i, j) * prompt_embeds(c, j);
            scores(i, c) = dot / (ni * nc);
        }
    }
    return scores;
}

/// Argmax class per slide; ties break to the lowest class index.
inline std::vector<int> zero_shot_predict(const MatD& scores) {
    std::vector<int> pred(static_cast<std::size_t>(scores.rows));
    for (int i = 0; i < scores.rows; ++i) {
        int best = 0;
        for (int c = 1; c < scores.cols; ++c)
            if (scores(i, c) > scores(i, best)) best = c;
        pred[static_cast<std::size_t>(i)] = best;
    }
    return pred;
}

/// Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie), computed by the
/// rank-sum route. 2U is integer-exact, so the result matches pairwise
/// counting bit for bit.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("auc: scores/labels length mismatch");
    long long n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y == 1)
            ++n_pos;
        else if (y == 0)
            ++n_neg;
        else
            throw std::invalid_argument("auc: labels must be 0 or 1");
    }
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc: both classes must be present");

    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)]; });

    long long rank2_pos_sum = 0;  // sum over positives of 2 * (average 1-based rank)
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() &&
               scores[static_cast<std::size_t>(order[j])] == scores[static_cast<std::size_t>(order[i])])
            ++j;
        const long long rank2 = static_cast<long long>(i + 1) + static_cast<long long>(j);  // 2*avg
        for (std::size_t t = i; t < j; ++t)
            if (labels[static_cast<std::size_t>(order[t])] == 1) rank2_pos_sum += rank2;
        i = j;
    }
    const long long two_u = rank2_pos_sum - n_pos * (n_pos + 1);
    return static_cast<double>(two_u) / static_cast<double>(2 * n_pos * n_neg);
}

namespace detail {

inline std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens,
                                                         int n) {
    std::unordered_map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key;
        for (int k = 0; k < n; ++k) {
            if (k) key += '\x1f';
            key += tokens[i + static_cast<std::size_t>(k)];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace detail

/// Single-reference BLEU-n: clipped modified n-gram precision, geometric mean
/// over orders 1..n, brevity penalty exp(1 - ref/cand) when the candidate is
/// shorter. Empty candidate (or any zero precision) scores 0.
inline double bleu_n(const std::vector<std::string>& candidate,
                     const std::vector<std::string>& reference, int n) {
    if (n < 1) throw std::invalid_argument("bleu_n: n must be >= 1");
    if (candidate.empty()) return 0.0;
    double log_sum = 0.0;
    for (int order = 1; order <= n; ++order) {
        const auto cand_counts = detail::ngram_counts(candidate, order);
        const auto ref_counts = detail::ngram_counts(reference, order);
        long long total = 0, matched = 0;
        for (const auto& [gram, count] : cand_counts) {
            total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(count, it->second);
        }
        if (total == 0 || matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    const double cand_len = static_cast<double>(candidate.size());
    const double ref_len = static_cast<double>(reference.size());
    const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    return bp * std::exp(log_sum / n);
}

inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

/// ROUGE-L F-measure (beta = 1): P = LCS/|cand|, R = LCS/|ref|, F = 2PR/(P+R);
/// 0 when the LCS is empty. Empty reference is an error.
inline double rouge_l(const std::vector<std::string>& candidate,
                      const std::vector<std::string>& reference) {
    if (reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
    if (candidate.empty()) return 0.0;
    const int lcs = lcs_length(candidate, reference);
    if (lcs == 0) return 0.0;
    const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

}  // namespace slidealign
