#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "slidealign/alignment.hpp"
#include "slidealign/grounding.hpp"
#include "slidealign/metrics.hpp"
#include "slidealign/model.hpp"
#include "slidealign/trainer.hpp"

namespace slidealign {

/// Forward-only embeddings for one prepared pair under current weights.
template <typename Real>
struct PairEmbeddings {
    Mat<Real> v_reg;    // (N*N_q) x d, empty when the region path is off
    Mat<Real> v_bar;    // 1 x d pooled image embedding
    Mat<Real> t_full;   // 1 x d full-caption embedding
};

template <typename Real>
inline Mat<Real> embed_text(Model<Real>& model, const std::vector<int>& token_ids) {
    Graph<Real> g;
    auto text = bind(g, model.text, "text");
    return g.val(encode_text(g, text, token_ids));
}

template <typename Real>
inline PairEmbeddings<Real> embed_pair(Model<Real>& model, const PreparedPair<Real>& pair) {
    Graph<Real> g;
    auto text = bind(g, model.text, "text");
    auto qf = bind(g, model.qformer, "qformer");
    PairEmbeddings<Real> out;

    typename Graph<Real>::Var v_reg;
    if (model.use_region_qformer) {
        std::vector<typename Graph<Real>::Var> blocks;
        for (const auto& block : pair.features.region_blocks) blocks.push_back(g.constant(block));
        v_reg = region_qformer(g, qf, blocks);
        out.v_reg = g.val(v_reg);
    }
    if (model.use_slide_qformer) {
        auto v_slide = slide_qformer(g, qf, g.constant(pair.features.all_patches));
        out.v_bar = g.val(pool_queries(g, v_slide));
    } else {
        out.v_bar = g.val(g.mean_rows(v_reg));
    }
    out.t_full = g.val(encode_text(g, text, pair.full_caption_ids));
    return out;
}

template <typename Real>
inline std::vector<PairEmbeddings<Real>> embed_corpus(Model<Real>& model,
                                                      const PreparedCorpus<Real>& corpus) {
    std::vector<PairEmbeddings<Real>> out;
    out.reserve(corpus.pairs.size());
    for (const auto& pair : corpus.pairs) out.push_back(embed_pair(model, pair));
    return out;
}

/// Cosine similarity between pooled image embeddings (rows) and full-caption
/// embeddings (columns) over one evaluation batch.
template <typename Real>
inline MatD similarity_matrix(const std::vector<PairEmbeddings<Real>>& embeds, int begin,
                              int count) {
    MatD vbar(count, embeds.front().v_bar.cols);
    MatD text(count, embeds.front().t_full.cols);
    for (int i = 0; i < count; ++i) {
        const auto& e = embeds[static_cast<std::size_t>(begin + i)];
        for (int j = 0; j < vbar.cols; ++j) {
            vbar(i, j) = static_cast<double>(e.v_bar(0, j));
            text(i, j) = static_cast<double>(e.t_full(0, j));
        }
    }
    return zero_shot_scores(vbar, text);
}

struct RetrievalReport {
    // metric name ("itr_r@1", "tir_r@5", ...) -> mean over evaluation batches
    std::map<std::string, double> values;
    int batch_size = 0;
    int num_batches = 0;
};

/// Retrieval protocol: the split is scored in consecutive batches of
/// `batch_size` (64 in the experimental setup); Recall@K is averaged over
/// batches. A trailing partial batch is dropped.
template <typename Real>
inline RetrievalReport eval_retrieval(const std::vector<PairEmbeddings<Real>>& embeds,
                                      int batch_size = 64,
                                      const std::vector<int>& ks = {1, 5, 10}) {
    RetrievalReport report;
    report.batch_size = std::min<int>(batch_size, static_cast<int>(embeds.size()));
    if (report.batch_size < 1) throw std::invalid_argument("eval_retrieval: empty split");
    report.num_batches = static_cast<int>(embeds.size()) / report.batch_size;
    if (report.num_batches < 1) throw std::invalid_argument("eval_retrieval: split too small");
    for (int k : ks) {
        if (k > report.batch_size) continue;
        double itr = 0, tir = 0;
        for (int b = 0; b < report.num_batches; ++b) {
            const MatD sim = similarity_matrix(embeds, b * report.batch_size, report.batch_size);
            itr += recall_at_k(sim, k, RetrievalDirection::ImageToText);
            tir += recall_at_k(sim, k, RetrievalDirection::TextToImage);
        }
        report.values["itr_r@" + std::to_string(k)] = itr / report.num_batches;
        report.values["tir_r@" + std::to_string(k)] = tir / report.num_batches;
    }
    return report;
}

struct ZeroShotReport {
    std::map<std::string, double> per_concept_auc;  // concepts with both classes present
    double mean_auc = 0;
};

/// Prompt-based concept presence: score(slide, concept) = cosine(v-bar,
/// prompt embedding), AUC against the planted ground truth per concept.
template <typename Real>
inline ZeroShotReport eval_zero_shot(Model<Real>& model, const PreparedCorpus<Real>& corpus,
                                     const std::vector<PairEmbeddings<Real>>& embeds,
                                     const std::vector<Concept>& concepts) {
    ZeroShotReport report;
    const int n = static_cast<int>(corpus.pairs.size());
    MatD slide_embeds(n, embeds.front().v_bar.cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < slide_embeds.cols; ++j)
            slide_embeds(i, j) = static_cast<double>(embeds[static_cast<std::size_t>(i)].v_bar(0, j));

    double sum = 0;
    int counted = 0;
    for (const auto& cpt : concepts) {
        const std::string prompt = "the slide shows " + cpt.name + " .";
        const Mat<Real> pe = embed_text(model, tokenize_with_cls(prompt, corpus.vocab));
        MatD prompt_embed(1, pe.cols);
        for (int j = 0; j < pe.cols; ++j) prompt_embed(0, j) = static_cast<double>(pe(0, j));
        const MatD scores = zero_shot_scores(slide_embeds, prompt_embed);

        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        int positives = 0;
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = scores(i, 0);
            const auto& cids = corpus.pairs[static_cast<std::size_t>(i)].planted_concepts;
            const bool present = std::find(cids.begin(), cids.end(), cpt.id) != cids.end();
            labels[static_cast<std::size_t>(i)] = present ? 1 : 0;
            positives += present;
        }
        if (positives == 0 || positives == n) continue;  // AUC undefined
        const double value = auc(s, labels);
        report.per_concept_auc[cpt.name] = value;
        sum += value;
        ++counted;
    }
    report.mean_auc = counted ? sum / counted : 0.0;
    return report;
}

/// Grounding accuracy over all (slide, planted-concept sentence) pairs at the
/// given margin. Without the region pathway or the text-region attention
/// layer there is no localization signal: uniform maps, accuracy 0.
template <typename Real>
inline double eval_grounding_accuracy(Model<Real>& model, const PreparedCorpus<Real>& corpus,
                                      const std::vector<PairEmbeddings<Real>>& embeds,
                                      double margin_factor = 2.0) {
    if (!model.use_region_qformer || !model.align.has_attention) return 0.0;
    int hits = 0, total = 0;
    for (std::size_t p = 0; p < corpus.pairs.size(); ++p) {
        const PreparedPair<Real>& pair = corpus.pairs[p];
        const int n_regions = static_cast<int>(pair.features.region_blocks.size());
        const int n_q = model.qformer.num_queries();
        for (std::size_t k = 0; k < pair.planted_regions.size(); ++k) {
            // Sentence k of the caption belongs to the k-th planted region.
            const Mat<Real> t = embed_text(model, tokenize_with_cls(pair.sentences[k], corpus.vocab));
            RegionScoreMap map = region_attention_scores(t, embeds[p].v_reg, model.align.wq,
                                                         model.align.wk, n_regions, n_q);
            map.slide_id = pair.slide_id;
            map.grid_w = pair.features.grid_w;
            map.grid_h = pair.features.grid_h;
            hits += grounding_hit(map, pair.planted_regions[k], margin_factor) ? 1 : 0;
            ++total;
        }
    }
    return total ? static_cast<double>(hits) / total : 0.0;
}

struct InstructReport {
    double exact_match = 0;        // "what concepts are present ?" records
    double majority_baseline = 0;  // frequency of the most common answer
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, rouge_l = 0;  // captioning records
    int qa_records = 0;
    int caption_records = 0;
};

template <typename Real>
inline InstructReport eval_instruct(Model<Real>& model, const PreparedCorpus<Real>& corpus,
                                    int max_len = 24) {
    InstructReport report;
    std::map<std::string, int> answer_counts;
    int em_hits = 0;
    double b1 = 0, b2 = 0, b3 = 0, rl = 0;

    for (const auto& pair : corpus.pairs) {
        const PrefixSource<Real> src = compute_prefix_source(model, pair);
        for (const auto& rec : pair.instructions) {
            std::vector<int> prompt_ids;
            for (const auto& t : rec.prompt) prompt_ids.push_back(corpus.vocab.id(t));
            const std::vector<int> generated =
                generate(model.decoder, src.v_slide, src.v_regions, prompt_ids, max_len);
            std::vector<std::string> generated_tokens;
            for (int id : generated) {
                if (id == Vocabulary::EOS) break;
                generated_tokens.push_back(corpus.vocab.token(id));
            }
            const bool is_qa = !rec.prompt.empty() && rec.prompt.front() == "what";
            if (is_qa) {
                ++report.qa_records;
                std::string key;
                for (const auto& t : rec.answer) key += t + " ";
                ++answer_counts[key];
                em_hits += (generated_tokens == rec.answer) ? 1 : 0;
            } else {
                ++report.caption_records;
                b1 += bleu_n(generated_tokens, rec.answer, 1);
                b2 += bleu_n(generated_tokens, rec.answer, 2);
                b3 += bleu_n(generated_tokens, rec.answer, 3);
                rl += rouge_l(generated_tokens, rec.answer);
            }
        }
    }
    if (report.qa_records) {
        report.exact_match = static_cast<double>(em_hits) / report.qa_records;
        int majority = 0;
        for (const auto& [key, count] : answer_counts) majority = std::max(majority, count);
        report.majority_baseline = static_cast<double>(majority) / report.qa_records;
    }
    if (report.caption_records) {
        report.bleu1 = b1 / report.caption_records;
        report.bleu2 = b2 / report.caption_records;
        report.bleu3 = b3 / report.caption_records;
        report.rouge_l = rl / report.caption_records;
    }
    return report;
}

}  // namespace slidealign
