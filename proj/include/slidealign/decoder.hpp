#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/graph.hpp"
#include "slidealign/nn.hpp"
#include "slidealign/vocab.hpp"

namespace slidealign {

/// Toy autoregressive decoder with a visual prefix: sigma projects the
/// concatenated slide+region query embeddings into the decoder space, prefix
/// tokens enter as ordinary sequence positions (with their own learned
/// position table), and causal self-attention runs over the whole sequence.
template <typename Real>
struct DecoderParams {
    Mat<Real> sigma_w;     // d_dec x d
    Mat<Real> sigma_b;     // 1 x d_dec
    Mat<Real> tok_emb;     // |V| x d_dec
    Mat<Real> text_pos;    // max_text x d_dec
    Mat<Real> prefix_pos;  // max_prefix x d_dec
    std::vector<EncoderBlockParams<Real>> blocks;
    LayerNormParams<Real> final_ln;
    Mat<Real> out_w;  // |V| x d_dec
    Mat<Real> out_b;  // 1 x |V|

    int dim() const { return tok_emb.cols; }
    int vocab_size() const { return tok_emb.rows; }

    static DecoderParams init(int vocab_size, int dec_dim, int visual_dim, int num_blocks,
                              int max_text, int max_prefix, Rng& rng) {
        DecoderParams p;
        p.sigma_w = Mat<Real>(dec_dim, visual_dim);
        p.sigma_b = Mat<Real>(1, dec_dim);
        init_xavier(p.sigma_w, rng);
        p.tok_emb = Mat<Real>(vocab_size, dec_dim);
        p.text_pos = Mat<Real>(max_text, dec_dim);
        p.prefix_pos = Mat<Real>(max_prefix, dec_dim);
        init_embedding(p.tok_emb, rng);
        init_embedding(p.text_pos, rng);
        init_embedding(p.prefix_pos, rng);
        for (int b = 0; b < num_blocks; ++b)
            p.blocks.push_back(EncoderBlockParams<Real>::init(dec_dim, rng));
        p.final_ln = LayerNormParams<Real>::init(dec_dim);
        p.out_w = Mat<Real>(vocab_size, dec_dim);
        p.out_b = Mat<Real>(1, vocab_size);
        init_xavier(p.out_w, rng);
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".sigma_w", sigma_w, true);
        fn(prefix + ".sigma_b", sigma_b, false);
        fn(prefix + ".tok_emb", tok_emb, false);
        fn(prefix + ".text_pos", text_pos, false);
        fn(prefix + ".prefix_pos", prefix_pos, false);
        for (std::size_t b = 0; b < blocks.size(); ++b)
            blocks[b].visit(prefix + ".block" + std::to_string(b), fn);
        final_ln.visit(prefix + ".final_ln", fn);
        fn(prefix + ".out_w", out_w, true);
        fn(prefix + ".out_b", out_b, false);
    }
};

template <typename Real>
struct DecoderVars {
    typename Graph<Real>::Var sigma_w, sigma_b, tok_emb, text_pos, prefix_pos;
    std::vector<EncoderBlockVars<Real>> blocks;
    LayerNormVars<Real> final_ln;
    typename Graph<Real>::Var out_w, out_b;
};

template <typename Real>
inline DecoderVars<Real> bind(Graph<Real>& g, DecoderParams<Real>& p, const std::string& prefix) {
    DecoderVars<Real> v;
    v.sigma_w = g.param(p.sigma_w, prefix + ".sigma_w");
    v.sigma_b = g.param(p.sigma_b, prefix + ".sigma_b");
    v.tok_emb = g.param(p.tok_emb, prefix + ".tok_emb");
    v.text_pos = g.param(p.text_pos, prefix + ".text_pos");
    v.prefix_pos = g.param(p.prefix_pos, prefix + ".prefix_pos");
    for (std::size_t b = 0; b < p.blocks.size(); ++b)
        v.blocks.push_back(bind(g, p.blocks[b], prefix + ".block" + std::to_string(b)));
    v.final_ln = bind(g, p.final_ln, prefix + ".final_ln");
    v.out_w = g.param(p.out_w, prefix + ".out_w");
    v.out_b = g.param(p.out_b, prefix + ".out_b");
    return v;
}

/// sigma applied rowwise to [v_slide; v_region_1; ...; v_region_N], slide
/// block first, plus the prefix position embeddings. (1+N)*N_q rows.
template <typename Real>
inline typename Graph<Real>::Var build_prefix(Graph<Real>& g, const DecoderVars<Real>& dec,
                                              typename Graph<Real>::Var v_slide,
                                              const std::vector<typename Graph<Real>::Var>& v_regions) {
    if (v_regions.empty())
        throw std::invalid_argument("build_prefix: need at least one region embedding");
    const int d = g.cols(v_slide);
    for (auto r : v_regions)
        if (g.cols(r) != d)
            throw std::invalid_argument("build_prefix: region dim mismatch");
    if (g.cols(dec.sigma_w) != d)
        throw std::invalid_argument("build_prefix: sigma input dim " +
                                    std::to_string(g.cols(dec.sigma_w)) + " != visual dim " +
                                    std::to_string(d));
    std::vector<typename Graph<Real>::Var> parts{v_slide};
    parts.insert(parts.end(), v_regions.begin(), v_regions.end());
    auto visual = g.concat_rows(parts);
    auto projected = g.add_rowvec(g.matmul_nt(visual, dec.sigma_w), dec.sigma_b);
    const int n_prefix = g.rows(projected);
    if (n_prefix > g.rows(dec.prefix_pos))
        throw std::invalid_argument("build_prefix: " + std::to_string(n_prefix) +
                                    " prefix positions exceed table size " +
                                    std::to_string(g.rows(dec.prefix_pos)));
    return g.add(projected, g.gather_rows(dec.prefix_pos, iota_indices(n_prefix)));
}

/// Full-sequence hidden states for [prefix | BOS prompt target[:-1]] under a
/// causal mask (row i attends columns <= i; prefix is visible to all later
/// positions).
template <typename Real>
inline typename Graph<Real>::Var decoder_hidden(Graph<Real>& g, const DecoderVars<Real>& dec,
                                                typename Graph<Real>::Var prefix,
                                                const std::vector<int>& text_ids) {
    const int t_in = static_cast<int>(text_ids.size());
    if (t_in > g.rows(dec.text_pos))
        throw std::invalid_argument("decoder_hidden: text length " + std::to_string(t_in) +
                                    " exceeds max_text " + std::to_string(g.rows(dec.text_pos)));
    auto text = g.add(g.gather_rows(dec.tok_emb, text_ids),
                      g.gather_rows(dec.text_pos, iota_indices(t_in)));
    auto x = g.concat_rows({prefix, text});
    const Mat<Real> mask = causal_mask<Real>(g.rows(x));
    for (const auto& block : dec.blocks) x = encoder_block_forward(g, x, block, &mask);
    return g.layer_norm(x, dec.final_ln.gamma, dec.final_ln.beta);
}

template <typename Real>
struct LmLoss {
    typename Graph<Real>::Var total;         // 1x1, sum over unmasked target positions
    typename Graph<Real>::Var per_position;  // L_t x 1 (masked entries are 0)
};

/// Teacher-forced cross-entropy summed over the L_t target positions; prompt
/// and prefix positions carry no loss, PAD targets are masked out.
template <typename Real>
inline LmLoss<Real> lm_loss(Graph<Real>& g, const DecoderVars<Real>& dec,
                            typename Graph<Real>::Var prefix, const std::vector<int>& prompt_ids,
                            const std::vector<int>& target_ids) {
    if (target_ids.empty()) throw std::invalid_argument("lm_loss: empty target");
    const int n_prefix = g.rows(prefix);
    const int n_prompt = static_cast<int>(prompt_ids.size());
    const int n_target = static_cast<int>(target_ids.size());

    std::vector<int> text_ids;
    text_ids.push_back(Vocabulary::BOS);
    text_ids.insert(text_ids.end(), prompt_ids.begin(), prompt_ids.end());
    text_ids.insert(text_ids.end(), target_ids.begin(), target_ids.end() - 1);

    auto hidden = decoder_hidden(g, dec, prefix, text_ids);
    // Row (n_prefix + n_prompt + j) holds the state after target[j-1] (after
    // the last prompt token for j = 0), i.e. the predictor of target[j].
    auto pred = g.slice_rows(hidden, n_prefix + n_prompt, n_prefix + n_prompt + n_target);
    auto logits = g.add_rowvec(g.matmul_nt(pred, dec.out_w), dec.out_b);
    auto log_probs = g.row_log_softmax(logits);
    auto picked = g.select_per_row(log_probs, target_ids);
    Mat<Real> mask(n_target, 1);
    for (int j = 0; j < n_target; ++j)
        mask(j, 0) = target_ids[static_cast<std::size_t>(j)] == Vocabulary::PAD ? Real(0) : Real(-1);
    LmLoss<Real> out;
    out.per_position = g.hadamard_const(picked, std::move(mask));
    out.total = g.sum_all(out.per_position);
    return out;
}

/// Greedy decoding: argmax each step (ties to the lowest token id), stopping
/// at EOS or max_len. Returns the emitted tokens including EOS if produced.
template <typename Real>
inline std::vector<int> generate(DecoderParams<Real>& params,
                                 const Mat<Real>& prefix_source_slide,
                                 const std::vector<Mat<Real>>& prefix_source_regions,
                                 const std::vector<int>& prompt_ids, int max_len) {
    if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");
    std::vector<int> emitted;
    for (int step = 0; step < max_len; ++step) {
        Graph<Real> g;
        auto dec = bind(g, params, "decoder");
        std::vector<typename Graph<Real>::Var> regions;
        regions.reserve(prefix_source_regions.size());
        for (const auto& r : prefix_source_regions) regions.push_back(g.constant(r));
        auto prefix = build_prefix(g, dec, g.constant(prefix_source_slide), regions);

        std::vector<int> text_ids;
        text_ids.push_back(Vocabulary::BOS);
        text_ids.insert(text_ids.end(), prompt_ids.begin(), prompt_ids.end());
        text_ids.insert(text_ids.end(), emitted.begin(), emitted.end());

        auto hidden = decoder_hidden(g, dec, prefix, text_ids);
        auto last = g.slice_rows(hidden, g.rows(hidden) - 1, g.rows(hidden));
        auto logits = g.add_rowvec(g.matmul_nt(last, dec.out_w), dec.out_b);
        const Mat<Real>& row = g.val(logits);
        int best = 0;
        for (int v = 1; v < row.cols; ++v)
            if (row(0, v) > row(0, best)) best = v;
        emitted.push_back(best);
        if (best == Vocabulary::EOS) break;
    }
    return emitted;
}

}  // namespace slidealign
