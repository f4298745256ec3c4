#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/graph.hpp"
#include "slidealign/nn.hpp"

namespace slidealign {

/// One Q-Former block: query self-attention, cross-attention onto the visual
/// tokens, feed-forward; each sublayer pre-normed with a residual.
template <typename Real>
struct QFormerBlockParams {
    LayerNormParams<Real> ln_self;
    AttentionParams<Real> self_attn;
    LayerNormParams<Real> ln_cross;
    AttentionParams<Real> cross_attn;
    LayerNormParams<Real> ln_ffn;
    FfnParams<Real> ffn;

    static QFormerBlockParams init(int dim, Rng& rng) {
        QFormerBlockParams p;
        p.ln_self = LayerNormParams<Real>::init(dim);
        p.self_attn = AttentionParams<Real>::init(dim, rng);
        p.ln_cross = LayerNormParams<Real>::init(dim);
        p.cross_attn = AttentionParams<Real>::init(dim, rng);
        p.ln_ffn = LayerNormParams<Real>::init(dim);
        p.ffn = FfnParams<Real>::init(dim, rng);
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        ln_self.visit(prefix + ".ln_self", fn);
        self_attn.visit(prefix + ".self_attn", fn);
        ln_cross.visit(prefix + ".ln_cross", fn);
        cross_attn.visit(prefix + ".cross_attn", fn);
        ln_ffn.visit(prefix + ".ln_ffn", fn);
        ffn.visit(prefix + ".ffn", fn);
    }
};

/// Shared-weight query transformer: one parameter store serves both the
/// region-level and slide-level paths, including the query tokens Q.
template <typename Real>
struct QFormerParams {
    Mat<Real> query_tokens;  // N_q x d
    std::vector<QFormerBlockParams<Real>> blocks;

    int num_queries() const { return query_tokens.rows; }
    int dim() const { return query_tokens.cols; }

    static QFormerParams init(int num_queries, int dim, int num_blocks, Rng& rng) {
        QFormerParams p;
        p.query_tokens = Mat<Real>(num_queries, dim);
        init_embedding(p.query_tokens, rng);
        for (int b = 0; b < num_blocks; ++b)
            p.blocks.push_back(QFormerBlockParams<Real>::init(dim, rng));
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".query_tokens", query_tokens, false);
        for (std::size_t b = 0; b < blocks.size(); ++b)
            blocks[b].visit(prefix + ".block" + std::to_string(b), fn);
    }
};

template <typename Real>
struct QFormerBlockVars {
    LayerNormVars<Real> ln_self;
    AttentionVars<Real> self_attn;
    LayerNormVars<Real> ln_cross;
    AttentionVars<Real> cross_attn;
    LayerNormVars<Real> ln_ffn;
    FfnVars<Real> ffn;
};

template <typename Real>
struct QFormerVars {
    typename Graph<Real>::Var query_tokens;
    std::vector<QFormerBlockVars<Real>> blocks;
};

template <typename Real>
inline QFormerVars<Real> bind(Graph<Real>& g, QFormerParams<Real>& p, const std::string& prefix) {
    QFormerVars<Real> v;
    v.query_tokens = g.param(p.query_tokens, prefix + ".query_tokens");
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b);
        v.blocks.push_back(QFormerBlockVars<Real>{
            bind(g, p.blocks[b].ln_self, bp + ".ln_self"),
            bind(g, p.blocks[b].self_attn, bp + ".self_attn"),
            bind(g, p.blocks[b].ln_cross, bp + ".ln_cross"),
            bind(g, p.blocks[b].cross_attn, bp + ".cross_attn"),
            bind(g, p.blocks[b].ln_ffn, bp + ".ln_ffn"),
            bind(g, p.blocks[b].ffn, bp + ".ffn")});
    }
    return v;
}

/// Distills a visual feature matrix (any row count >= 1) into N_q query
/// embeddings. Keys/values come from the raw visual rows; no positional
/// encoding is applied to them, so the output is invariant to row order.
template <typename Real>
inline typename Graph<Real>::Var qformer_forward(Graph<Real>& g, const QFormerVars<Real>& qf,
                                                 typename Graph<Real>::Var visual) {
    if (g.rows(visual) < 1)
        throw std::invalid_argument("qformer_forward: visual features must have >= 1 row");
    if (g.cols(visual) != g.cols(qf.query_tokens))
        throw std::invalid_argument("qformer_forward: feature dim mismatch, visual " +
                                    std::to_string(g.cols(visual)) + " vs queries " +
                                    std::to_string(g.cols(qf.query_tokens)));
    auto x = qf.query_tokens;
    for (const auto& block : qf.blocks) {
        auto h = g.layer_norm(x, block.ln_self.gamma, block.ln_self.beta);
        x = g.add(x, attention(g, h, h, block.self_attn));
        auto h2 = g.layer_norm(x, block.ln_cross.gamma, block.ln_cross.beta);
        x = g.add(x, attention(g, h2, visual, block.cross_attn));
        auto h3 = g.layer_norm(x, block.ln_ffn.gamma, block.ln_ffn.beta);
        x = g.add(x, ffn_forward(g, h3, block.ffn));
    }
    return x;
}

/// Runs the Q-Former over each region block and stacks the outputs into the
/// (N * N_q) x d region embedding matrix, region order preserved.
template <typename Real>
inline typename Graph<Real>::Var region_qformer(Graph<Real>& g, const QFormerVars<Real>& qf,
                                                const std::vector<typename Graph<Real>::Var>& region_blocks) {
    if (region_blocks.empty())
        throw std::invalid_argument("region_qformer: no region blocks");
    std::vector<typename Graph<Real>::Var> outs;
    outs.reserve(region_blocks.size());
    for (auto block : region_blocks) outs.push_back(qformer_forward(g, qf, block));
    return g.concat_rows(outs);
}

template <typename Real>
inline typename Graph<Real>::Var slide_qformer(Graph<Real>& g, const QFormerVars<Real>& qf,
                                               typename Graph<Real>::Var all_patches) {
    return qformer_forward(g, qf, all_patches);
}

}  // namespace slidealign
