#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "slidealign/graph.hpp"
#include "slidealign/mat.hpp"
#include "slidealign/rng.hpp"

namespace slidealign {

template <typename Real>
inline void init_xavier(Mat<Real>& w, Rng& rng) {
    const double scale = std::sqrt(2.0 / (w.rows + w.cols));
    for (auto& v : w.a) v = static_cast<Real>(rng.normal() * scale);
}

template <typename Real>
inline void init_embedding(Mat<Real>& w, Rng& rng, double scale = 0.02) {
    for (auto& v : w.a) v = static_cast<Real>(rng.normal() * scale);
}

// ---------------------------------------------------------------------------
// Parameter blocks. Each block pairs a visit() (optimizer/checkpoint walk:
// name, tensor, weight-decay flag) with a bind() creating tape Vars.
// ---------------------------------------------------------------------------

template <typename Real>
struct LayerNormParams {
    Mat<Real> gamma, beta;

    static LayerNormParams init(int dim) {
        LayerNormParams p;
        p.gamma = Mat<Real>(1, dim, Real(1));
        p.beta = Mat<Real>(1, dim, Real(0));
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".gamma", gamma, false);
        fn(prefix + ".beta", beta, false);
    }
};

template <typename Real>
struct LayerNormVars {
    typename Graph<Real>::Var gamma, beta;
};

template <typename Real>
inline LayerNormVars<Real> bind(Graph<Real>& g, LayerNormParams<Real>& p,
                                const std::string& prefix) {
    return {g.param(p.gamma, prefix + ".gamma"), g.param(p.beta, prefix + ".beta")};
}

template <typename Real>
struct AttentionParams {
    Mat<Real> wq, wk, wv, wo;  // d x d, no biases

    static AttentionParams init(int dim, Rng& rng) {
        AttentionParams p;
        p.wq = Mat<Real>(dim, dim);
        p.wk = Mat<Real>(dim, dim);
        p.wv = Mat<Real>(dim, dim);
        p.wo = Mat<Real>(dim, dim);
        init_xavier(p.wq, rng);
        init_xavier(p.wk, rng);
        init_xavier(p.wv, rng);
        init_xavier(p.wo, rng);
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".wq", wq, true);
        fn(prefix + ".wk", wk, true);
        fn(prefix + ".wv", wv, true);
        fn(prefix + ".wo", wo, true);
    }
};

template <typename Real>
struct AttentionVars {
    typename Graph<Real>::Var wq, wk, wv, wo;
};

template <typename Real>
inline AttentionVars<Real> bind(Graph<Real>& g, AttentionParams<Real>& p,
                                const std::string& prefix) {
    return {g.param(p.wq, prefix + ".wq"), g.param(p.wk, prefix + ".wk"),
            g.param(p.wv, prefix + ".wv"), g.param(p.wo, prefix + ".wo")};
}

template <typename Real>
struct FfnParams {
    Mat<Real> w1, b1, w2, b2;  // hidden = 4d

    static FfnParams init(int dim, Rng& rng) {
        FfnParams p;
        p.w1 = Mat<Real>(4 * dim, dim);
        p.b1 = Mat<Real>(1, 4 * dim);
        p.w2 = Mat<Real>(dim, 4 * dim);
        p.b2 = Mat<Real>(1, dim);
        init_xavier(p.w1, rng);
        init_xavier(p.w2, rng);
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".w1", w1, true);
        fn(prefix + ".b1", b1, false);
        fn(prefix + ".w2", w2, true);
        fn(prefix + ".b2", b2, false);
    }
};

template <typename Real>
struct FfnVars {
    typename Graph<Real>::Var w1, b1, w2, b2;
};

template <typename Real>
inline FfnVars<Real> bind(Graph<Real>& g, FfnParams<Real>& p, const std::string& prefix) {
    return {g.param(p.w1, prefix + ".w1"), g.param(p.b1, prefix + ".b1"),
            g.param(p.w2, prefix + ".w2"), g.param(p.b2, prefix + ".b2")};
}

/// Self-attention + feed-forward block with pre-norm residuals (text encoder
/// and decoder both use this; the decoder passes a causal mask).
template <typename Real>
struct EncoderBlockParams {
    LayerNormParams<Real> ln_attn;
    AttentionParams<Real> attn;
    LayerNormParams<Real> ln_ffn;
    FfnParams<Real> ffn;

    static EncoderBlockParams init(int dim, Rng& rng) {
        EncoderBlockParams p;
        p.ln_attn = LayerNormParams<Real>::init(dim);
        p.attn = AttentionParams<Real>::init(dim, rng);
        p.ln_ffn = LayerNormParams<Real>::init(dim);
        p.ffn = FfnParams<Real>::init(dim, rng);
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        ln_attn.visit(prefix + ".ln_attn", fn);
        attn.visit(prefix + ".attn", fn);
        ln_ffn.visit(prefix + ".ln_ffn", fn);
        ffn.visit(prefix + ".ffn", fn);
    }
};

template <typename Real>
struct EncoderBlockVars {
    LayerNormVars<Real> ln_attn;
    AttentionVars<Real> attn;
    LayerNormVars<Real> ln_ffn;
    FfnVars<Real> ffn;
};

template <typename Real>
inline EncoderBlockVars<Real> bind(Graph<Real>& g, EncoderBlockParams<Real>& p,
                                   const std::string& prefix) {
    return {bind(g, p.ln_attn, prefix + ".ln_attn"), bind(g, p.attn, prefix + ".attn"),
            bind(g, p.ln_ffn, prefix + ".ln_ffn"), bind(g, p.ffn, prefix + ".ffn")};
}

// ---------------------------------------------------------------------------
// Forward builders
// ---------------------------------------------------------------------------

template <typename Real>
struct AttentionCore {
    typename Graph<Real>::Var context;  // pre-output-projection, rows match queries
    typename Graph<Real>::Var weights;  // row-stochastic attention weights
};

/// Single-head scaled dot-product attention. Keys and values are both
/// projected from `keys_values`; logits are scaled by 1/sqrt(d).
template <typename Real>
inline AttentionCore<Real> attention_core(Graph<Real>& g, typename Graph<Real>::Var queries,
                                          typename Graph<Real>::Var keys_values,
                                          typename Graph<Real>::Var wq,
                                          typename Graph<Real>::Var wk,
                                          typename Graph<Real>::Var wv,
                                          const Mat<Real>* additive_mask = nullptr) {
    const int d = g.cols(queries);
    auto q = g.matmul_nt(queries, wq);
    auto k = g.matmul_nt(keys_values, wk);
    auto v = g.matmul_nt(keys_values, wv);
    auto logits = g.scale(g.matmul_nt(q, k), Real(1) / static_cast<Real>(std::sqrt(double(d))));
    if (additive_mask) logits = g.add_const(logits, *additive_mask);
    auto weights = g.row_softmax(logits);
    return {g.matmul(weights, v), weights};
}

template <typename Real>
inline typename Graph<Real>::Var attention(Graph<Real>& g, typename Graph<Real>::Var queries,
                                           typename Graph<Real>::Var keys_values,
                                           const AttentionVars<Real>& p,
                                           const Mat<Real>* additive_mask = nullptr) {
    auto core = attention_core(g, queries, keys_values, p.wq, p.wk, p.wv, additive_mask);
    return g.matmul_nt(core.context, p.wo);
}

template <typename Real>
inline typename Graph<Real>::Var ffn_forward(Graph<Real>& g, typename Graph<Real>::Var x,
                                             const FfnVars<Real>& p) {
    auto h = g.gelu(g.add_rowvec(g.matmul_nt(x, p.w1), p.b1));
    return g.add_rowvec(g.matmul_nt(h, p.w2), p.b2);
}

template <typename Real>
inline typename Graph<Real>::Var encoder_block_forward(Graph<Real>& g,
                                                       typename Graph<Real>::Var x,
                                                       const EncoderBlockVars<Real>& p,
                                                       const Mat<Real>* additive_mask = nullptr) {
    auto h = g.layer_norm(x, p.ln_attn.gamma, p.ln_attn.beta);
    x = g.add(x, attention(g, h, h, p.attn, additive_mask));
    auto h2 = g.layer_norm(x, p.ln_ffn.gamma, p.ln_ffn.beta);
    return g.add(x, ffn_forward(g, h2, p.ffn));
}

/// Additive causal mask: position i may attend positions <= i.
template <typename Real>
inline Mat<Real> causal_mask(int n) {
    Mat<Real> m(n, n, Real(0));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m(i, j) = Real(-1e30);
    return m;
}

inline std::vector<int> iota_indices(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

}  // namespace slidealign
