#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/graph.hpp"
#include "slidealign/nn.hpp"
#include "slidealign/rng.hpp"

namespace slidealign {

/// Projections of the text-region attention layer (Eq. for v^tc). No output
/// projection: the attended values are used directly.
template <typename Real>
struct AlignmentParams {
    bool has_attention = true;
    Mat<Real> wq, wk, wv;  // d x d, present iff has_attention
    Mat<Real> eta;         // 1x1 learnable similarity scale

    static AlignmentParams init(int dim, double eta_init, bool with_attention, Rng& rng) {
        AlignmentParams p;
        p.has_attention = with_attention;
        if (with_attention) {
            p.wq = Mat<Real>(dim, dim);
            p.wk = Mat<Real>(dim, dim);
            p.wv = Mat<Real>(dim, dim);
            init_xavier(p.wq, rng);
            init_xavier(p.wk, rng);
            init_xavier(p.wv, rng);
        }
        p.eta = Mat<Real>::scalar(static_cast<Real>(eta_init));
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        if (has_attention) {
            fn(prefix + ".wq", wq, true);
            fn(prefix + ".wk", wk, true);
            fn(prefix + ".wv", wv, true);
        }
        fn(prefix + ".eta", eta, false);
    }
};

template <typename Real>
struct AlignmentVars {
    bool has_attention = true;
    typename Graph<Real>::Var wq, wk, wv, eta;
};

template <typename Real>
inline AlignmentVars<Real> bind(Graph<Real>& g, AlignmentParams<Real>& p,
                                const std::string& prefix) {
    AlignmentVars<Real> v;
    v.has_attention = p.has_attention;
    if (p.has_attention) {
        v.wq = g.param(p.wq, prefix + ".wq");
        v.wk = g.param(p.wk, prefix + ".wk");
        v.wv = g.param(p.wv, prefix + ".wv");
    }
    v.eta = g.param(p.eta, prefix + ".eta");
    return v;
}

template <typename Real>
struct TextConditionedAttention {
    typename Graph<Real>::Var values;   // v^tc, L x d
    typename Graph<Real>::Var weights;  // L x (N*N_q) row-stochastic
};

/// v^tc = softmax(W_q t_sub (W_k v_reg)^T / sqrt(d)) W_v v_reg.
template <typename Real>
inline TextConditionedAttention<Real> text_conditioned_attention(
    Graph<Real>& g, typename Graph<Real>::Var queries, typename Graph<Real>::Var v_reg,
    typename Graph<Real>::Var wq, typename Graph<Real>::Var wk, typename Graph<Real>::Var wv) {
    if (g.rows(v_reg) < 1)
        throw std::invalid_argument("text_conditioned_attention: empty region features");
    if (g.cols(queries) != g.cols(v_reg))
        throw std::invalid_argument("text_conditioned_attention: dim mismatch, queries " +
                                    std::to_string(g.cols(queries)) + " vs regions " +
                                    std::to_string(g.cols(v_reg)));
    auto core = attention_core(g, queries, v_reg, wq, wk, wv);
    return {core.context, core.weights};
}

/// Mean of the L text-conditioned query results; the exported region-level
/// alignment representation (not part of the loss).
template <typename Real>
inline typename Graph<Real>::Var pooled_region_alignment(Graph<Real>& g,
                                                         typename Graph<Real>::Var v_tc) {
    return g.mean_rows(v_tc);
}

/// LogSigmoid region loss. The paper writes -log(1/(1+exp(y * -eta * <v,t>)));
/// that double negative equals -log sigmoid(y * eta * <v,t>), i.e. mean
/// softplus(-y * eta * s) with s the RAW dot product of matched rows.
template <typename Real>
inline typename Graph<Real>::Var region_loss(Graph<Real>& g, typename Graph<Real>::Var v_tc,
                                             typename Graph<Real>::Var queries,
                                             const std::vector<int>& labels,
                                             typename Graph<Real>::Var eta) {
    if (g.rows(v_tc) != g.rows(queries) || g.cols(v_tc) != g.cols(queries))
        throw std::invalid_argument("region_loss: v_tc/query shape mismatch");
    if (static_cast<int>(labels.size()) != g.rows(v_tc))
        throw std::invalid_argument("region_loss: need one label per query");
    if (!g.val(v_tc).all_finite() || !g.val(queries).all_finite() || !g.val(eta).all_finite())
        throw std::invalid_argument("region_loss: non-finite input");
    Mat<Real> neg_y(static_cast<int>(labels.size()), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1 && labels[i] != -1)
            throw std::invalid_argument("region_loss: labels must be +1 or -1");
        neg_y(static_cast<int>(i), 0) = static_cast<Real>(-labels[i]);
    }
    auto sims = g.rowwise_dot(v_tc, queries);
    auto scaled = g.scale_var(sims, eta);
    auto margins = g.hadamard_const(scaled, std::move(neg_y));
    return g.mean_all(g.softplus(margins));
}

/// Mean over the N_q query rows (v-bar for the global loss).
template <typename Real>
inline typename Graph<Real>::Var pool_queries(Graph<Real>& g, typename Graph<Real>::Var v) {
    if (g.rows(v) < 1) throw std::invalid_argument("pool_queries: empty input");
    return g.mean_rows(v);
}

template <typename Real>
struct GlobalLoss {
    typename Graph<Real>::Var i2t, t2i, slide;
    typename Graph<Real>::Var similarity;  // B x B cosine matrix
};

/// Symmetric InfoNCE over cosine similarities at temperature tau;
/// L_slide = (L_i2t + L_t2i) / 2.
template <typename Real>
inline GlobalLoss<Real> global_loss(Graph<Real>& g, typename Graph<Real>::Var pooled_image,
                                    typename Graph<Real>::Var text, Real tau) {
    if (g.rows(pooled_image) != g.rows(text) || g.cols(pooled_image) != g.cols(text))
        throw std::invalid_argument("global_loss: image/text batch shape mismatch");
    if (!(tau > Real(0))) throw std::invalid_argument("global_loss: tau must be positive");
    auto u = g.row_l2_normalize(pooled_image, "image embedding");
    auto t = g.row_l2_normalize(text, "text embedding");
    auto sim = g.matmul_nt(u, t);
    auto log_p_rows = g.row_log_softmax(g.scale(sim, Real(1) / tau));
    auto i2t = g.neg(g.mean_all(g.diag(log_p_rows)));
    auto log_p_cols = g.row_log_softmax(g.scale(g.transpose(sim), Real(1) / tau));
    auto t2i = g.neg(g.mean_all(g.diag(log_p_cols)));
    auto slide = g.scale(g.add(i2t, t2i), Real(0.5));
    return {i2t, t2i, slide, sim};
}

/// Query batch for one anchor: its K subcaption features (y=+1) followed by
/// one uniformly sampled subcaption feature from each other pair (y=-1);
/// L = K + B - 1.
template <typename Real>
struct QueryBatch {
    typename Graph<Real>::Var queries;  // L x d
    std::vector<int> labels;            // +1 / -1
};

template <typename Real>
inline QueryBatch<Real> build_query_batch(
    Graph<Real>& g, int anchor,
    const std::vector<std::vector<typename Graph<Real>::Var>>& subcaption_features,
    const std::vector<int>& negative_choice) {
    const int batch = static_cast<int>(subcaption_features.size());
    if (batch < 1) throw std::invalid_argument("build_query_batch: empty batch");
    if (anchor < 0 || anchor >= batch)
        throw std::invalid_argument("build_query_batch: anchor out of range");
    if (static_cast<int>(negative_choice.size()) != batch)
        throw std::invalid_argument("build_query_batch: need one negative choice per pair");
    QueryBatch<Real> out;
    std::vector<typename Graph<Real>::Var> rows;
    for (auto v : subcaption_features[static_cast<std::size_t>(anchor)]) {
        rows.push_back(v);
        out.labels.push_back(1);
    }
    for (int j = 0; j < batch; ++j) {
        if (j == anchor) continue;
        const auto& subs = subcaption_features[static_cast<std::size_t>(j)];
        const int pick = negative_choice[static_cast<std::size_t>(j)];
        if (pick < 0 || pick >= static_cast<int>(subs.size()))
            throw std::invalid_argument("build_query_batch: negative choice out of range");
        rows.push_back(subs[static_cast<std::size_t>(pick)]);
        out.labels.push_back(-1);
    }
    out.queries = g.concat_rows(rows);
    return out;
}

}  // namespace slidealign
