#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/graph.hpp"
#include "slidealign/nn.hpp"
#include "slidealign/vocab.hpp"

namespace slidealign {

/// Trainable text encoder f_t: token + position embeddings, pre-norm
/// transformer blocks, final LayerNorm, CLS pooling.
template <typename Real>
struct TextEncoderParams {
    Mat<Real> tok_emb;  // |V| x d
    Mat<Real> pos_emb;  // max_len x d
    std::vector<EncoderBlockParams<Real>> blocks;
    LayerNormParams<Real> final_ln;

    int dim() const { return tok_emb.cols; }
    int max_len() const { return pos_emb.rows; }

    static TextEncoderParams init(int vocab_size, int dim, int num_blocks, int max_len, Rng& rng) {
        TextEncoderParams p;
        p.tok_emb = Mat<Real>(vocab_size, dim);
        p.pos_emb = Mat<Real>(max_len, dim);
        init_embedding(p.tok_emb, rng);
        init_embedding(p.pos_emb, rng);
        for (int b = 0; b < num_blocks; ++b)
            p.blocks.push_back(EncoderBlockParams<Real>::init(dim, rng));
        p.final_ln = LayerNormParams<Real>::init(dim);
        return p;
    }

    template <typename Fn>
    void visit(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".tok_emb", tok_emb, false);
        fn(prefix + ".pos_emb", pos_emb, false);
        for (std::size_t b = 0; b < blocks.size(); ++b)
            blocks[b].visit(prefix + ".block" + std::to_string(b), fn);
        final_ln.visit(prefix + ".final_ln", fn);
    }
};

template <typename Real>
struct TextEncoderVars {
    typename Graph<Real>::Var tok_emb, pos_emb;
    std::vector<EncoderBlockVars<Real>> blocks;
    LayerNormVars<Real> final_ln;
};

template <typename Real>
inline TextEncoderVars<Real> bind(Graph<Real>& g, TextEncoderParams<Real>& p,
                                  const std::string& prefix) {
    TextEncoderVars<Real> v;
    v.tok_emb = g.param(p.tok_emb, prefix + ".tok_emb");
    v.pos_emb = g.param(p.pos_emb, prefix + ".pos_emb");
    for (std::size_t b = 0; b < p.blocks.size(); ++b)
        v.blocks.push_back(bind(g, p.blocks[b], prefix + ".block" + std::to_string(b)));
    v.final_ln = bind(g, p.final_ln, prefix + ".final_ln");
    return v;
}

/// Encodes a CLS-prefixed token id sequence; returns the final-layer hidden
/// state at the CLS position as a 1xd Var.
template <typename Real>
inline typename Graph<Real>::Var encode_text(Graph<Real>& g, const TextEncoderVars<Real>& enc,
                                             const std::vector<int>& token_ids) {
    if (token_ids.empty() || token_ids.front() != Vocabulary::CLS)
        throw std::invalid_argument("encode_text: sequence must start with CLS");
    const int len = static_cast<int>(token_ids.size());
    const int max_len = g.rows(enc.pos_emb);
    if (len > max_len)
        throw std::invalid_argument("encode_text: sequence length " + std::to_string(len) +
                                    " exceeds max_len " + std::to_string(max_len));
    auto x = g.add(g.gather_rows(enc.tok_emb, token_ids),
                   g.gather_rows(enc.pos_emb, iota_indices(len)));
    for (const auto& block : enc.blocks) x = encoder_block_forward(g, x, block);
    x = g.layer_norm(x, enc.final_ln.gamma, enc.final_ln.beta);
    return g.slice_rows(x, 0, 1);
}

}  // namespace slidealign
