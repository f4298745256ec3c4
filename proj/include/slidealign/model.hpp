#pragma once

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/alignment.hpp"
#include "slidealign/config.hpp"
#include "slidealign/decoder.hpp"
#include "slidealign/io.hpp"
#include "slidealign/partition.hpp"
#include "slidealign/qformer.hpp"
#include "slidealign/text_encoder.hpp"

namespace slidealign {

constexpr int kMaxPrefixRegions = 64;

/// All model state: the frozen patch encoder plus the trainable text encoder,
/// shared-weight Q-Former, text-region attention projections with eta, and
/// the decoder head. Which alignment tensors exist depends on the ablation
/// flags, so ablated checkpoints omit them.
template <typename Real>
struct Model {
    int feature_dim = 0;
    bool use_region_qformer = true;
    bool use_slide_qformer = true;
    bool use_text_region_attention = true;

    PatchEncoder<Real> patch_encoder;  // frozen
    TextEncoderParams<Real> text;
    QFormerParams<Real> qformer;
    AlignmentParams<Real> align;  // present iff use_region_qformer
    DecoderParams<Real> decoder;

    static Model init(const RunConfig& cfg, int vocab_size) {
        cfg.validate();
        Model m;
        m.feature_dim = cfg.feature_dim;
        m.use_region_qformer = cfg.use_region_qformer;
        m.use_slide_qformer = cfg.use_slide_qformer;
        m.use_text_region_attention = cfg.use_text_region_attention;

        Rng enc_rng(derive_seed(cfg.seed, fnv1a64("patch_encoder")));
        m.patch_encoder = PatchEncoder<Real>::init(cfg.feature_dim, cfg.corpus.raw_dim, enc_rng);

        Rng text_rng(derive_seed(cfg.seed, fnv1a64("text_encoder")));
        m.text = TextEncoderParams<Real>::init(vocab_size, cfg.feature_dim, cfg.num_blocks,
                                               cfg.max_text_len, text_rng);

        Rng qf_rng(derive_seed(cfg.seed, fnv1a64("qformer")));
        m.qformer = QFormerParams<Real>::init(cfg.num_queries, cfg.feature_dim, cfg.num_blocks,
                                              qf_rng);

        if (cfg.use_region_qformer) {
            Rng align_rng(derive_seed(cfg.seed, fnv1a64("alignment")));
            m.align = AlignmentParams<Real>::init(cfg.feature_dim, cfg.eta_init,
                                                  cfg.use_text_region_attention, align_rng);
        }

        Rng dec_rng(derive_seed(cfg.seed, fnv1a64("decoder")));
        const int max_prefix = (1 + kMaxPrefixRegions) * cfg.num_queries;
        m.decoder = DecoderParams<Real>::init(vocab_size, cfg.decoder_dim, cfg.feature_dim,
                                              cfg.num_blocks, cfg.max_text_len, max_prefix,
                                              dec_rng);
        return m;
    }

    /// Walks every named tensor: fn(name, Mat&, trainable, weight_decay).
    template <typename Fn>
    void visit_params(Fn&& fn) {
        fn(std::string("patch_encoder.weight"), patch_encoder.weight, false, false);
        auto trainable = [&fn](const std::string& name, Mat<Real>& m, bool decay) {
            fn(name, m, true, decay);
        };
        text.visit("text", trainable);
        qformer.visit("qformer", trainable);
        if (use_region_qformer) align.visit("align", trainable);
        decoder.visit("decoder", trainable);
    }

    std::map<std::string, Mat<Real>*> param_table() {
        std::map<std::string, Mat<Real>*> table;
        visit_params([&](const std::string& name, Mat<Real>& m, bool, bool) { table[name] = &m; });
        return table;
    }

    /// FNV-1a over every parameter payload in visit order; the determinism
    /// and resume checks compare these.
    std::uint64_t parameter_hash() {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        visit_params([&](const std::string& name, Mat<Real>& m, bool, bool) {
            h = fnv1a64(name, h);
            if constexpr (std::is_same_v<Real, float>) {
                h = fnv1a64(m.a.data(), m.a.size() * sizeof(Real), h);
            } else {
                for (Real v : m.a) {
                    const double dv = static_cast<double>(v);
                    h = fnv1a64(&dv, sizeof(double), h);
                }
            }
        });
        return h;
    }
};

/// Model dims and flags recoverable from a named-parameter table alone, so a
/// checkpoint file is self-describing for `ground`/`instruct`.
struct InferredDims {
    int vocab_size = 0;
    int feature_dim = 0;
    int decoder_dim = 0;
    int num_queries = 0;
    int num_blocks = 0;
    int max_text_len = 0;
    int raw_dim = 0;
    bool has_region_path = false;
    bool has_text_region_attention = false;
};

inline InferredDims infer_dims(const std::map<std::string, MatF>& table) {
    auto shape = [&](const std::string& name) -> const MatF& {
        auto it = table.find(name);
        if (it == table.end())
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        return it->second;
    };
    InferredDims d;
    d.vocab_size = shape("text.tok_emb").rows;
    d.feature_dim = shape("text.tok_emb").cols;
    d.max_text_len = shape("text.pos_emb").rows;
    d.decoder_dim = shape("decoder.tok_emb").cols;
    d.num_queries = shape("qformer.query_tokens").rows;
    d.raw_dim = shape("patch_encoder.weight").cols;
    int blocks = 0;
    while (table.count("qformer.block" + std::to_string(blocks) + ".ffn.w1")) ++blocks;
    d.num_blocks = blocks;
    d.has_region_path = table.count("align.eta") > 0;
    d.has_text_region_attention = table.count("align.wq") > 0;
    return d;
}

/// Rebuilds a model skeleton from a parameter table (values copied in).
template <typename Real>
inline Model<Real> model_from_param_table(const std::map<std::string, MatF>& table) {
    const InferredDims d = infer_dims(table);
    RunConfig cfg;
    cfg.corpus.raw_dim = d.raw_dim;
    cfg.feature_dim = d.feature_dim;
    cfg.decoder_dim = d.decoder_dim;
    cfg.num_queries = d.num_queries;
    cfg.num_blocks = d.num_blocks;
    cfg.max_text_len = d.max_text_len;
    cfg.use_region_qformer = d.has_region_path;
    cfg.use_text_region_attention = d.has_text_region_attention;
    Model<Real> m = Model<Real>::init(cfg, d.vocab_size);
    m.visit_params([&](const std::string& name, Mat<Real>& dst, bool, bool) {
        auto it = table.find(name);
        if (it == table.end())
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (it->second.rows != dst.rows || it->second.cols != dst.cols)
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                                     shape_str(it->second.rows, it->second.cols) + " vs model " +
                                     shape_str(dst.rows, dst.cols));
        if constexpr (std::is_same_v<Real, float>) {
            dst = it->second;
        } else {
            dst = it->second.template cast<Real>();
        }
    });
    return m;
}

}  // namespace slidealign
