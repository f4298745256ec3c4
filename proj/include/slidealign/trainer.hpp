#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slidealign/alignment.hpp"
#include "slidealign/checkpoint.hpp"
#include "slidealign/config.hpp"
#include "slidealign/corpus.hpp"
#include "slidealign/decoder.hpp"
#include "slidealign/model.hpp"
#include "slidealign/optim.hpp"
#include "slidealign/qformer.hpp"
#include "slidealign/text_encoder.hpp"
#include "slidealign/textproc.hpp"

namespace slidealign {

// ---------------------------------------------------------------------------
// Prepared corpus: patch features are encoded once (the encoder is frozen)
// and captions tokenized once; training steps only rebuild the trainable part.
// ---------------------------------------------------------------------------

template <typename Real>
struct PreparedPair {
    std::string slide_id;
    SlideFeatures<Real> features;
    std::vector<std::string> sentences;
    std::vector<int> full_caption_ids;  // CLS + full caption tokens
    std::vector<int> planted_regions;   // region indices in region order
    std::vector<int> planted_concepts;  // matching concept ids
    std::vector<InstructionRecord> instructions;
};

template <typename Real>
struct PreparedCorpus {
    Vocabulary vocab;
    std::vector<PreparedPair<Real>> pairs;
};

template <typename Real>
inline PreparedCorpus<Real> prepare_corpus(const SyntheticCorpus& corpus,
                                           const PatchEncoder<Real>& encoder,
                                           const Vocabulary& vocab) {
    PreparedCorpus<Real> prep;
    prep.vocab = vocab;
    prep.pairs.reserve(corpus.pairs.size());
    for (const auto& pair : corpus.pairs) {
        PreparedPair<Real> p;
        p.slide_id = pair.slide.slide_id;
        p.features = extract_slide_features(pair.slide, encoder);
        p.sentences = pair.caption;
        p.full_caption_ids = tokenize_with_cls(join_sentences(pair.caption), vocab);
        for (int region = 0; region < pair.slide.num_regions(); ++region) {
            const int cid = pair.slide.planted_map[static_cast<std::size_t>(region)];
            if (cid == kBackground) continue;
            p.planted_regions.push_back(region);
            p.planted_concepts.push_back(cid);
        }
        p.instructions = pair.instructions;
        prep.pairs.push_back(std::move(p));
    }
    return prep;
}

/// Pair indices for one step: epoch-wise deterministic shuffles chunked into
/// batches, so any step's batch is a pure function of (seed, step).
inline std::vector<int> batch_indices(int num_pairs, int batch_size, std::uint64_t seed,
                                      std::uint64_t step) {
    const int b = std::min(batch_size, num_pairs);
    const std::uint64_t steps_per_epoch = static_cast<std::uint64_t>(num_pairs / b);
    const std::uint64_t epoch = step / steps_per_epoch;
    const std::uint64_t chunk = step % steps_per_epoch;
    std::vector<int> order(static_cast<std::size_t>(num_pairs));
    for (int i = 0; i < num_pairs; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, 0xE90C4, epoch));
    rng.shuffle(order);
    return std::vector<int>(order.begin() + static_cast<long>(chunk) * b,
                            order.begin() + static_cast<long>(chunk) * b + b);
}

// ---------------------------------------------------------------------------
// Stage-1 pretraining loss graph
// ---------------------------------------------------------------------------

template <typename Real>
struct Stage1Vars {
    TextEncoderVars<Real> text;
    QFormerVars<Real> qf;
    AlignmentVars<Real> align;  // bound iff the region pathway is on
    bool has_align = false;
};

template <typename Real>
inline Stage1Vars<Real> bind_stage1(Graph<Real>& g, Model<Real>& model) {
    Stage1Vars<Real> v;
    v.text = bind(g, model.text, "text");
    v.qf = bind(g, model.qformer, "qformer");
    if (model.use_region_qformer) {
        v.align = bind(g, model.align, "align");
        v.has_align = true;
    }
    return v;
}

template <typename Real>
struct LossVars {
    typename Graph<Real>::Var region, i2t, t2i, slide, total;
    bool has_region = false;
};

struct LossBreakdown {
    double region = 0, i2t = 0, t2i = 0, slide = 0, total = 0;
    double eta = 0;
};

/// Builds the full pretraining objective for one batch. Subcaption and
/// negative sampling are seeded from (step_seed, global pair id), so the
/// result is invariant to batch order up to float reduction noise.
template <typename Real>
inline LossVars<Real> build_pretrain_loss(Graph<Real>& g, const Stage1Vars<Real>& vars,
                                          Model<Real>& model,
                                          const PreparedCorpus<Real>& corpus,
                                          const std::vector<int>& batch,
                                          const RunConfig& cfg, std::uint64_t step_seed) {
    using GVar = typename Graph<Real>::Var;
    const int b = static_cast<int>(batch.size());
    if (b < 1) throw std::invalid_argument("build_pretrain_loss: empty batch");

    std::vector<std::vector<GVar>> subcaption_features(static_cast<std::size_t>(b));
    std::vector<GVar> caption_features;       // t^i, 1xd each
    std::vector<GVar> region_embeds;          // v^reg per pair
    std::vector<GVar> pooled_image;           // v-bar per pair, 1xd

    for (int i = 0; i < b; ++i) {
        const PreparedPair<Real>& pair = corpus.pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])];
        const std::uint64_t pair_id = static_cast<std::uint64_t>(batch[static_cast<std::size_t>(i)]);

        Rng sub_rng(derive_seed(step_seed, 0x5B5B, pair_id));
        const auto subs = sample_subcaptions(pair.sentences, cfg.subcaptions_per_pair, cfg.p_keep,
                                             sub_rng);
        auto& feats = subcaption_features[static_cast<std::size_t>(i)];
        feats.reserve(subs.size());
        for (const auto& sub : subs)
            feats.push_back(encode_text(g, vars.text, tokenize_with_cls(sub.text, corpus.vocab)));
        caption_features.push_back(encode_text(g, vars.text, pair.full_caption_ids));

        GVar v_reg;
        if (model.use_region_qformer) {
            std::vector<GVar> blocks;
            blocks.reserve(pair.features.region_blocks.size());
            for (const auto& block : pair.features.region_blocks)
                blocks.push_back(g.constant(block));
            v_reg = region_qformer(g, vars.qf, blocks);
            region_embeds.push_back(v_reg);
        }
        if (model.use_slide_qformer) {
            auto v_slide = slide_qformer(g, vars.qf, g.constant(pair.features.all_patches));
            pooled_image.push_back(pool_queries(g, v_slide));
        } else {
            // Slide Q-Former ablated: v-bar is the mean over the pooled
            // region query blocks, i.e. the mean of all v^reg rows.
            pooled_image.push_back(g.mean_rows(v_reg));
        }
    }

    LossVars<Real> out;
    auto vbar = g.concat_rows(pooled_image);
    auto tfull = g.concat_rows(caption_features);
    auto global = global_loss(g, vbar, tfull, static_cast<Real>(cfg.tau));
    out.i2t = global.i2t;
    out.t2i = global.t2i;
    out.slide = global.slide;

    if (model.use_region_qformer) {
        out.has_region = true;
        GVar region_sum;
        for (int i = 0; i < b; ++i) {
            std::vector<int> negative_choice(static_cast<std::size_t>(b), 0);
            for (int j = 0; j < b; ++j) {
                if (j == i) continue;
                Rng neg_rng(derive_seed(step_seed ^ 0x4E47ULL,
                                        static_cast<std::uint64_t>(batch[static_cast<std::size_t>(i)]),
                                        static_cast<std::uint64_t>(batch[static_cast<std::size_t>(j)])));
                negative_choice[static_cast<std::size_t>(j)] =
                    neg_rng.uniform_int(static_cast<int>(subcaption_features[static_cast<std::size_t>(j)].size()));
            }
            auto qb = build_query_batch(g, i, subcaption_features, negative_choice);
            GVar v_tc;
            if (model.use_text_region_attention) {
                v_tc = text_conditioned_attention(g, qb.queries, region_embeds[static_cast<std::size_t>(i)],
                                                  vars.align.wq, vars.align.wk, vars.align.wv)
                           .values;
            } else {
                // Text-region attention ablated: every query sees the plain
                // mean of the region rows.
                auto mean_row = g.mean_rows(region_embeds[static_cast<std::size_t>(i)]);
                v_tc = g.gather_rows(mean_row,
                                     std::vector<int>(qb.labels.size(), 0));
            }
            auto anchor_loss = region_loss(g, v_tc, qb.queries, qb.labels, vars.align.eta);
            region_sum = (i == 0) ? anchor_loss : g.add(region_sum, anchor_loss);
        }
        out.region = g.scale(region_sum, Real(1) / static_cast<Real>(b));
        out.total = g.add(out.region, out.slide);
    } else {
        out.total = out.slide;
    }
    return out;
}

template <typename Real>
inline LossBreakdown read_losses(const Graph<Real>& g, const LossVars<Real>& lv, double eta) {
    LossBreakdown b;
    b.region = lv.has_region ? static_cast<double>(g.val(lv.region).a[0]) : 0.0;
    b.i2t = static_cast<double>(g.val(lv.i2t).a[0]);
    b.t2i = static_cast<double>(g.val(lv.t2i).a[0]);
    b.slide = static_cast<double>(g.val(lv.slide).a[0]);
    b.total = static_cast<double>(g.val(lv.total).a[0]);
    b.eta = eta;
    return b;
}

// ---------------------------------------------------------------------------
// Training loop (stage 1)
// ---------------------------------------------------------------------------

template <typename Real>
inline std::vector<typename AdamW<Real>::Update> collect_updates(
    Graph<Real>& g, const std::map<std::string, bool>& decay_flags) {
    std::vector<typename AdamW<Real>::Update> updates;
    updates.reserve(g.params().size());
    for (const auto& bindinfo : g.params()) {
        auto it = decay_flags.find(bindinfo.name);
        if (it == decay_flags.end())
            throw std::logic_error("collect_updates: unknown parameter '" + bindinfo.name + "'");
        updates.push_back({bindinfo.name, bindinfo.master, &g.grad(bindinfo.var), it->second});
    }
    return updates;
}

template <typename Real>
inline std::map<std::string, bool> decay_table(Model<Real>& model) {
    std::map<std::string, bool> flags;
    model.visit_params([&](const std::string& name, Mat<Real>&, bool trainable, bool decay) {
        if (trainable) flags[name] = decay;
    });
    return flags;
}

using MetricsSink = std::function<void(std::uint64_t step, const LossBreakdown&)>;

struct TrainOptions {
    std::string run_dir;       // checkpoints + metrics go here when non-empty
    MetricsSink metrics_sink;  // optional extra consumer
    const Checkpoint* resume = nullptr;
};

template <typename Real>
inline void check_finite_losses(const LossBreakdown& lb, std::uint64_t step) {
    auto check = [&](double v, const char* name) {
        if (!std::isfinite(v))
            throw std::runtime_error("train: non-finite " + std::string(name) + " at step " +
                                     std::to_string(step));
    };
    check(lb.region, "L_region");
    check(lb.i2t, "L_i2t");
    check(lb.t2i, "L_t2i");
    check(lb.slide, "L_slide");
    check(lb.total, "L_total");
}

inline void assert_loss_identities(const LossBreakdown& lb, bool has_region, std::uint64_t step) {
    if (std::abs(lb.slide - 0.5 * (lb.i2t + lb.t2i)) > 1e-6)
        throw std::runtime_error("train: L_slide identity violated at step " +
                                 std::to_string(step));
    const double expected_total = has_region ? lb.region + lb.slide : lb.slide;
    if (std::abs(lb.total - expected_total) > 1e-6)
        throw std::runtime_error("train: L_total identity violated at step " +
                                 std::to_string(step));
}

template <typename Real>
struct Trainer {
    RunConfig cfg;
    Model<Real> model;
    AdamW<Real> opt;
    Rng master_rng;
    std::uint64_t step = 0;

    Trainer(const RunConfig& config, int vocab_size)
        : cfg(config),
          model(Model<Real>::init(config, vocab_size)),
          opt(config.learning_rate),
          master_rng(derive_seed(config.seed, fnv1a64("train_master"))) {}

    void restore(const Checkpoint& ckpt) {
        if (ckpt.config_hash != config_hash(cfg))
            throw std::runtime_error("resume: checkpoint config hash does not match this config");
        restore_model(model, ckpt);
        restore_optimizer(opt, ckpt);
        master_rng.load_state(ckpt.rng_state);
        step = ckpt.step;
    }

    /// Loads parameters only (fresh optimizer and step counter); the stage-2
    /// entry point for a stage-1 checkpoint.
    void load_weights(const Checkpoint& ckpt) { restore_model(model, ckpt); }

    Checkpoint snapshot() {
        return make_checkpoint(model, opt, step, config_hash(cfg), master_rng.save_state());
    }
};

inline void write_metrics_line(std::ofstream& out, std::uint64_t step, const LossBreakdown& lb,
                               double lr) {
    nlohmann::json j{{"step", step},       {"L_region", lb.region}, {"L_i2t", lb.i2t},
                     {"L_t2i", lb.t2i},    {"L_slide", lb.slide},   {"L_total", lb.total},
                     {"eta", lb.eta},      {"lr", lr}};
    out << j.dump() << "\n";
}

/// Runs stage-1 pretraining to cfg.steps. Deterministic for a fixed seed;
/// loss identities are asserted every step; checkpoints land in run_dir as
/// step_<n>.ckpt at the configured cadence plus a final one.
template <typename Real>
inline std::vector<LossBreakdown> train(Trainer<Real>& tr, const PreparedCorpus<Real>& corpus,
                                        const TrainOptions& options = {}) {
    const RunConfig& cfg = tr.cfg;
    if (corpus.pairs.empty()) throw std::invalid_argument("train: empty corpus");
    const auto decay_flags = decay_table(tr.model);
    std::vector<LossBreakdown> history;

    std::ofstream metrics_out;
    if (!options.run_dir.empty()) {
        std::filesystem::create_directories(options.run_dir);
        metrics_out.open(options.run_dir + "/metrics.jsonl",
                         tr.step == 0 ? std::ios::trunc : std::ios::app);
    }
    auto save_at = [&](std::uint64_t n) {
        if (options.run_dir.empty()) return;
        save_checkpoint(tr.snapshot(), options.run_dir + "/step_" + std::to_string(n) + ".ckpt");
    };

    if (cfg.steps == 0 && tr.step == 0) save_at(0);

    while (tr.step < static_cast<std::uint64_t>(cfg.steps)) {
        const std::uint64_t step = tr.step;
        const auto batch = batch_indices(static_cast<int>(corpus.pairs.size()), cfg.batch_size,
                                         cfg.seed, step);
        Graph<Real> g;
        auto vars = bind_stage1(g, tr.model);
        const std::uint64_t step_seed = derive_seed(cfg.seed, 0x57E9, step);
        auto losses = build_pretrain_loss(g, vars, tr.model, corpus, batch, cfg, step_seed);
        const double eta = tr.model.use_region_qformer
                               ? static_cast<double>(tr.model.align.eta.a[0])
                               : 0.0;
        LossBreakdown lb = read_losses(g, losses, eta);
        check_finite_losses<Real>(lb, step);
        assert_loss_identities(lb, losses.has_region, step);

        g.backward(losses.total);
        tr.opt.step(collect_updates(g, decay_flags));
        tr.step = step + 1;

        if (metrics_out.is_open()) write_metrics_line(metrics_out, tr.step, lb, cfg.learning_rate);
        if (options.metrics_sink) options.metrics_sink(tr.step, lb);
        history.push_back(lb);
        if (cfg.checkpoint_every > 0 &&
            tr.step % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0)
            save_at(tr.step);
    }
    save_at(tr.step);
    return history;
}

// ---------------------------------------------------------------------------
// Stage 2: supervised instruction fine-tuning of sigma + decoder (visual
// tower frozen unless cfg.unfreeze_tower).
// ---------------------------------------------------------------------------

/// Plain (no-tape) visual prefix sources for one pair under current weights.
template <typename Real>
struct PrefixSource {
    Mat<Real> v_slide;                // N_q x d
    std::vector<Mat<Real>> v_regions;  // N blocks, N_q x d
};

template <typename Real>
inline PrefixSource<Real> compute_prefix_source(Model<Real>& model,
                                                const PreparedPair<Real>& pair) {
    Graph<Real> g;
    auto qf = bind(g, model.qformer, "qformer");
    PrefixSource<Real> src;
    std::vector<typename Graph<Real>::Var> blocks;
    for (const auto& block : pair.features.region_blocks) blocks.push_back(g.constant(block));
    for (auto block : blocks) src.v_regions.push_back(g.val(qformer_forward(g, qf, block)));
    src.v_slide = g.val(slide_qformer(g, qf, g.constant(pair.features.all_patches)));
    return src;
}

struct InstructStepInfo {
    std::uint64_t step = 0;
    double lm_loss = 0;
};

/// Fine-tunes on (prompt, answer) records; answers are teacher-forced with an
/// EOS appended. Returns the per-step mean LM loss history.
template <typename Real>
inline std::vector<InstructStepInfo> train_instruct(Trainer<Real>& tr,
                                                    const PreparedCorpus<Real>& corpus,
                                                    const TrainOptions& options = {}) {
    const RunConfig& cfg = tr.cfg;
    if (!tr.model.use_region_qformer || !tr.model.use_slide_qformer)
        throw std::runtime_error(
            "train-instruct: the visual prefix requires both Q-Former pathways enabled");
    if (corpus.pairs.empty()) throw std::invalid_argument("train_instruct: empty corpus");

    // Flatten (pair, record) index list.
    std::vector<std::pair<int, int>> records;
    for (std::size_t p = 0; p < corpus.pairs.size(); ++p)
        for (std::size_t r = 0; r < corpus.pairs[p].instructions.size(); ++r)
            records.emplace_back(static_cast<int>(p), static_cast<int>(r));
    if (records.empty()) throw std::invalid_argument("train_instruct: no instruction records");

    // Frozen tower: prefix sources computed once under current weights.
    std::vector<PrefixSource<Real>> sources;
    if (!cfg.unfreeze_tower) {
        sources.reserve(corpus.pairs.size());
        for (const auto& pair : corpus.pairs)
            sources.push_back(compute_prefix_source(tr.model, pair));
    }

    const auto decay_flags = decay_table(tr.model);
    std::vector<InstructStepInfo> history;
    std::ofstream metrics_out;
    if (!options.run_dir.empty()) {
        std::filesystem::create_directories(options.run_dir);
        metrics_out.open(options.run_dir + "/metrics_instruct.jsonl",
                         tr.step == 0 ? std::ios::trunc : std::ios::app);
    }

    while (tr.step < static_cast<std::uint64_t>(cfg.steps)) {
        const std::uint64_t step = tr.step;
        const auto batch = batch_indices(static_cast<int>(records.size()), cfg.batch_size,
                                         derive_seed(cfg.seed, fnv1a64("instruct")), step);
        Graph<Real> g;
        auto dec = bind(g, tr.model.decoder, "decoder");
        QFormerVars<Real> qf;
        if (cfg.unfreeze_tower) qf = bind(g, tr.model.qformer, "qformer");

        typename Graph<Real>::Var loss_sum;
        for (std::size_t bi = 0; bi < batch.size(); ++bi) {
            const auto [pi, ri] = records[static_cast<std::size_t>(batch[bi])];
            const PreparedPair<Real>& pair = corpus.pairs[static_cast<std::size_t>(pi)];
            const InstructionRecord& rec = pair.instructions[static_cast<std::size_t>(ri)];

            typename Graph<Real>::Var prefix;
            if (cfg.unfreeze_tower) {
                std::vector<typename Graph<Real>::Var> blocks;
                for (const auto& block : pair.features.region_blocks)
                    blocks.push_back(g.constant(block));
                std::vector<typename Graph<Real>::Var> regions;
                for (auto block : blocks) regions.push_back(qformer_forward(g, qf, block));
                auto v_slide = slide_qformer(g, qf, g.constant(pair.features.all_patches));
                prefix = build_prefix(g, dec, v_slide, regions);
            } else {
                const PrefixSource<Real>& src = sources[static_cast<std::size_t>(pi)];
                std::vector<typename Graph<Real>::Var> regions;
                for (const auto& block : src.v_regions) regions.push_back(g.constant(block));
                prefix = build_prefix(g, dec, g.constant(src.v_slide), regions);
            }

            std::vector<int> prompt_ids;
            for (const auto& t : rec.prompt) prompt_ids.push_back(corpus.vocab.id(t));
            std::vector<int> target_ids;
            for (const auto& t : rec.answer) target_ids.push_back(corpus.vocab.id(t));
            target_ids.push_back(Vocabulary::EOS);

            auto lm = lm_loss(g, dec, prefix, prompt_ids, target_ids);
            loss_sum = bi == 0 ? lm.total : g.add(loss_sum, lm.total);
        }
        auto loss = g.scale(loss_sum, Real(1) / static_cast<Real>(batch.size()));
        const double loss_val = static_cast<double>(g.scalar(loss));
        if (!std::isfinite(loss_val))
            throw std::runtime_error("train-instruct: non-finite L_lm at step " +
                                     std::to_string(step));
        g.backward(loss);
        tr.opt.step(collect_updates(g, decay_flags));
        tr.step = step + 1;

        history.push_back({tr.step, loss_val});
        if (metrics_out.is_open()) {
            nlohmann::json j{{"step", tr.step}, {"L_lm", loss_val}, {"lr", cfg.learning_rate}};
            metrics_out << j.dump() << "\n";
        }
        if (options.metrics_sink) {
            LossBreakdown lb;
            lb.total = loss_val;
            options.metrics_sink(tr.step, lb);
        }
        if (cfg.checkpoint_every > 0 &&
            tr.step % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 &&
            !options.run_dir.empty())
            save_checkpoint(tr.snapshot(),
                            options.run_dir + "/step_" + std::to_string(tr.step) + ".ckpt");
    }
    if (!options.run_dir.empty())
        save_checkpoint(tr.snapshot(),
                        options.run_dir + "/step_" + std::to_string(tr.step) + ".ckpt");
    return history;
}

}  // namespace slidealign
