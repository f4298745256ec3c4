#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slidealign/decoder.hpp"
#include "slidealign/model.hpp"
#include "slidealign/trainer.hpp"

namespace slidealign {

struct GradcheckGroup {
    std::string loss;
    std::string name;
    double max_rel_err = 0;
    std::size_t count = 0;
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    double threshold = 1e-4;

    bool passed() const {
        for (const auto& g : groups)
            if (!(g.max_rel_err < threshold)) return false;
        return !groups.empty();
    }

    std::vector<std::string> failing() const {
        std::vector<std::string> out;
        for (const auto& g : groups)
            if (!(g.max_rel_err < threshold)) out.push_back(g.loss + "/" + g.name);
        return out;
    }
};

namespace detail {

/// Central differences (h = 1e-3) against tape gradients for one scalar loss.
/// `analytic` carries (name -> (master tensor, gradient)); `evaluate`
/// recomputes the loss from the current master values.
template <typename Real>
inline void gradcheck_one_loss(
    const std::string& loss_name,
    const std::vector<std::tuple<std::string, Mat<Real>*, Mat<Real>>>& analytic,
    const std::function<double()>& evaluate, GradcheckReport& report,
    const std::string& corrupt_group = "") {
    const double h = 1e-3;
    for (const auto& [name, master, grad_in] : analytic) {
        if (master->size() == 0) continue;  // zero-parameter group: excluded
        Mat<Real> grad = grad_in;
        if (name == corrupt_group && grad.size() > 0)
            grad.a[0] += static_cast<Real>(std::abs(static_cast<double>(grad.a[0])) + 1.0);
        GradcheckGroup group{loss_name, name, 0.0, master->size()};
        for (std::size_t i = 0; i < master->size(); ++i) {
            const Real saved = master->a[i];
            master->a[i] = saved + static_cast<Real>(h);
            const double f_plus = evaluate();
            master->a[i] = saved - static_cast<Real>(h);
            const double f_minus = evaluate();
            master->a[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = static_cast<double>(grad.a[i]);
            const double scale = std::max({std::abs(an), std::abs(fd), 1e-6});
            group.max_rel_err = std::max(group.max_rel_err, std::abs(an - fd) / scale);
        }
        report.groups.push_back(group);
    }
}

}  // namespace detail

/// Verifies analytic gradients of L_region, L_slide and L_lm against central
/// finite differences on a forced-tiny double-precision model (d <= 4,
/// B <= 3). `corrupt_group` is a test fixture: it perturbs that group's
/// analytic gradient so the report must flag exactly that group.
inline GradcheckReport gradcheck(std::uint64_t seed = 11, const std::string& corrupt_group = "") {
    RunConfig cfg;
    cfg.corpus.num_pairs = 3;
    cfg.corpus.regions_per_slide = 2;
    cfg.corpus.patches_per_region = 4;
    cfg.corpus.raw_dim = 4;
    cfg.corpus.num_concepts = 3;
    cfg.corpus.concepts_per_slide = 1;
    cfg.corpus.noise = 0.2;
    cfg.corpus.seed = seed;
    cfg.feature_dim = 4;
    cfg.decoder_dim = 4;
    cfg.num_queries = 2;
    cfg.num_blocks = 1;
    cfg.max_text_len = 32;
    cfg.subcaptions_per_pair = 2;
    cfg.batch_size = 3;
    cfg.seed = seed;

    const SyntheticCorpus corpus = generate_corpus(cfg.corpus);
    const Vocabulary vocab = build_vocabulary(corpus);
    Model<double> model = Model<double>::init(cfg, vocab.size());
    PreparedCorpus<double> prep = prepare_corpus(corpus, model.patch_encoder, vocab);

    const std::vector<int> batch{0, 1, 2};
    const std::uint64_t step_seed = derive_seed(seed, 0x57E9, 0);

    GradcheckReport report;

    // L_region and L_slide share one graph build; gradients read separately.
    auto pretrain_losses = [&](int which) -> double {
        Graph<double> g;
        auto vars = bind_stage1(g, model);
        auto lv = build_pretrain_loss(g, vars, model, prep, batch, cfg, step_seed);
        return g.scalar(which == 0 ? lv.region : lv.slide);
    };
    for (int which = 0; which < 2; ++which) {
        Graph<double> g;
        auto vars = bind_stage1(g, model);
        auto lv = build_pretrain_loss(g, vars, model, prep, batch, cfg, step_seed);
        g.backward(which == 0 ? lv.region : lv.slide);
        std::vector<std::tuple<std::string, Mat<double>*, Mat<double>>> analytic;
        for (const auto& b : g.params()) analytic.emplace_back(b.name, b.master, g.grad(b.var));
        detail::gradcheck_one_loss<double>(which == 0 ? "L_region" : "L_slide", analytic,
                                           [&] { return pretrain_losses(which); }, report,
                                           corrupt_group);
    }

    // L_lm with the default frozen tower: decoder + sigma groups.
    PrefixSource<double> src = compute_prefix_source(model, prep.pairs[0]);
    const InstructionRecord& rec = prep.pairs[0].instructions[0];
    std::vector<int> prompt_ids;
    for (const auto& t : rec.prompt) prompt_ids.push_back(vocab.id(t));
    std::vector<int> target_ids;
    for (const auto& t : rec.answer) target_ids.push_back(vocab.id(t));
    target_ids.push_back(Vocabulary::EOS);

    auto lm_value = [&]() -> double {
        Graph<double> g;
        auto dec = bind(g, model.decoder, "decoder");
        std::vector<Graph<double>::Var> regions;
        for (const auto& block : src.v_regions) regions.push_back(g.constant(block));
        auto prefix = build_prefix(g, dec, g.constant(src.v_slide), regions);
        return g.scalar(lm_loss(g, dec, prefix, prompt_ids, target_ids).total);
    };
    {
        Graph<double> g;
        auto dec = bind(g, model.decoder, "decoder");
        std::vector<Graph<double>::Var> regions;
        for (const auto& block : src.v_regions) regions.push_back(g.constant(block));
        auto prefix = build_prefix(g, dec, g.constant(src.v_slide), regions);
        auto lm = lm_loss(g, dec, prefix, prompt_ids, target_ids);
        g.backward(lm.total);
        std::vector<std::tuple<std::string, Mat<double>*, Mat<double>>> analytic;
        for (const auto& b : g.params()) analytic.emplace_back(b.name, b.master, g.grad(b.var));
        detail::gradcheck_one_loss<double>("L_lm", analytic, lm_value, report, corrupt_group);
    }

    return report;
}

}  // namespace slidealign
