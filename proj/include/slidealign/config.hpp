#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "slidealign/corpus.hpp"
#include "slidealign/io.hpp"

namespace slidealign {

/// Full run configuration. Struct defaults carry the published
/// hyperparameters (N_q=8, K=8, tau=0.1, eta_init=log(1/0.07)); desk_config()
/// is the fast preset the CLI and end-to-end tests use.
struct RunConfig {
    CorpusConfig corpus;

    int feature_dim = 32;   // d
    int decoder_dim = 32;   // d_dec
    int num_queries = 8;    // N_q
    int num_blocks = 2;     // depth of every transformer stack
    int max_text_len = 64;

    int subcaptions_per_pair = 8;  // K
    double p_keep = 0.5;
    double tau = 0.1;
    double eta_init = 2.6592600369327783;  // log(1/0.07)

    double learning_rate = 3e-4;
    int steps = 800;
    int batch_size = 16;
    std::uint64_t seed = 7;
    int checkpoint_every = 0;  // 0: final checkpoint only

    bool use_region_qformer = true;
    bool use_slide_qformer = true;
    bool use_text_region_attention = true;
    bool unfreeze_tower = false;  // stage-2: train the visual tower too

    std::string corpus_path;
    std::string run_dir;

    void validate() const {
        corpus.validate();
        auto positive = [](double v, const char* name) {
            if (!(v > 0))
                throw std::invalid_argument(std::string("RunConfig: ") + name +
                                            " must be positive");
        };
        positive(feature_dim, "feature_dim");
        positive(decoder_dim, "decoder_dim");
        positive(num_queries, "num_queries");
        positive(num_blocks, "num_blocks");
        positive(max_text_len, "max_text_len");
        positive(subcaptions_per_pair, "subcaptions_per_pair");
        positive(tau, "tau");
        positive(learning_rate, "learning_rate");
        positive(batch_size, "batch_size");
        if (steps < 0) throw std::invalid_argument("RunConfig: steps must be >= 0");
        if (!(p_keep > 0.0) || p_keep > 1.0)
            throw std::invalid_argument("RunConfig: p_keep must be in (0, 1]");
        if (!std::isfinite(eta_init)) throw std::invalid_argument("RunConfig: eta_init not finite");
        if (checkpoint_every < 0)
            throw std::invalid_argument("RunConfig: checkpoint_every must be >= 0");
        if (!use_region_qformer && !use_slide_qformer)
            throw std::invalid_argument(
                "RunConfig: region and slide Q-Former paths cannot both be disabled");
    }
};

inline RunConfig desk_config() {
    RunConfig cfg;
    cfg.corpus.num_pairs = 320;
    cfg.corpus.regions_per_slide = 4;
    cfg.corpus.patches_per_region = 16;
    cfg.corpus.raw_dim = 16;
    cfg.corpus.num_concepts = 24;
    cfg.corpus.concepts_per_slide = 2;
    cfg.feature_dim = 32;
    cfg.decoder_dim = 32;
    cfg.num_queries = 4;  // paper default 8 is one flag away
    cfg.batch_size = 16;
    return cfg;
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{
        {"corpus",
         {{"num_pairs", c.corpus.num_pairs},
          {"regions_per_slide", c.corpus.regions_per_slide},
          {"patches_per_region", c.corpus.patches_per_region},
          {"raw_dim", c.corpus.raw_dim},
          {"num_concepts", c.corpus.num_concepts},
          {"concepts_per_slide", c.corpus.concepts_per_slide},
          {"noise", c.corpus.noise},
          {"seed", c.corpus.seed}}},
        {"feature_dim", c.feature_dim},
        {"decoder_dim", c.decoder_dim},
        {"num_queries", c.num_queries},
        {"num_blocks", c.num_blocks},
        {"max_text_len", c.max_text_len},
        {"subcaptions_per_pair", c.subcaptions_per_pair},
        {"p_keep", c.p_keep},
        {"tau", c.tau},
        {"eta_init", c.eta_init},
        {"learning_rate", c.learning_rate},
        {"steps", c.steps},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"checkpoint_every", c.checkpoint_every},
        {"use_region_qformer", c.use_region_qformer},
        {"use_slide_qformer", c.use_slide_qformer},
        {"use_text_region_attention", c.use_text_region_attention},
        {"unfreeze_tower", c.unfreeze_tower},
        {"corpus_path", c.corpus_path},
        {"run_dir", c.run_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    const auto& jc = j.at("corpus");
    jc.at("num_pairs").get_to(c.corpus.num_pairs);
    jc.at("regions_per_slide").get_to(c.corpus.regions_per_slide);
    jc.at("patches_per_region").get_to(c.corpus.patches_per_region);
    jc.at("raw_dim").get_to(c.corpus.raw_dim);
    jc.at("num_concepts").get_to(c.corpus.num_concepts);
    jc.at("concepts_per_slide").get_to(c.corpus.concepts_per_slide);
    jc.at("noise").get_to(c.corpus.noise);
    jc.at("seed").get_to(c.corpus.seed);
    j.at("feature_dim").get_to(c.feature_dim);
    j.at("decoder_dim").get_to(c.decoder_dim);
    j.at("num_queries").get_to(c.num_queries);
    j.at("num_blocks").get_to(c.num_blocks);
    j.at("max_text_len").get_to(c.max_text_len);
    j.at("subcaptions_per_pair").get_to(c.subcaptions_per_pair);
    j.at("p_keep").get_to(c.p_keep);
    j.at("tau").get_to(c.tau);
    j.at("eta_init").get_to(c.eta_init);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("steps").get_to(c.steps);
    j.at("batch_size").get_to(c.batch_size);
    j.at("seed").get_to(c.seed);
    j.at("checkpoint_every").get_to(c.checkpoint_every);
    j.at("use_region_qformer").get_to(c.use_region_qformer);
    j.at("use_slide_qformer").get_to(c.use_slide_qformer);
    j.at("use_text_region_attention").get_to(c.use_text_region_attention);
    j.at("unfreeze_tower").get_to(c.unfreeze_tower);
    j.at("corpus_path").get_to(c.corpus_path);
    j.at("run_dir").get_to(c.run_dir);
}

/// Canonical serialization (nlohmann objects keep keys sorted) hashed with
/// FNV-1a; changes iff any field changes.
inline std::uint64_t config_hash(const RunConfig& c) {
    nlohmann::json j = c;
    return fnv1a64(j.dump());
}

inline void save_config(const RunConfig& c, const std::string& path) {
    nlohmann::json j = c;
    write_file(path, j.dump(2) + "\n");
}

inline RunConfig load_config(const std::string& path) {
    return nlohmann::json::parse(read_file(path)).get<RunConfig>();
}

/// Ablation switch: turns one pathway off (Tables' "w/o ..." rows).
inline RunConfig ablate(RunConfig cfg, const std::string& flag) {
    if (flag == "region_qformer")
        cfg.use_region_qformer = false;
    else if (flag == "slide_qformer")
        cfg.use_slide_qformer = false;
    else if (flag == "text_region_attention")
        cfg.use_text_region_attention = false;
    else
        throw std::invalid_argument(
            "ablate: unknown flag '" + flag +
            "' (expected region_qformer | slide_qformer | text_region_attention)");
    return cfg;
}

}  // namespace slidealign
