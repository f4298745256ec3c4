#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slidealign/io.hpp"
#include "slidealign/mat.hpp"
#include "slidealign/rng.hpp"
#include "slidealign/textproc.hpp"
#include "slidealign/vocab.hpp"

namespace slidealign {

constexpr int kBackground = -1;

/// A plantable visual concept: a unit-norm raw-feature signature plus the one
/// caption sentence that names it.
struct Concept {
    int id = 0;
    std::string name;
    std::vector<float> signature;  // raw_dim, unit norm
    std::string sentence;          // single clause ending in " .", contains name
};

struct SyntheticSlide {
    std::string slide_id;
    int extent_w = 0, extent_h = 0;  // in patch units
    int region_side = 0;             // r; M = r*r
    int grid_w = 0, grid_h = 0;      // region grid; N = grid_w*grid_h
    std::vector<int> planted_map;    // region index -> concept id, or kBackground
    MatF patches;                    // (extent_h*extent_w) x raw_dim, row-major over (y, x)

    int num_regions() const { return grid_w * grid_h; }
    int patches_per_region() const { return region_side * region_side; }
};

struct InstructionRecord {
    std::vector<std::string> prompt;
    std::vector<std::string> answer;
};

struct SlideCaptionPair {
    SyntheticSlide slide;
    std::vector<std::string> caption;  // sentences; one per planted region + summary
    std::vector<InstructionRecord> instructions;
};

struct CorpusConfig {
    int num_pairs = 320;
    int regions_per_slide = 4;
    int patches_per_region = 16;
    int raw_dim = 16;
    int num_concepts = 24;
    int concepts_per_slide = 2;
    double noise = 0.25;
    std::uint64_t seed = 1;

    void validate() const {
        auto positive = [](long long v, const char* name) {
            if (v <= 0)
                throw std::invalid_argument(std::string("CorpusConfig: ") + name +
                                            " must be positive, got " + std::to_string(v));
        };
        positive(num_pairs, "num_pairs");
        positive(regions_per_slide, "regions_per_slide");
        positive(patches_per_region, "patches_per_region");
        positive(raw_dim, "raw_dim");
        positive(num_concepts, "num_concepts");
        positive(concepts_per_slide, "concepts_per_slide");
        if (noise < 0.0)
            throw std::invalid_argument("CorpusConfig: noise must be non-negative, got " +
                                        std::to_string(noise));
        const int side = static_cast<int>(std::lround(std::sqrt(double(patches_per_region))));
        if (side * side != patches_per_region)
            throw std::invalid_argument(
                "CorpusConfig: patches_per_region must be a perfect square (region side r, M = "
                "r*r), got " +
                std::to_string(patches_per_region));
        if (concepts_per_slide > std::min(regions_per_slide, num_concepts))
            throw std::invalid_argument(
                "CorpusConfig: concepts_per_slide (" + std::to_string(concepts_per_slide) +
                ") must be <= min(regions_per_slide, num_concepts) (" +
                std::to_string(std::min(regions_per_slide, num_concepts)) + ")");
    }

    int region_side() const {
        return static_cast<int>(std::lround(std::sqrt(double(patches_per_region))));
    }
};

struct SyntheticCorpus {
    CorpusConfig config;
    std::vector<Concept> concepts;
    std::vector<SlideCaptionPair> pairs;
};

namespace detail {

inline const std::vector<std::string>& concept_bases() {
    static const std::vector<std::string> bases = {
        "necrosis",  "tumor",    "stroma",        "fibrosis",
        "inflammation", "mucin", "calcification", "hemorrhage"};
    return bases;
}

inline const std::vector<std::string>& sentence_patterns() {
    static const std::vector<std::string> patterns = {
        "this region shows {} .",      "there is focal {} here .",
        "the field contains {} .",     "scattered {} is seen .",
        "prominent {} is noted .",     "a zone of {} is present ."};
    return patterns;
}

inline std::string instantiate(const std::string& pattern, const std::string& name) {
    const auto pos = pattern.find("{}");
    if (pos == std::string::npos) throw std::logic_error("sentence pattern without placeholder");
    return pattern.substr(0, pos) + name + pattern.substr(pos + 2);
}

/// Region grid dims for N regions: widest divisor pair with grid_w <= grid_h.
inline std::pair<int, int> region_grid_dims(int n) {
    int best = 1;
    for (int d = 1; d * d <= n; ++d)
        if (n % d == 0) best = d;
    return {best, n / best};
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

/// Samples unit signatures on the sphere, rejecting any candidate whose
/// cosine with an accepted signature reaches 0.5.
inline std::vector<Concept> make_concepts(int num_concepts, int raw_dim, Rng& rng) {
    std::vector<Concept> out;
    out.reserve(static_cast<std::size_t>(num_concepts));
    const auto& bases = detail::concept_bases();
    const auto& patterns = detail::sentence_patterns();
    for (int c = 0; c < num_concepts; ++c) {
        Concept k;
        k.id = c;
        k.name = bases[static_cast<std::size_t>(c) % bases.size()] + "_" + std::to_string(c);
        k.sentence = detail::instantiate(patterns[static_cast<std::size_t>(c) % patterns.size()],
                                         k.name);
        bool accepted = false;
        for (int attempt = 0; attempt < 100000 && !accepted; ++attempt) {
            std::vector<float> sig(static_cast<std::size_t>(raw_dim));
            double norm = 0;
            for (auto& v : sig) {
                v = static_cast<float>(rng.normal());
                norm += double(v) * v;
            }
            norm = std::sqrt(norm);
            if (norm == 0) continue;
            for (auto& v : sig) v = static_cast<float>(v / norm);
            accepted = true;
            for (const auto& prev : out)
                if (detail::cosine(sig, prev.signature) >= 0.5) {
                    accepted = false;
                    break;
                }
            if (accepted) k.signature = std::move(sig);
        }
        if (!accepted)
            throw std::runtime_error(
                "make_concepts: could not sample " + std::to_string(num_concepts) +
                " signatures with pairwise cosine < 0.5 in dimension " + std::to_string(raw_dim));
        out.push_back(std::move(k));
    }
    return out;
}

inline std::string summary_sentence(const std::vector<std::string>& names) {
    std::string s = "overall the slide shows";
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) s += " and";
        s += " " + names[i];
    }
    s += " .";
    return s;
}

inline SyntheticCorpus generate_corpus(const CorpusConfig& config) {
    config.validate();
    SyntheticCorpus corpus;
    corpus.config = config;

    Rng concept_rng(derive_seed(config.seed, 0xC0DE));
    corpus.concepts = make_concepts(config.num_concepts, config.raw_dim, concept_rng);

    const int r = config.region_side();
    const auto [gw, gh] = detail::region_grid_dims(config.regions_per_slide);
    const int n_regions = config.regions_per_slide;
    const double bg_scale = 1.0 / std::sqrt(double(config.raw_dim));

    corpus.pairs.reserve(static_cast<std::size_t>(config.num_pairs));
    for (int p = 0; p < config.num_pairs; ++p) {
        Rng rng(derive_seed(config.seed, 0x5A1D, static_cast<std::uint64_t>(p)));

        SlideCaptionPair pair;
        SyntheticSlide& slide = pair.slide;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "slide_%06d", p);
        slide.slide_id = idbuf;
        slide.region_side = r;
        slide.grid_w = gw;
        slide.grid_h = gh;
        slide.extent_w = gw * r;
        slide.extent_h = gh * r;
        slide.planted_map.assign(static_cast<std::size_t>(n_regions), kBackground);

        // Distinct concepts onto distinct regions; both drawn by shuffle so
        // corpus-level usage is uniform.
        std::vector<int> concept_ids(static_cast<std::size_t>(config.num_concepts));
        for (int i = 0; i < config.num_concepts; ++i) concept_ids[static_cast<std::size_t>(i)] = i;
        rng.shuffle(concept_ids);
        std::vector<int> region_ids(static_cast<std::size_t>(n_regions));
        for (int i = 0; i < n_regions; ++i) region_ids[static_cast<std::size_t>(i)] = i;
        rng.shuffle(region_ids);
        std::vector<int> chosen_regions(region_ids.begin(),
                                        region_ids.begin() + config.concepts_per_slide);
        std::sort(chosen_regions.begin(), chosen_regions.end());
        for (int i = 0; i < config.concepts_per_slide; ++i)
            slide.planted_map[static_cast<std::size_t>(chosen_regions[static_cast<std::size_t>(i)])] =
                concept_ids[static_cast<std::size_t>(i)];

        // Patch grid: concept regions carry noisy copies of the signature,
        // background regions draw from a fixed isotropic normal.
        slide.patches = MatF(slide.extent_h * slide.extent_w, config.raw_dim);
        for (int y = 0; y < slide.extent_h; ++y) {
            for (int x = 0; x < slide.extent_w; ++x) {
                const int region = (y / r) * gw + (x / r);
                const int cid = slide.planted_map[static_cast<std::size_t>(region)];
                float* row = slide.patches.row(y * slide.extent_w + x);
                if (cid == kBackground) {
                    for (int j = 0; j < config.raw_dim; ++j)
                        row[j] = static_cast<float>(rng.normal() * bg_scale);
                } else {
                    const auto& sig = corpus.concepts[static_cast<std::size_t>(cid)].signature;
                    for (int j = 0; j < config.raw_dim; ++j)
                        row[j] = sig[static_cast<std::size_t>(j)] +
                                 static_cast<float>(rng.normal() * config.noise);
                }
            }
        }

        // Caption: one sentence per planted region in region-index order,
        // then the summary sentence listing every planted name.
        std::vector<std::string> names;
        for (int region = 0; region < n_regions; ++region) {
            const int cid = slide.planted_map[static_cast<std::size_t>(region)];
            if (cid == kBackground) continue;
            const Concept& k = corpus.concepts[static_cast<std::size_t>(cid)];
            pair.caption.push_back(k.sentence);
            names.push_back(k.name);
        }
        pair.caption.push_back(summary_sentence(names));

        InstructionRecord qa;
        qa.prompt = {"what", "concepts", "are", "present", "?"};
        qa.answer = names;
        pair.instructions.push_back(std::move(qa));

        InstructionRecord describe;
        describe.prompt = {"describe", "the", "slide", "."};
        describe.answer = split_whitespace(pair.caption.back());
        pair.instructions.push_back(std::move(describe));

        corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
}

/// Rounded val/test sizes, remainder to train; pair order shuffled
/// deterministically from the corpus seed before slicing.
inline std::array<SyntheticCorpus, 3> split_corpus(const SyntheticCorpus& corpus, double f_train,
                                                   double f_val, double f_test) {
    if (!(f_train > 0.0) || !(f_val > 0.0) || !(f_test > 0.0))
        throw std::invalid_argument("split_corpus: all fractions must be positive");
    if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
        throw std::invalid_argument("split_corpus: fractions must sum to 1");
    const int n = static_cast<int>(corpus.pairs.size());
    int n_val = static_cast<int>(std::llround(n * f_val));
    int n_test = static_cast<int>(std::llround(n * f_test));
    int n_train = n - n_val - n_test;
    if (n_train < 0)
        throw std::invalid_argument("split_corpus: rounded val/test sizes exceed corpus size");

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(corpus.config.seed, 0x59171));
    rng.shuffle(order);

    std::array<SyntheticCorpus, 3> out;
    for (auto& c : out) {
        c.config = corpus.config;
        c.concepts = corpus.concepts;
    }
    for (int i = 0; i < n; ++i) {
        const SlideCaptionPair& p = corpus.pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        if (i < n_train)
            out[0].pairs.push_back(p);
        else if (i < n_train + n_val)
            out[1].pairs.push_back(p);
        else
            out[2].pairs.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: line-delimited JSON records; field names are fixed in
// FORMATS.md. First line is the header record, then one pair record per line.
// ---------------------------------------------------------------------------

inline std::string corpus_to_jsonl(const SyntheticCorpus& corpus) {
    using nlohmann::json;
    std::string out;

    json header;
    header["record"] = "header";
    header["version"] = 1;
    header["num_pairs"] = corpus.pairs.size();
    header["regions_per_slide"] = corpus.config.regions_per_slide;
    header["patches_per_region"] = corpus.config.patches_per_region;
    header["raw_dim"] = corpus.config.raw_dim;
    header["num_concepts"] = corpus.config.num_concepts;
    header["concepts_per_slide"] = corpus.config.concepts_per_slide;
    header["noise"] = corpus.config.noise;
    header["seed"] = corpus.config.seed;
    json jconcepts = json::array();
    for (const auto& k : corpus.concepts) {
        json jk;
        jk["id"] = k.id;
        jk["name"] = k.name;
        jk["sentence"] = k.sentence;
        jk["signature_b64"] =
            base64_encode(k.signature.data(), k.signature.size() * sizeof(float));
        jconcepts.push_back(std::move(jk));
    }
    header["concepts"] = std::move(jconcepts);
    out += header.dump();
    out += '\n';

    for (const auto& pair : corpus.pairs) {
        const SyntheticSlide& s = pair.slide;
        json j;
        j["record"] = "pair";
        j["slide_id"] = s.slide_id;
        j["extent"] = {s.extent_w, s.extent_h};
        j["region_side"] = s.region_side;
        j["region_grid"] = {s.grid_w, s.grid_h};
        j["planted_map"] = s.planted_map;
        j["patches_b64"] = base64_encode(s.patches.a.data(), s.patches.a.size() * sizeof(float));
        j["caption"] = pair.caption;
        json jinst = json::array();
        for (const auto& rec : pair.instructions) {
            json jr;
            jr["prompt"] = rec.prompt;
            jr["answer"] = rec.answer;
            jinst.push_back(std::move(jr));
        }
        j["instructions"] = std::move(jinst);
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline SyntheticCorpus corpus_from_jsonl(const std::string& text) {
    using nlohmann::json;
    SyntheticCorpus corpus;
    std::istringstream in(text);
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        const std::string record = j.at("record").get<std::string>();
        if (record == "header") {
            corpus.config.regions_per_slide = j.at("regions_per_slide").get<int>();
            corpus.config.patches_per_region = j.at("patches_per_region").get<int>();
            corpus.config.raw_dim = j.at("raw_dim").get<int>();
            corpus.config.num_concepts = j.at("num_concepts").get<int>();
            corpus.config.concepts_per_slide = j.at("concepts_per_slide").get<int>();
            corpus.config.noise = j.at("noise").get<double>();
            corpus.config.seed = j.at("seed").get<std::uint64_t>();
            corpus.config.num_pairs = j.at("num_pairs").get<int>();
            for (const auto& jk : j.at("concepts")) {
                Concept k;
                k.id = jk.at("id").get<int>();
                k.name = jk.at("name").get<std::string>();
                k.sentence = jk.at("sentence").get<std::string>();
                const auto bytes = base64_decode(jk.at("signature_b64").get<std::string>());
                if (bytes.size() % sizeof(float) != 0)
                    throw std::runtime_error("corpus_from_jsonl: bad signature payload");
                k.signature.resize(bytes.size() / sizeof(float));
                std::memcpy(k.signature.data(), bytes.data(), bytes.size());
                corpus.concepts.push_back(std::move(k));
            }
            have_header = true;
        } else if (record == "pair") {
            if (!have_header) throw std::runtime_error("corpus_from_jsonl: pair before header");
            SlideCaptionPair pair;
            SyntheticSlide& s = pair.slide;
            s.slide_id = j.at("slide_id").get<std::string>();
            s.extent_w = j.at("extent").at(0).get<int>();
            s.extent_h = j.at("extent").at(1).get<int>();
            s.region_side = j.at("region_side").get<int>();
            s.grid_w = j.at("region_grid").at(0).get<int>();
            s.grid_h = j.at("region_grid").at(1).get<int>();
            s.planted_map = j.at("planted_map").get<std::vector<int>>();
            const auto bytes = base64_decode(j.at("patches_b64").get<std::string>());
            const std::size_t expect = static_cast<std::size_t>(s.extent_w) * s.extent_h *
                                       corpus.config.raw_dim * sizeof(float);
            if (bytes.size() != expect)
                throw std::runtime_error("corpus_from_jsonl: patch payload size mismatch for " +
                                         s.slide_id);
            s.patches = MatF(s.extent_w * s.extent_h, corpus.config.raw_dim);
            std::memcpy(s.patches.a.data(), bytes.data(), bytes.size());
            pair.caption = j.at("caption").get<std::vector<std::string>>();
            for (const auto& jr : j.at("instructions")) {
                InstructionRecord rec;
                rec.prompt = jr.at("prompt").get<std::vector<std::string>>();
                rec.answer = jr.at("answer").get<std::vector<std::string>>();
                pair.instructions.push_back(std::move(rec));
            }
            corpus.pairs.push_back(std::move(pair));
        } else {
            throw std::runtime_error("corpus_from_jsonl: unknown record type '" + record + "'");
        }
    }
    if (!have_header) throw std::runtime_error("corpus_from_jsonl: missing header record");
    return corpus;
}

inline void save_corpus(const SyntheticCorpus& corpus, const std::string& path) {
    write_file(path, corpus_to_jsonl(corpus));
}

inline SyntheticCorpus load_corpus(const std::string& path) {
    return corpus_from_jsonl(read_file(path));
}

/// Deterministic vocabulary over every caption/instruction token (sorted
/// insertion, so identical corpora give identical id assignments).
inline Vocabulary build_vocabulary(const SyntheticCorpus& corpus) {
    std::set<std::string> tokens;
    for (const auto& pair : corpus.pairs) {
        for (const auto& sentence : pair.caption)
            for (const auto& t : split_whitespace(sentence)) tokens.insert(t);
        for (const auto& rec : pair.instructions) {
            for (const auto& t : rec.prompt) tokens.insert(t);
            for (const auto& t : rec.answer) tokens.insert(t);
        }
    }
    // Template words and concept names, so prompts built from the concept
    // table (zero-shot classification) are always in-vocabulary.
    for (const auto& k : corpus.concepts) {
        tokens.insert(k.name);
        for (const auto& t : split_whitespace(k.sentence)) tokens.insert(t);
    }
    for (const auto& t : split_whitespace(summary_sentence({}))) tokens.insert(t);
    return Vocabulary::from_tokens(tokens);
}

}  // namespace slidealign
