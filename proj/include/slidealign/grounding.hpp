#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slidealign/io.hpp"
#include "slidealign/mat.hpp"

namespace slidealign {

/// Per-region attention mass for one subcaption; non-negative, sums to 1.
struct RegionScoreMap {
    std::string slide_id;
    int grid_w = 0, grid_h = 0;
    std::vector<double> scores;  // region-index order (row-major over the grid)

    int num_regions() const { return static_cast<int>(scores.size()); }
};

/// Softmax attention row of the text-region attention layer for a single
/// text query (L=1), with each region's score the sum over its N_q rows.
template <typename Real>
inline RegionScoreMap region_attention_scores(const Mat<Real>& text_embed,
                                              const Mat<Real>& v_reg, const Mat<Real>& wq,
                                              const Mat<Real>& wk, int num_regions,
                                              int num_queries) {
    const int d = text_embed.cols;
    if (text_embed.rows != 1)
        throw std::invalid_argument("region_attention_scores: expected a single text embedding");
    if (v_reg.cols != d || wq.rows != d || wq.cols != d || wk.rows != d || wk.cols != d)
        throw std::invalid_argument("region_attention_scores: dim mismatch");
    if (v_reg.rows != num_regions * num_queries)
        throw std::invalid_argument("region_attention_scores: v_reg rows " +
                                    std::to_string(v_reg.rows) + " != N*N_q = " +
                                    std::to_string(num_regions * num_queries));

    std::vector<double> q(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        double s = 0;
        for (int j = 0; j < d; ++j) s += double(wq(i, j)) * text_embed(0, j);
        q[static_cast<std::size_t>(i)] = s;
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    std::vector<double> logits(static_cast<std::size_t>(v_reg.rows));
    for (int r = 0; r < v_reg.rows; ++r) {
        double dot = 0;
        for (int i = 0; i < d; ++i) {
            double k = 0;
            for (int j = 0; j < d; ++j) k += double(wk(i, j)) * v_reg(r, j);
            dot += q[static_cast<std::size_t>(i)] * k;
        }
        logits[static_cast<std::size_t>(r)] = dot * inv_sqrt_d;
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    for (auto& v : logits) {
        v = std::exp(v - mx);
        sum += v;
    }
    RegionScoreMap map;
    map.scores.assign(static_cast<std::size_t>(num_regions), 0.0);
    for (int r = 0; r < v_reg.rows; ++r)
        map.scores[static_cast<std::size_t>(r / num_queries)] +=
            logits[static_cast<std::size_t>(r)] / sum;
    return map;
}

/// True iff the planted region holds at least margin_factor times the mass a
/// uniform map would give it (default margin 2).
inline bool grounding_hit(const RegionScoreMap& map, int planted_region,
                          double margin_factor = 2.0) {
    if (planted_region < 0 || planted_region >= map.num_regions())
        throw std::invalid_argument("grounding_hit: planted region out of range");
    const double threshold = margin_factor / map.num_regions();
    return map.scores[static_cast<std::size_t>(planted_region)] >= threshold;
}

// ---------------------------------------------------------------------------
// Heatmap export: plain-text score matrix plus an ASCII portable graymap.
// ---------------------------------------------------------------------------

inline std::string heatmap_text(const RegionScoreMap& map) {
    std::string out = std::to_string(map.grid_w) + " " + std::to_string(map.grid_h) + "\n";
    char buf[40];
    for (int gy = 0; gy < map.grid_h; ++gy) {
        for (int gx = 0; gx < map.grid_w; ++gx) {
            std::snprintf(buf, sizeof buf, "%.12e", map.scores[static_cast<std::size_t>(gy * map.grid_w + gx)]);
            out += buf;
            out += (gx + 1 == map.grid_w) ? '\n' : ' ';
        }
    }
    return out;
}

inline RegionScoreMap parse_heatmap_text(const std::string& text) {
    std::istringstream in(text);
    RegionScoreMap map;
    if (!(in >> map.grid_w >> map.grid_h))
        throw std::runtime_error("parse_heatmap_text: missing grid header");
    map.scores.resize(static_cast<std::size_t>(map.grid_w) * map.grid_h);
    for (auto& v : map.scores)
        if (!(in >> v)) throw std::runtime_error("parse_heatmap_text: truncated score matrix");
    return map;
}

/// 8-bit grayscale PGM (ASCII "P2"); score 1.0 maps to 255, round half up.
inline std::string heatmap_pgm(const RegionScoreMap& map) {
    std::string out = "P2\n" + std::to_string(map.grid_w) + " " + std::to_string(map.grid_h) +
                      "\n255\n";
    for (int gy = 0; gy < map.grid_h; ++gy) {
        for (int gx = 0; gx < map.grid_w; ++gx) {
            const double s = map.scores[static_cast<std::size_t>(gy * map.grid_w + gx)];
            const int pixel = static_cast<int>(std::floor(s * 255.0 + 0.5));
            out += std::to_string(std::min(255, std::max(0, pixel)));
            out += (gx + 1 == map.grid_w) ? '\n' : ' ';
        }
    }
    return out;
}

/// Writes <stem>.txt and <stem>.pgm; I/O failures surface the path.
inline void export_heatmap(const RegionScoreMap& map, const std::string& stem) {
    write_file(stem + ".txt", heatmap_text(map));
    write_file(stem + ".pgm", heatmap_pgm(map));
}

}  // namespace slidealign
