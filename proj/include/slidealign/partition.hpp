#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slidealign/corpus.hpp"
#include "slidealign/io.hpp"
#include "slidealign/mat.hpp"
#include "slidealign/rng.hpp"

namespace slidealign {

struct PartitionSpec {
    int extent_w = 0;     // slide width in patch units
    int extent_h = 0;     // slide height in patch units
    int region_side = 1;  // r; each region is r x r patches

    void validate() const {
        if (region_side < 1)
            throw std::invalid_argument("PartitionSpec: region_side must be >= 1");
        if (extent_w < region_side || extent_h < region_side)
            throw std::invalid_argument("slide smaller than region");
    }
};

struct PatchCoord {
    int x = 0, y = 0;
};

struct RegionLayout {
    int grid_x = 0, grid_y = 0;       // region position on the region grid
    std::vector<PatchCoord> patches;  // r*r coordinates, row-major within the region
};

struct SlidePartition {
    int grid_w = 0, grid_h = 0;
    std::vector<RegionLayout> regions;  // row-major over the region grid

    int num_regions() const { return static_cast<int>(regions.size()); }
};

/// Two-stage partition: regions tile the largest r-multiple sub-extent
/// (partial border strips are dropped), each region lists its r*r patch
/// coordinates in row-major order.
inline SlidePartition partition_slide(const PartitionSpec& spec) {
    spec.validate();
    const int r = spec.region_side;
    SlidePartition part;
    part.grid_w = spec.extent_w / r;
    part.grid_h = spec.extent_h / r;
    part.regions.reserve(static_cast<std::size_t>(part.grid_w) * part.grid_h);
    for (int gy = 0; gy < part.grid_h; ++gy) {
        for (int gx = 0; gx < part.grid_w; ++gx) {
            RegionLayout region;
            region.grid_x = gx;
            region.grid_y = gy;
            region.patches.reserve(static_cast<std::size_t>(r) * r);
            for (int py = 0; py < r; ++py)
                for (int px = 0; px < r; ++px)
                    region.patches.push_back(PatchCoord{gx * r + px, gy * r + py});
            part.regions.push_back(std::move(region));
        }
    }
    return part;
}

/// Frozen pluggable patch encoder: fixed random linear map followed by tanh.
template <typename Real>
struct PatchEncoder {
    Mat<Real> weight;  // d x d_raw

    static PatchEncoder init(int feature_dim, int raw_dim, Rng& rng) {
        PatchEncoder enc;
        enc.weight = Mat<Real>(feature_dim, raw_dim);
        const double scale = 1.0 / std::sqrt(double(raw_dim));
        for (auto& w : enc.weight.a) w = static_cast<Real>(rng.normal() * scale);
        return enc;
    }

    int feature_dim() const { return weight.rows; }
    int raw_dim() const { return weight.cols; }

    void encode_row(const Real* raw, Real* out) const {
        for (int i = 0; i < weight.rows; ++i) {
            Real s = 0;
            const Real* wrow = weight.row(i);
            for (int j = 0; j < weight.cols; ++j) s += wrow[j] * raw[j];
            out[i] = std::tanh(s);
        }
    }
};

/// Encodes the M raw patch rows of one region into an M x d feature block.
template <typename Real>
inline Mat<Real> encode_region(const Mat<Real>& raw_patches, const PatchEncoder<Real>& encoder) {
    if (raw_patches.cols != encoder.raw_dim())
        throw std::invalid_argument("encode_region: raw dim mismatch, got " +
                                    std::to_string(raw_patches.cols) + " expected " +
                                    std::to_string(encoder.raw_dim()));
    Mat<Real> out(raw_patches.rows, encoder.feature_dim());
    for (int i = 0; i < raw_patches.rows; ++i) encoder.encode_row(raw_patches.row(i), out.row(i));
    return out;
}

/// Stacks region blocks (region-grid order) into the MN x d slide matrix.
template <typename Real>
inline Mat<Real> assemble_slide_features(const std::vector<Mat<Real>>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("assemble_slide_features: no blocks");
    const int m = blocks.front().rows;
    const int d = blocks.front().cols;
    for (const auto& b : blocks)
        if (b.rows != m || b.cols != d)
            throw std::invalid_argument("assemble_slide_features: ragged blocks " +
                                        shape_str(b.rows, b.cols) + " vs " + shape_str(m, d));
    Mat<Real> out(m * static_cast<int>(blocks.size()), d);
    int r = 0;
    for (const auto& b : blocks) {
        std::memcpy(out.row(r), b.a.data(), b.a.size() * sizeof(Real));
        r += b.rows;
    }
    return out;
}

/// Gathers one region's raw patch rows from a slide's flat patch grid.
inline MatF region_raw_patches(const SyntheticSlide& slide, const RegionLayout& region) {
    MatF out(static_cast<int>(region.patches.size()), slide.patches.cols);
    for (std::size_t k = 0; k < region.patches.size(); ++k) {
        const PatchCoord& pc = region.patches[k];
        if (pc.x < 0 || pc.x >= slide.extent_w || pc.y < 0 || pc.y >= slide.extent_h)
            throw std::invalid_argument("region_raw_patches: coordinate outside slide extent");
        const float* src = slide.patches.row(pc.y * slide.extent_w + pc.x);
        std::memcpy(out.row(static_cast<int>(k)), src, sizeof(float) * slide.patches.cols);
    }
    return out;
}

/// Per-slide encoded features: the region blocks plus the assembled matrix.
template <typename Real>
struct SlideFeatures {
    std::vector<Mat<Real>> region_blocks;  // N blocks, M x d each
    Mat<Real> all_patches;                 // MN x d
    int grid_w = 0, grid_h = 0;
};

template <typename Real>
inline SlideFeatures<Real> extract_slide_features(const SyntheticSlide& slide,
                                                  const PatchEncoder<Real>& encoder) {
    PartitionSpec spec{slide.extent_w, slide.extent_h, slide.region_side};
    const SlidePartition part = partition_slide(spec);
    SlideFeatures<Real> feats;
    feats.grid_w = part.grid_w;
    feats.grid_h = part.grid_h;
    feats.region_blocks.reserve(part.regions.size());
    for (const auto& region : part.regions) {
        MatF raw = region_raw_patches(slide, region);
        if constexpr (std::is_same_v<Real, float>) {
            feats.region_blocks.push_back(encode_region<Real>(raw, encoder));
        } else {
            feats.region_blocks.push_back(encode_region<Real>(raw.template cast<Real>(), encoder));
        }
    }
    feats.all_patches = assemble_slide_features(feats.region_blocks);
    return feats;
}

// ---------------------------------------------------------------------------
// Feature cache file: "PFLC" magic, version u16, N u32, M u32, d u32, then
// N*M*d little-endian float32. Sidecar JSON record carries slide_id and grid.
// ---------------------------------------------------------------------------

constexpr std::uint16_t kFeatureCacheVersion = 1;

struct FeatureCache {
    std::string slide_id;
    int grid_w = 0, grid_h = 0;
    int patches_per_region = 0;
    MatF features;  // (N*M) x d
};

inline std::string feature_cache_to_bytes(const FeatureCache& cache) {
    const int n = cache.grid_w * cache.grid_h;
    std::string out;
    out += "PFLC";
    put_u16(out, kFeatureCacheVersion);
    put_u32(out, static_cast<std::uint32_t>(n));
    put_u32(out, static_cast<std::uint32_t>(cache.patches_per_region));
    put_u32(out, static_cast<std::uint32_t>(cache.features.cols));
    for (float v : cache.features.a) put_f32(out, v);
    return out;
}

inline std::string feature_cache_sidecar(const FeatureCache& cache) {
    nlohmann::json j;
    j["slide_id"] = cache.slide_id;
    j["region_grid"] = {cache.grid_w, cache.grid_h};
    return j.dump();
}

inline FeatureCache feature_cache_from_bytes(const std::string& bytes,
                                             const std::string& sidecar) {
    ByteReader rd(bytes);
    char magic[4];
    rd.raw(magic, 4);
    if (std::memcmp(magic, "PFLC", 4) != 0)
        throw std::runtime_error("feature cache: bad magic");
    const std::uint16_t version = rd.u16();
    if (version != kFeatureCacheVersion)
        throw std::runtime_error("feature cache: unsupported version " + std::to_string(version));
    const std::uint32_t n = rd.u32();
    const std::uint32_t m = rd.u32();
    const std::uint32_t d = rd.u32();
    FeatureCache cache;
    cache.patches_per_region = static_cast<int>(m);
    cache.features = MatF(static_cast<int>(n * m), static_cast<int>(d));
    for (auto& v : cache.features.a) v = rd.f32();
    if (!rd.at_end()) throw std::runtime_error("feature cache: trailing bytes");
    nlohmann::json j = nlohmann::json::parse(sidecar);
    cache.slide_id = j.at("slide_id").get<std::string>();
    cache.grid_w = j.at("region_grid").at(0).get<int>();
    cache.grid_h = j.at("region_grid").at(1).get<int>();
    if (cache.grid_w * cache.grid_h != static_cast<int>(n))
        throw std::runtime_error("feature cache: sidecar grid disagrees with header");
    return cache;
}

inline void save_feature_cache(const FeatureCache& cache, const std::string& path) {
    write_file(path, feature_cache_to_bytes(cache));
    write_file(path + ".json", feature_cache_sidecar(cache));
}

inline FeatureCache load_feature_cache(const std::string& path) {
    return feature_cache_from_bytes(read_file(path), read_file(path + ".json"));
}

}  // namespace slidealign
