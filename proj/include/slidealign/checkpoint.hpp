#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "slidealign/io.hpp"
#include "slidealign/mat.hpp"
#include "slidealign/model.hpp"
#include "slidealign/optim.hpp"

namespace slidealign {

constexpr std::uint16_t kCheckpointVersion = 1;

/// On-disk training state. Parameters and optimizer moments are float32
/// little-endian payloads; save -> load -> save is byte-identical.
struct Checkpoint {
    std::uint64_t step = 0;
    std::uint64_t config_hash = 0;
    std::string rng_state;
    std::map<std::string, MatF> params;
    long long optimizer_step = 0;
    std::map<std::string, std::pair<MatF, MatF>> optimizer_moments;  // name -> (m, v)
};

namespace detail {

inline void put_mat(std::string& out, const MatF& m) {
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    for (float v : m.a) put_f32(out, v);
}

inline MatF get_mat(ByteReader& rd) {
    const int rows = static_cast<int>(rd.u32());
    const int cols = static_cast<int>(rd.u32());
    MatF m(rows, cols);
    for (auto& v : m.a) v = rd.f32();
    return m;
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& ckpt) {
    std::string out;
    out += "PFCK";
    put_u16(out, kCheckpointVersion);
    put_u64(out, ckpt.step);
    put_u64(out, ckpt.config_hash);
    put_string(out, ckpt.rng_state);
    put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, mat] : ckpt.params) {
        put_string(out, name);
        detail::put_mat(out, mat);
    }
    put_u64(out, static_cast<std::uint64_t>(ckpt.optimizer_step));
    put_u32(out, static_cast<std::uint32_t>(ckpt.optimizer_moments.size()));
    for (const auto& [name, mv] : ckpt.optimizer_moments) {
        put_string(out, name);
        detail::put_mat(out, mv.first);
        detail::put_mat(out, mv.second);
    }
    return out;
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes) {
    ByteReader rd(bytes);
    char magic[4];
    rd.raw(magic, 4);
    if (std::memcmp(magic, "PFCK", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    const std::uint16_t version = rd.u16();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.step = rd.u64();
    ckpt.config_hash = rd.u64();
    ckpt.rng_state = rd.str();
    const std::uint32_t n_params = rd.u32();
    for (std::uint32_t i = 0; i < n_params; ++i) {
        std::string name = rd.str();
        ckpt.params.emplace(std::move(name), detail::get_mat(rd));
    }
    ckpt.optimizer_step = static_cast<long long>(rd.u64());
    const std::uint32_t n_moments = rd.u32();
    for (std::uint32_t i = 0; i < n_moments; ++i) {
        std::string name = rd.str();
        MatF m = detail::get_mat(rd);
        MatF v = detail::get_mat(rd);
        ckpt.optimizer_moments.emplace(std::move(name), std::make_pair(std::move(m), std::move(v)));
    }
    if (!rd.at_end()) throw std::runtime_error("checkpoint: trailing bytes");
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    write_file(path, checkpoint_to_bytes(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_bytes(read_file(path));
}

template <typename Real>
inline Checkpoint make_checkpoint(Model<Real>& model, const AdamW<Real>& opt, std::uint64_t step,
                                  std::uint64_t cfg_hash, const std::string& rng_state) {
    Checkpoint ckpt;
    ckpt.step = step;
    ckpt.config_hash = cfg_hash;
    ckpt.rng_state = rng_state;
    model.visit_params([&](const std::string& name, Mat<Real>& m, bool, bool) {
        if constexpr (std::is_same_v<Real, float>) {
            ckpt.params.emplace(name, m);
        } else {
            ckpt.params.emplace(name, m.template cast<float>());
        }
    });
    ckpt.optimizer_step = opt.step_count();
    for (const auto& [name, slot] : opt.slots()) {
        if constexpr (std::is_same_v<Real, float>) {
            ckpt.optimizer_moments.emplace(name, std::make_pair(slot.m, slot.v));
        } else {
            ckpt.optimizer_moments.emplace(
                name, std::make_pair(slot.m.template cast<float>(), slot.v.template cast<float>()));
        }
    }
    return ckpt;
}

template <typename Real>
inline void restore_model(Model<Real>& model, const Checkpoint& ckpt) {
    model.visit_params([&](const std::string& name, Mat<Real>& dst, bool, bool) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end())
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (it->second.rows != dst.rows || it->second.cols != dst.cols)
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        if constexpr (std::is_same_v<Real, float>) {
            dst = it->second;
        } else {
            dst = it->second.template cast<Real>();
        }
    });
}

template <typename Real>
inline void restore_optimizer(AdamW<Real>& opt, const Checkpoint& ckpt) {
    opt.set_step_count(ckpt.optimizer_step);
    opt.slots().clear();
    for (const auto& [name, mv] : ckpt.optimizer_moments) {
        typename AdamW<Real>::Slot slot;
        if constexpr (std::is_same_v<Real, float>) {
            slot.m = mv.first;
            slot.v = mv.second;
        } else {
            slot.m = mv.first.template cast<Real>();
            slot.v = mv.second.template cast<Real>();
        }
        opt.slots().emplace(name, std::move(slot));
    }
}

}  // namespace slidealign
