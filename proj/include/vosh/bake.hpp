#pragma once

// Asset bundle: sparse 8-bit voxels with a one-voxel halo, occupancy pyramid,
// mesh buffers and MLP weights in the shared container, plus a JSON manifest.
//
// Sections, in order:
//   MANI  manifest JSON (UTF-8, no terminator)
//   VOXL  u32 R, u32 n, u32 index[n] strictly increasing, u8 channels[n][1 + 3 + F]
//   PYRM  u32 levels, per level: u32 res, bitset[ceil(res^3 / 8)] (bit i of byte i/8 is LSB-first)
//   MESH  u32 nv, u32 nf, f32 position[nv][3], u32 index[nf][3], u8 appearance[nv][3 + F]
//   MLPW  u32 count, f32 params[count]
//
// A cell is alive iff its pyramid level-0 bit is set; the other stored cells
// are halo cells whose appearance feeds trilinear lookups next to alive ones.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vosh/container.hpp"
#include "vosh/hybrid.hpp"

namespace vosh {

inline constexpr std::uint32_t kAssetVersion = 1;
inline constexpr const char* kAssetMagic = "VOSH";
inline constexpr float kSigmaMax = 1000.0f;
inline constexpr float kSigmaMin = 0.01f;

// ---------------------------------------------------------------------------
// Quantization

/// Log-scale 8-bit density code: 0 is empty, 1..255 cover [kSigmaMin, kSigmaMax].
struct DensityQuantizer {
    float sigma_min = kSigmaMin;
    float sigma_max = kSigmaMax;

    double log_step() const { return (std::log(double(sigma_max)) - std::log(double(sigma_min))) / 254.0; }

    std::uint8_t encode(float sigma) const {
        if (!(sigma > 0.0f)) return 0;
        const double x = (std::log(double(sigma)) - std::log(double(sigma_min))) / log_step();
        if (x < -0.5) return 0;
        return std::uint8_t(std::clamp(std::lround(x) + 1, 1l, 255l));
    }
    float decode(std::uint8_t q) const {
        if (q == 0) return 0.0f;
        return float(std::exp(std::log(double(sigma_min)) + double(q - 1) * log_step()));
    }
};

inline std::uint8_t encode_unit(float v) { return std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }
inline float decode_unit(std::uint8_t q) { return float(q) / 255.0f; }

// ---------------------------------------------------------------------------
// Occupancy pyramid

struct OccupancyPyramid {
    std::vector<int> resolutions;                   // level 0 first
    std::vector<std::vector<std::uint8_t>> levels;  // one byte per cell

    std::size_t level_count() const { return levels.size(); }
    bool at(std::size_t level, int i, int j, int k) const {
        const int r = resolutions[level];
        return levels[level][(std::size_t(k) * r + j) * r + i] != 0;
    }
    bool operator==(const OccupancyPyramid&) const = default;
};

inline int pyramid_level_count(int resolution) { return std::max(1, int(std::bit_width(unsigned(resolution))) - 1 - 2); }

inline OccupancyPyramid build_occupancy_pyramid(const std::vector<std::uint8_t>& alive, int resolution) {
    if (resolution < 1 || !std::has_single_bit(unsigned(resolution))) {
        throw InvalidArgument("build_occupancy_pyramid: resolution must be a power of two");
    }
    if (alive.size() != std::size_t(resolution) * resolution * resolution) {
        throw InvalidArgument("build_occupancy_pyramid: mask size does not match the resolution");
    }
    OccupancyPyramid p;
    p.resolutions.push_back(resolution);
    p.levels.push_back(alive);
    for (auto& b : p.levels[0]) b = b ? 1 : 0;
    const int count = pyramid_level_count(resolution);
    for (int l = 1; l < count && p.resolutions.back() > 1; ++l) {
        const int r = p.resolutions.back() / 2;
        const auto& fine = p.levels.back();
        const int rf = r * 2;
        std::vector<std::uint8_t> coarse(std::size_t(r) * r * r, 0);
        for (int k = 0; k < rf; ++k) {
            for (int j = 0; j < rf; ++j) {
                for (int i = 0; i < rf; ++i) {
                    if (fine[(std::size_t(k) * rf + j) * rf + i]) coarse[(std::size_t(k / 2) * r + j / 2) * r + i / 2] = 1;
                }
            }
        }
        p.resolutions.push_back(r);
        p.levels.push_back(std::move(coarse));
    }
    return p;
}

inline OccupancyPyramid build_occupancy_pyramid(const VoxelGrid& grid) {
    return build_occupancy_pyramid(grid.alive_mask(), grid.resolution());
}

/// True when the 2x2x2 block of voxels starting at (i, j, k) has no alive
/// voxel, testing the coarsest level first.
inline bool pyramid_block_empty(const OccupancyPyramid& p, int i, int j, int k) {
    for (std::size_t l = p.level_count(); l-- > 0;) {
        const int r = p.resolutions[l];
        const int i0 = i >> l, j0 = j >> l, k0 = k >> l;
        const int i1 = std::min((i + 1) >> l, r - 1), j1 = std::min((j + 1) >> l, r - 1), k1 = std::min((k + 1) >> l, r - 1);
        bool any = false;
        for (int kk = k0; kk <= k1 && !any; ++kk) {
            for (int jj = j0; jj <= j1 && !any; ++jj) {
                for (int ii = i0; ii <= i1 && !any; ++ii) any = p.at(l, ii, jj, kk);
            }
        }
        if (!any) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Bake

/// Alive voxels plus their 26-neighborhood, as sorted linear indices.
inline std::vector<std::uint32_t> stored_cells(const VoxelGrid& grid) {
    const int r = grid.resolution();
    std::vector<std::uint8_t> keep(grid.voxel_count(), 0);
    for (int k = 0; k < r; ++k) {
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < r; ++i) {
                if (!grid.alive(grid.index(i, j, k))) continue;
                for (int dk = -1; dk <= 1; ++dk) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        for (int di = -1; di <= 1; ++di) {
                            const int ii = i + di, jj = j + dj, kk = k + dk;
                            if (ii < 0 || jj < 0 || kk < 0 || ii >= r || jj >= r || kk >= r) continue;
                            keep[grid.index(ii, jj, kk)] = 1;
                        }
                    }
                }
            }
        }
    }
    std::vector<std::uint32_t> out;
    for (std::size_t v = 0; v < keep.size(); ++v) {
        if (keep[v]) out.push_back(std::uint32_t(v));
    }
    return out;
}

inline nlohmann::json asset_manifest(const Vosh& v, std::size_t stored, const OccupancyPyramid& pyr) {
    const DensityQuantizer dq;
    return {{"format", "vosh"},
            {"version", kAssetVersion},
            {"resolution", v.grid.resolution()},
            {"feature_dim", kFeatureDim},
            {"domain", {{"contraction", "inf-norm"}, {"min", -2.0}, {"max", 2.0}}},
            {"density", {{"encoding", "log8"}, {"sigma_min", dq.sigma_min}, {"sigma_max", dq.sigma_max}, {"zero_code", 0}}},
            {"appearance", {{"encoding", "linear8"}, {"scale", 1.0 / 255.0}, {"offset", 0.0}}},
            {"mlp",
             {{"input", kMlpInput},
              {"hidden", {kMlpHidden, kMlpHidden}},
              {"output", kMlpOutput},
              {"activation", "relu"},
              {"output_rule", "clamp01(diffuse + mlp)"},
              {"layout", "w1[16][10] b1[16] w2[16][16] b2[16] w3[3][16] b3[3]"}}},
            {"march", {{"step_fraction", 0.5}}},
            {"counts",
             {{"alive_voxels", v.grid.alive_count()},
              {"stored_cells", stored},
              {"pyramid_levels", pyr.level_count()},
              {"mesh_vertices", v.mesh.positions.size()},
              {"mesh_faces", v.mesh.faces.size()}}}};
}

inline std::vector<std::uint8_t> bake(const Vosh& v) {
    const VoxelGrid& g = v.grid;
    const OccupancyPyramid pyr = build_occupancy_pyramid(g);
    const auto cells = stored_cells(g);
    const DensityQuantizer dq;

    Container c{kAssetMagic, kAssetVersion, {}};
    const std::string mani = asset_manifest(v, cells.size(), pyr).dump();
    c.sections.push_back({"MANI", {mani.begin(), mani.end()}});

    ByteWriter vox;
    vox.u32(std::uint32_t(g.resolution()));
    vox.u32(std::uint32_t(cells.size()));
    vox.u32s(cells);
    for (std::uint32_t cell : cells) {
        auto d = g.decoded(cell);
        vox.u8(g.alive(cell) ? dq.encode(d[0]) : 0);
        for (std::size_t ch = 1; ch < kChannels; ++ch) vox.u8(encode_unit(d[ch]));
    }
    c.sections.push_back({"VOXL", vox.take()});

    ByteWriter pw;
    pw.u32(std::uint32_t(pyr.level_count()));
    for (std::size_t l = 0; l < pyr.level_count(); ++l) {
        pw.u32(std::uint32_t(pyr.resolutions[l]));
        std::vector<std::uint8_t> bits((pyr.levels[l].size() + 7) / 8, 0);
        for (std::size_t i = 0; i < pyr.levels[l].size(); ++i) {
            if (pyr.levels[l][i]) bits[i / 8] |= std::uint8_t(1u << (i % 8));
        }
        pw.bytes(bits);
    }
    c.sections.push_back({"PYRM", pw.take()});

    const TriMesh& m = v.mesh;
    ByteWriter mw;
    mw.u32(std::uint32_t(m.positions.size()));
    mw.u32(std::uint32_t(m.faces.size()));
    for (const auto& p : m.positions) mw.floats(std::array<float, 3>{p.x, p.y, p.z});
    for (const auto& f : m.faces) mw.u32s(f);
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
        for (int ch = 0; ch < 3; ++ch) mw.u8(encode_unit(m.diffuse[i][ch]));
        for (std::size_t ch = 0; ch < kFeatureDim; ++ch) mw.u8(encode_unit(m.feature[i][ch]));
    }
    c.sections.push_back({"MESH", mw.take()});

    ByteWriter hw;
    hw.u32(std::uint32_t(MlpHead<float>::kParamCount));
    hw.floats(v.head.params);
    c.sections.push_back({"MLPW", hw.take()});
    return write_container(c);
}

// ---------------------------------------------------------------------------
// Load

struct LoadedAsset {
    Vosh vosh;
    OccupancyPyramid pyramid;
    nlohmann::json manifest;
};

inline LoadedAsset load_asset(std::span<const std::uint8_t> bytes) {
    const Container c = read_container(bytes, kAssetMagic, kAssetVersion);
    for (const char* tag : {"MANI", "VOXL", "PYRM", "MESH", "MLPW"}) c.find(tag);
    auto malformed = [](const char* section, const std::string& what) { return ParseError(ParseErrorKind::Malformed, section, what); };

    LoadedAsset out;
    const auto& mani = c.find("MANI").payload;
    try {
        out.manifest = nlohmann::json::parse(std::string(mani.begin(), mani.end()));
    } catch (const nlohmann::json::exception& e) {
        throw malformed("MANI", std::string("invalid JSON: ") + e.what());
    }
    if (out.manifest.value("feature_dim", 0) != int(kFeatureDim)) throw malformed("MANI", "feature dimension mismatch");

    ByteReader vr(c.find("VOXL").payload, "VOXL");
    const std::uint32_t res = vr.u32();
    if (res < 2 || res > 1024 || !std::has_single_bit(res)) throw malformed("VOXL", "resolution must be a power of two in [2, 1024]");
    if (out.manifest.value("resolution", 0) != int(res)) throw malformed("MANI", "resolution disagrees with VOXL");
    const std::uint32_t n = vr.u32();
    std::vector<std::uint32_t> cells(n);
    vr.u32s(cells);
    const std::size_t total = std::size_t(res) * res * res;
    for (std::size_t i = 0; i < n; ++i) {
        if (cells[i] >= total || (i > 0 && cells[i] <= cells[i - 1])) throw malformed("VOXL", "cell indices must be strictly increasing and in range");
    }
    const auto payload = vr.bytes(std::size_t(n) * kChannels);
    if (vr.remaining() != 0) throw malformed("VOXL", "trailing bytes");

    ByteReader pr(c.find("PYRM").payload, "PYRM");
    const std::uint32_t levels = pr.u32();
    if (levels != std::uint32_t(pyramid_level_count(int(res)))) throw malformed("PYRM", "unexpected level count");
    for (std::uint32_t l = 0; l < levels; ++l) {
        const std::uint32_t r = pr.u32();
        if (r != (res >> l)) throw malformed("PYRM", "unexpected level resolution");
        const std::size_t cellsl = std::size_t(r) * r * r;
        const auto bits = pr.bytes((cellsl + 7) / 8);
        std::vector<std::uint8_t> lv(cellsl);
        for (std::size_t i = 0; i < cellsl; ++i) lv[i] = (bits[i / 8] >> (i % 8)) & 1u;
        out.pyramid.resolutions.push_back(int(r));
        out.pyramid.levels.push_back(std::move(lv));
    }
    if (pr.remaining() != 0) throw malformed("PYRM", "trailing bytes");
    if (build_occupancy_pyramid(out.pyramid.levels[0], int(res)) != out.pyramid) throw malformed("PYRM", "coarse levels are not the max-pool of level 0");

    VoxelGrid g{int(res)};
    g.kill_all();
    std::vector<std::uint8_t> stored(total, 0);
    const DensityQuantizer dq;
    const float edge = g.voxel_edge();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t cell = cells[i];
        stored[cell] = 1;
        const std::uint8_t* q = payload.data() + i * kChannels;
        auto raw = g.raw(cell);
        raw[0] = softplus_inverse(dq.decode(q[0]) * edge);
        for (std::size_t ch = 1; ch < kChannels; ++ch) raw[ch] = logit(decode_unit(q[ch]));
        g.set_alive(cell, out.pyramid.levels[0][cell] != 0);
    }
    for (std::size_t v = 0; v < total; ++v) {
        if (out.pyramid.levels[0][v] && !stored[v]) throw malformed("PYRM", "alive cell without stored voxel data");
    }
    out.vosh.grid = std::move(g);

    ByteReader mr(c.find("MESH").payload, "MESH");
    TriMesh& m = out.vosh.mesh;
    const std::uint32_t nv = mr.u32(), nf = mr.u32();
    std::vector<float> pos(std::size_t(nv) * 3);
    mr.floats(pos);
    std::vector<std::uint32_t> idx(std::size_t(nf) * 3);
    mr.u32s(idx);
    const auto app = mr.bytes(std::size_t(nv) * (3 + kFeatureDim));
    if (mr.remaining() != 0) throw malformed("MESH", "trailing bytes");
    for (std::uint32_t i = 0; i < nv; ++i) {
        m.positions.push_back({pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]});
        if (!all_finite(m.positions.back())) throw malformed("MESH", "non-finite vertex position");
        const std::uint8_t* q = app.data() + std::size_t(i) * (3 + kFeatureDim);
        m.diffuse.push_back({decode_unit(q[0]), decode_unit(q[1]), decode_unit(q[2])});
        Feature<float> f;
        for (std::size_t ch = 0; ch < kFeatureDim; ++ch) f[ch] = decode_unit(q[3 + ch]);
        m.feature.push_back(f);
    }
    for (std::uint32_t i = 0; i < nf; ++i) {
        const Face f{idx[3 * i], idx[3 * i + 1], idx[3 * i + 2]};
        for (auto x : f) {
            if (x >= nv) throw malformed("MESH", "face index out of range");
        }
        m.faces.push_back(f);
    }

    ByteReader hr(c.find("MLPW").payload, "MLPW");
    if (hr.u32() != MlpHead<float>::kParamCount) throw malformed("MLPW", "parameter count mismatch");
    hr.floats(out.vosh.head.params);
    if (hr.remaining() != 0) throw malformed("MLPW", "trailing bytes");
    return out;
}

inline LoadedAsset load_asset_file(const std::filesystem::path& path) { return load_asset(read_file_bytes(path)); }

/// Writes the asset and its sidecar manifest (same JSON as MANI) next to it.
inline void write_asset(const std::filesystem::path& path, const Vosh& v) {
    const auto bytes = bake(v);
    write_file_bytes(path, bytes);
    const Container c = read_container(bytes, kAssetMagic, kAssetVersion);
    const auto& mani = c.find("MANI").payload;
    std::ofstream side(path.parent_path() / (path.stem().string() + ".json"));
    side << nlohmann::json::parse(std::string(mani.begin(), mani.end())).dump(2) << '\n';
}

}  // namespace vosh
