#pragma once

// Parser conformance vectors shared with the web viewer: tiny valid assets,
// deliberately broken ones, and native renders of the valid ones on fixed
// cameras. expected.json lists what a conforming parser must report.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vosh/renderer.hpp"

namespace vosh {

struct ConformanceVector {
    std::string name;
    std::vector<std::uint8_t> bytes;
    nlohmann::json expected;
};

namespace detail {

inline void conformance_blob(VoxelGrid& g, Vec3f center, float radius, float peak) {
    const int r = g.resolution();
    for (int k = 0; k < r; ++k) {
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < r; ++i) {
                const std::size_t v = g.index(i, j, k);
                const Vec3f p((i + 0.5f) / r * 4 - 2, (j + 0.5f) / r * 4 - 2, (k + 0.5f) / r * 4 - 2);
                const float d = norm(p - center);
                auto raw = g.raw(v);
                raw[0] = d < radius ? softplus_inverse(peak * (1 - d / radius) * g.voxel_edge()) : -10.0f;
                raw[1] = 1.5f * p.x;
                raw[2] = 1.5f * p.y + 0.5f;
                raw[3] = -1.5f * p.z;
                for (std::size_t c = 4; c < kChannels; ++c) raw[c] = 0.5f * std::sin(3.0f * float(c) * p.x);
                g.decode_voxel(v);
                g.set_alive(v, d < radius);
            }
        }
    }
}

inline TriMesh conformance_quad(float y, float half) {
    TriMesh m;
    m.positions = {{-half, y, -half}, {half, y, -half}, {half, y, half}, {-half, y, half}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    m.ensure_appearance();
    const Rgb<float> colors[4] = {{0.9f, 0.2f, 0.2f}, {0.2f, 0.9f, 0.2f}, {0.2f, 0.2f, 0.9f}, {0.9f, 0.9f, 0.2f}};
    for (std::size_t i = 0; i < 4; ++i) {
        m.diffuse[i] = colors[i];
        for (std::size_t c = 0; c < kFeatureDim; ++c) m.feature[i][c] = 0.25f * float(c) + 0.1f * float(i);
    }
    return m;
}

inline nlohmann::json summary(const LoadedAsset& a) {
    return {{"ok", true},
            {"resolution", a.vosh.grid.resolution()},
            {"alive_voxels", a.vosh.grid.alive_count()},
            {"stored_cells", a.manifest["counts"]["stored_cells"]},
            {"pyramid_levels", a.pyramid.level_count()},
            {"mesh_vertices", a.vosh.mesh.positions.size()},
            {"mesh_faces", a.vosh.mesh.faces.size()}};
}

inline nlohmann::json failure(ParseErrorKind kind, const std::string& section) {
    return {{"ok", false}, {"error", to_string(kind)}, {"section", section}};
}

/// Re-frames a container after editing it, so CRCs stay valid.
inline std::vector<std::uint8_t> edit(const std::vector<std::uint8_t>& bytes, const std::function<void(Container&)>& fn) {
    Container c = read_container(bytes, kAssetMagic, kAssetVersion);
    fn(c);
    return write_container(c);
}

inline Section& section(Container& c, const std::string& tag) { return const_cast<Section&>(c.find(tag)); }

}  // namespace detail

/// The three valid assets used for parity renders.
inline std::vector<std::pair<std::string, Vosh>> conformance_assets() {
    std::vector<std::pair<std::string, Vosh>> out;
    {
        Vosh v;
        v.grid = VoxelGrid(8);
        v.grid.kill_all();
        const std::size_t c = v.grid.index(3, 4, 4);
        v.grid.raw(c)[0] = 3.0f;
        v.grid.raw(c)[1] = 2.0f;
        v.grid.decode_voxel(c);
        v.grid.set_alive(c, true);
        v.head = init_mlp(11);
        out.emplace_back("one_voxel", std::move(v));
    }
    {
        Vosh v;
        v.grid = VoxelGrid(8);
        v.grid.kill_all();
        v.mesh = detail::conformance_quad(-0.3f, 0.7f);
        v.head = init_mlp(12);
        out.emplace_back("mesh_only", std::move(v));
    }
    {
        Vosh v;
        v.grid = VoxelGrid(16);
        detail::conformance_blob(v.grid, {0.1f, 0.1f, 0.0f}, 0.55f, 5.0f);
        v.mesh = detail::conformance_quad(-0.5f, 0.9f);
        v.head = init_mlp(13);
        out.emplace_back("hybrid", std::move(v));
    }
    return out;
}

inline std::vector<Camera> conformance_cameras() {
    std::vector<Camera> cams;
    const float focal = focal_from_fov(50.0f, 64);
    cams.push_back(Camera::look_at({0.0f, 0.9f, 2.4f}, {0, 0, 0}, {0, 1, 0}, focal, 64, 48));
    cams.push_back(Camera::look_at({2.0f, 1.2f, -0.8f}, {0, 0, 0}, {0, 1, 0}, focal, 64, 48));
    cams.push_back(Camera::look_at({-1.4f, 1.8f, -1.4f}, {0, -0.2f, 0}, {0, 1, 0}, focal, 64, 48));
    return cams;
}

/// Every vector with its expected parse result.
inline std::vector<ConformanceVector> conformance_vectors() {
    using detail::edit;
    using detail::failure;
    using detail::section;
    std::vector<ConformanceVector> out;
    const auto assets = conformance_assets();
    for (const auto& [name, v] : assets) {
        auto bytes = bake(v);
        out.push_back({name, bytes, detail::summary(load_asset(bytes))});
    }
    {
        Vosh v;
        v.grid = VoxelGrid(4);
        v.grid.kill_all();
        v.head = init_mlp(14);
        auto bytes = bake(v);
        out.push_back({"empty", bytes, detail::summary(load_asset(bytes))});
    }

    const std::vector<std::uint8_t> base = bake(assets[2].second);
    auto bad = base;
    bad[1] = 'X';
    out.push_back({"bad_magic", bad, failure(ParseErrorKind::BadMagic, "header")});
    bad = base;
    bad[4] = 7;
    out.push_back({"bad_version", bad, failure(ParseErrorKind::VersionMismatch, "header")});

    // Truncations: just past the header, inside each section, and on each section boundary.
    const Container c = read_container(base, kAssetMagic, kAssetVersion);
    std::size_t pos = 12;
    out.push_back({"truncated_header", {base.begin(), base.begin() + 10}, failure(ParseErrorKind::Truncated, "header")});
    for (std::size_t i = 0; i < c.sections.size(); ++i) {
        const auto& s = c.sections[i];
        const std::size_t mid = pos + 12 + s.payload.size() / 2;
        std::string lower = s.tag;
        for (auto& ch : lower) ch = char(std::tolower(ch));
        out.push_back({"truncated_in_" + lower, {base.begin(), base.begin() + std::ptrdiff_t(mid)}, failure(ParseErrorKind::Truncated, s.tag)});
        pos += 4 + 8 + s.payload.size() + 4;
        if (i + 1 < c.sections.size()) {
            out.push_back({"truncated_after_" + lower, {base.begin(), base.begin() + std::ptrdiff_t(pos)},
                           failure(ParseErrorKind::Truncated, "section #" + std::to_string(i + 1))});
        }
    }

    bad = base;
    bad[12 + 12 + 3] ^= 0x20;  // a manifest byte
    out.push_back({"bad_checksum", bad, failure(ParseErrorKind::Checksum, "MANI")});
    bad = base;
    bad.push_back(0);
    out.push_back({"trailing_bytes", bad, failure(ParseErrorKind::Malformed, "trailer")});

    out.push_back({"unsorted_cells", edit(base, [](Container& k) {
                       auto& p = section(k, "VOXL").payload;
                       std::swap_ranges(p.begin() + 8, p.begin() + 12, p.begin() + 12);
                   }),
                   failure(ParseErrorKind::Malformed, "VOXL")});
    out.push_back({"pyramid_not_pooled", edit(base, [](Container& k) {
                       auto& p = section(k, "PYRM").payload;
                       p.back() ^= 0x01;  // flip a coarse-level bit
                   }),
                   failure(ParseErrorKind::Malformed, "PYRM")});
    out.push_back({"face_index_out_of_range", edit(base, [](Container& k) {
                       auto& p = section(k, "MESH").payload;
                       const std::uint32_t nv = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8;
                       const std::size_t at = 8 + std::size_t(nv) * 12;
                       p[at] = 0xff;
                       p[at + 1] = 0xff;
                   }),
                   failure(ParseErrorKind::Malformed, "MESH")});
    out.push_back({"missing_mlp", edit(base, [](Container& k) { k.sections.pop_back(); }), failure(ParseErrorKind::Malformed, "MLPW")});
    out.push_back({"bad_manifest_json", edit(base, [](Container& k) { section(k, "MANI").payload.resize(5); }),
                   failure(ParseErrorKind::Malformed, "MANI")});
    return out;
}

/// What a conforming parser reports for `bytes`.
inline nlohmann::json parse_outcome(std::span<const std::uint8_t> bytes) {
    try {
        return detail::summary(load_asset(bytes));
    } catch (const ParseError& e) {
        return detail::failure(e.kind(), e.section());
    }
}

/// Writes vectors, expected.json, parity cameras and native renders into `dir`.
inline void write_conformance(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& v : conformance_vectors()) {
        write_file_bytes(dir / (v.name + ".vosh"), v.bytes);
        nlohmann::json e = v.expected;
        e["file"] = v.name + ".vosh";
        vectors.push_back(e);
    }
    nlohmann::json parity = nlohmann::json::array();
    const auto cams = conformance_cameras();
    for (const auto& [name, v] : conformance_assets()) {
        const LoadedAsset a = load_asset(bake(v));
        for (std::size_t k = 0; k < cams.size(); ++k) {
            const std::string png = name + "_cam" + std::to_string(k) + ".png";
            write_png(dir / png, render_frame(a, cams[k]).image);
            parity.push_back({{"asset", name + ".vosh"}, {"camera", camera_to_json(cams[k])}, {"reference", png}, {"tolerance_mean_abs", 2.0 / 255.0}});
        }
    }
    std::ofstream(dir / "expected.json") << nlohmann::json{{"format", "vosh-conformance"}, {"version", 1}, {"vectors", vectors}, {"parity", parity}}.dump(2)
                                         << "\n";
}

}  // namespace vosh
