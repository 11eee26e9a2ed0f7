#pragma once

// Isosurface extraction on the voxel-center lattice and coarse selection of
// the extracted surface.

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "vosh/mc_tables.hpp"
#include "vosh/mesh.hpp"
#include "vosh/voxel_grid.hpp"

namespace vosh {

/// Scalar samples on an n^3 lattice; sample (i, j, k) sits at origin + (i, j, k) * spacing.
struct ScalarLattice {
    int n = 0;
    Vec3f origin{};
    float spacing = 1.0f;
    std::vector<float> values;  // index (k * n + j) * n + i

    float at(int i, int j, int k) const { return values[(std::size_t(k) * n + j) * n + i]; }
};

/// Marching cubes over a lattice. Surfaces enclose the region where values are
/// at or above `iso`; triangles are wound so normals point toward lower values.
/// Edge crossings are kept a hair away from lattice points so no triangle collapses.
inline TriMesh marching_cubes(const ScalarLattice& f, float iso) {
    TriMesh mesh;
    if (f.n < 2) return mesh;
    const int n = f.n;
    std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
    auto vertex_on = [&](int i, int j, int k, int corner_a, int corner_b) -> std::uint32_t {
        const auto& oa = mc::kCornerOffset[corner_a];
        const auto& ob = mc::kCornerOffset[corner_b];
        int a[3] = {i + oa[0], j + oa[1], k + oa[2]};
        int b[3] = {i + ob[0], j + ob[1], k + ob[2]};
        if (std::tie(a[2], a[1], a[0]) > std::tie(b[2], b[1], b[0])) std::swap(a, b);
        const int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
        const std::uint64_t key = ((std::uint64_t(a[2]) * n + a[1]) * n + a[0]) * 3 + axis;
        if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;
        const float va = f.at(a[0], a[1], a[2]), vb = f.at(b[0], b[1], b[2]);
        float t = (iso - va) / (vb - va);
        t = std::clamp(t, 1e-4f, 1.0f - 1e-4f);
        Vec3f p{float(a[0]), float(a[1]), float(a[2])};
        p[axis] += t;
        const auto id = std::uint32_t(mesh.positions.size());
        mesh.positions.push_back(f.origin + p * f.spacing);
        edge_vertex.emplace(key, id);
        return id;
    };
    for (int k = 0; k + 1 < n; ++k) {
        for (int j = 0; j + 1 < n; ++j) {
            for (int i = 0; i + 1 < n; ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    const auto& o = mc::kCornerOffset[c];
                    if (f.at(i + o[0], j + o[1], k + o[2]) < iso) cube |= 1 << c;
                }
                if (cube == 0 || cube == 255) continue;
                const auto* row = mc::kTriTable[cube];
                for (int t = 0; row[t] != -1; t += 3) {
                    Face face;
                    for (int v = 0; v < 3; ++v) {
                        const auto& e = mc::kEdgeCorners[std::size_t(row[t + v])];
                        face[v] = vertex_on(i, j, k, e[0], e[1]);
                    }
                    mesh.faces.push_back(face);
                }
            }
        }
    }
    mesh.ensure_appearance(0.0f);
    return remove_degenerate(mesh, 0.0f);
}

/// Density threshold for an opacity iso-level: 1 - exp(-sigma * edge) = iso_alpha.
inline float iso_density(float iso_alpha, float voxel_edge) {
    if (!(iso_alpha > 0.0f && iso_alpha < 1.0f)) throw InvalidArgument("marching_cubes: iso_alpha must lie in (0, 1)");
    return -std::log1p(-iso_alpha) / voxel_edge;
}

inline ScalarLattice density_lattice(const VoxelGrid& grid) {
    ScalarLattice f;
    f.n = grid.resolution();
    f.origin = grid.voxel_center(0, 0, 0);
    f.spacing = grid.voxel_edge();
    f.values.resize(grid.voxel_count());
    for (std::size_t v = 0; v < grid.voxel_count(); ++v) f.values[v] = grid.density(v);
    return f;
}

/// Extracts the iso_alpha opacity surface of the grid's density field and
/// samples the grid's appearance at every vertex.
inline TriMesh marching_cubes(const VoxelGrid& grid, float iso_alpha = 0.5f) {
    const float iso = iso_density(iso_alpha, grid.voxel_edge());
    TriMesh m = marching_cubes(density_lattice(grid), iso);
    for (std::size_t v = 0; v < m.positions.size(); ++v) sample_appearance(grid, locate(grid.resolution(), m.positions[v]), m.diffuse[v], m.feature[v]);
    return m;
}

// ---------------------------------------------------------------------------
// Coarse selection

struct SelectionConfig {
    float bound_fraction = 0.9f;
    float max_edge_len = 4.0f * (4.0f / 128.0f);
    int min_patch_tris = 16;

    static SelectionConfig for_resolution(int resolution) {
        SelectionConfig c;
        c.max_edge_len = 4.0f * (4.0f / float(resolution));
        return c;
    }
    void validate() const {
        if (!(bound_fraction > 0.0f && bound_fraction <= 1.0f)) throw DescriptorError("select.bound_fraction", "must lie in (0, 1]");
        if (!(max_edge_len > 0.0f)) throw DescriptorError("select.max_edge_len", "must be positive");
        if (min_patch_tris < 1) throw DescriptorError("select.min_patch_tris", "must be at least 1");
    }
};

/// Drops faces outside the near cube or with long edges, then drops small
/// connected patches. Survivors keep their order; vertices are renumbered.
inline TriMesh coarse_select(const TriMesh& mesh, const SelectionConfig& cfg) {
    cfg.validate();
    std::vector<std::uint8_t> keep(mesh.faces.size(), 1);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        for (int e = 0; e < 3; ++e) {
            if (max_abs(mesh.positions[face[e]]) > cfg.bound_fraction) keep[f] = 0;
            if (edge_length(mesh, face[e], face[(e + 1) % 3]) > cfg.max_edge_len) keep[f] = 0;
        }
    }
    TriMesh geo = select_faces(mesh, keep);
    std::uint32_t count = 0;
    const auto comp = face_components(geo, &count);
    std::vector<std::size_t> size(count, 0);
    for (auto c : comp) ++size[c];
    std::vector<std::uint8_t> keep2(geo.faces.size(), 1);
    for (std::size_t f = 0; f < geo.faces.size(); ++f) keep2[f] = size[comp[f]] >= std::size_t(cfg.min_patch_tris);
    return select_faces(geo, keep2);
}

}  // namespace vosh
