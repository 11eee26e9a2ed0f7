#pragma once

// Indexed triangle mesh with per-vertex appearance and per-face statistics.
// Positions live in contracted space.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vosh/core_field.hpp"
#include "vosh/error.hpp"
#include "vosh/vec.hpp"

namespace vosh {

using Face = std::array<std::uint32_t, 3>;

struct TriMesh {
    std::vector<Vec3f> positions;
    std::vector<Face> faces;
    std::vector<Rgb<float>> diffuse;
    std::vector<Feature<float>> feature;
    std::vector<float> face_error;
    std::vector<float> normal_change;      // degrees
    std::vector<std::uint8_t> observed;    // face seen by at least one view

    std::size_t vertex_count() const { return positions.size(); }
    std::size_t face_count() const { return faces.size(); }
    bool empty() const { return faces.empty(); }

    /// Resizes appearance to match the vertex count, filling new entries with `fill`.
    void ensure_appearance(float fill = 0.5f) {
        diffuse.resize(positions.size(), Rgb<float>{fill, fill, fill});
        Feature<float> f;
        f.fill(fill);
        feature.resize(positions.size(), f);
    }
    bool has_stats() const { return face_error.size() == faces.size() && normal_change.size() == faces.size(); }
    void clear_stats() {
        face_error.clear();
        normal_change.clear();
        observed.clear();
    }

    /// Throws InvalidArgument on out-of-range indices, NaN positions or size mismatches.
    void validate() const {
        for (const auto& p : positions) {
            if (!all_finite(p)) throw InvalidArgument("mesh: non-finite vertex position");
        }
        for (const auto& f : faces) {
            for (auto i : f) {
                if (i >= positions.size()) throw InvalidArgument("mesh: face index out of range");
            }
        }
        if (diffuse.size() != positions.size() || feature.size() != positions.size()) {
            throw InvalidArgument("mesh: appearance arrays do not match the vertex count");
        }
    }

    bool operator==(const TriMesh&) const = default;
};

inline Vec3f face_normal_raw(const TriMesh& m, std::size_t f) {
    const auto& [a, b, c] = m.faces[f];
    return cross(m.positions[b] - m.positions[a], m.positions[c] - m.positions[a]);
}
inline float face_area(const TriMesh& m, std::size_t f) { return 0.5f * norm(face_normal_raw(m, f)); }
inline Vec3f face_normal(const TriMesh& m, std::size_t f) {
    const Vec3f n = face_normal_raw(m, f);
    const float l = norm(n);
    return l > 0.0f ? n / l : Vec3f{0, 0, 0};
}
inline float edge_length(const TriMesh& m, std::uint32_t a, std::uint32_t b) { return norm(m.positions[a] - m.positions[b]); }

inline std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t(a) << 32) | b;
}

/// Faces incident to each undirected edge, ordered by edge key.
inline std::map<std::uint64_t, std::vector<std::uint32_t>> edge_faces(const TriMesh& m) {
    std::map<std::uint64_t, std::vector<std::uint32_t>> out;
    for (std::uint32_t f = 0; f < m.faces.size(); ++f) {
        for (int e = 0; e < 3; ++e) out[edge_key(m.faces[f][e], m.faces[f][(e + 1) % 3])].push_back(f);
    }
    return out;
}

/// V - E + F.
inline long euler_characteristic(const TriMesh& m) {
    std::vector<std::uint8_t> used(m.positions.size(), 0);
    for (const auto& f : m.faces) {
        for (auto i : f) used[i] = 1;
    }
    const long v = long(std::count(used.begin(), used.end(), 1));
    return v - long(edge_faces(m).size()) + long(m.faces.size());
}

/// True when every edge has exactly two incident faces.
inline bool is_closed_manifold(const TriMesh& m) {
    for (const auto& [key, fs] : edge_faces(m)) {
        if (fs.size() != 2) return false;
    }
    return true;
}

/// Keeps the listed faces (in their original order), drops unreferenced
/// vertices and renumbers the survivors in their original order.
inline TriMesh select_faces(const TriMesh& m, const std::vector<std::uint8_t>& keep_face) {
    TriMesh out;
    std::vector<std::uint32_t> remap(m.positions.size(), UINT32_MAX);
    std::vector<std::uint8_t> used(m.positions.size(), 0);
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        if (!keep_face[f]) continue;
        for (auto i : m.faces[f]) used[i] = 1;
    }
    const bool has_app = m.diffuse.size() == m.positions.size() && m.feature.size() == m.positions.size();
    for (std::size_t v = 0; v < m.positions.size(); ++v) {
        if (!used[v]) continue;
        remap[v] = std::uint32_t(out.positions.size());
        out.positions.push_back(m.positions[v]);
        if (has_app) {
            out.diffuse.push_back(m.diffuse[v]);
            out.feature.push_back(m.feature[v]);
        }
    }
    const bool stats = m.has_stats();
    const bool obs = m.observed.size() == m.faces.size();
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        if (!keep_face[f]) continue;
        out.faces.push_back({remap[m.faces[f][0]], remap[m.faces[f][1]], remap[m.faces[f][2]]});
        if (stats) {
            out.face_error.push_back(m.face_error[f]);
            out.normal_change.push_back(m.normal_change[f]);
        }
        if (obs) out.observed.push_back(m.observed[f]);
    }
    return out;
}

/// Removes faces with repeated indices or (near) zero area.
inline TriMesh remove_degenerate(const TriMesh& m, float min_area = 1e-12f) {
    std::vector<std::uint8_t> keep(m.faces.size(), 1);
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        const auto& [a, b, c] = m.faces[f];
        if (a == b || b == c || a == c || !(face_area(m, f) > min_area)) keep[f] = 0;
    }
    return select_faces(m, keep);
}

/// Per face, the largest angle (degrees) between its normal and the normal of
/// any edge-adjacent face. Faces without neighbors get 0.
inline std::vector<float> compute_normal_change(const TriMesh& m) {
    std::vector<Vec3f> normals(m.faces.size());
    for (std::size_t f = 0; f < m.faces.size(); ++f) normals[f] = face_normal(m, f);
    std::vector<float> out(m.faces.size(), 0.0f);
    for (const auto& [key, fs] : edge_faces(m)) {
        for (std::size_t a = 0; a < fs.size(); ++a) {
            for (std::size_t b = a + 1; b < fs.size(); ++b) {
                const float c = std::clamp(dot(normals[fs[a]], normals[fs[b]]), -1.0f, 1.0f);
                const float deg = std::acos(c) * 180.0f / std::numbers::pi_v<float>;
                out[fs[a]] = std::max(out[fs[a]], deg);
                out[fs[b]] = std::max(out[fs[b]], deg);
            }
        }
    }
    return out;
}

/// Connected components over shared vertices; returns a component id per face.
inline std::vector<std::uint32_t> face_components(const TriMesh& m, std::uint32_t* count = nullptr) {
    std::vector<std::uint32_t> parent(m.positions.size());
    std::iota(parent.begin(), parent.end(), 0u);
    auto find = [&](std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (const auto& f : m.faces) {
        for (int e = 1; e < 3; ++e) {
            const auto ra = find(f[0]), rb = find(f[e]);
            if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
        }
    }
    std::vector<std::uint32_t> label(m.positions.size(), UINT32_MAX), out(m.faces.size());
    std::uint32_t next = 0;
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        const auto r = find(m.faces[f][0]);
        if (label[r] == UINT32_MAX) label[r] = next++;
        out[f] = label[r];
    }
    if (count) *count = next;
    return out;
}

// ---------------------------------------------------------------------------
// OBJ (positions and faces only)

inline void write_obj(const std::filesystem::path& path, const TriMesh& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    out.precision(9);
    for (const auto& p : m.positions) out << "v " << p.x << ' ' << p.y << ' ' << p.z << '\n';
    for (const auto& f : m.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

inline TriMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    TriMesh m;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3f p;
            ss >> p.x >> p.y >> p.z;
            m.positions.push_back(p);
        } else if (tag == "f") {
            std::vector<std::uint32_t> idx;
            std::string tok;
            while (ss >> tok) idx.push_back(std::uint32_t(std::stoul(tok.substr(0, tok.find('/')))) - 1);
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
    }
    m.ensure_appearance();
    m.validate();
    return m;
}

}  // namespace vosh
