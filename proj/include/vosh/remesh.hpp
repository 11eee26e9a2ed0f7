#pragma once

// Error-driven remeshing: red-green midpoint subdivision of high-error faces and
// midpoint edge collapse in flat, low-error regions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include "vosh/mesh.hpp"

namespace vosh {

struct RemeshConfig {
    float subdivide_error_quantile = 0.9f;
    float merge_normal_angle_max = 10.0f;  // degrees
    float merge_error_quantile = 0.3f;
    int max_rounds = 1;

    void validate() const {
        auto quantile = [](float q, const char* key) {
            if (!(q > 0.0f && q < 1.0f)) throw DescriptorError(key, "must lie in (0, 1)");
        };
        quantile(subdivide_error_quantile, "remesh.subdivide_error_quantile");
        quantile(merge_error_quantile, "remesh.merge_error_quantile");
        if (!(merge_normal_angle_max > 0.0f && merge_normal_angle_max < 90.0f)) {
            throw DescriptorError("remesh.merge_normal_angle_max", "must lie in (0, 90) degrees");
        }
        if (max_rounds < 0) throw DescriptorError("remesh.max_rounds", "must be non-negative");
    }
};

struct RemeshStats {
    std::size_t subdivided = 0;  // faces split 1->4
    std::size_t split_edges = 0;
    std::size_t collapses = 0;
};

/// Linear-interpolation quantile (the common "type 7" definition).
inline float quantile(std::vector<float> v, float q) {
    if (v.empty()) throw InvalidArgument("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = double(v.size() - 1) * q;
    const std::size_t lo = std::size_t(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return float(v[lo] + (h - double(lo)) * (v[hi] - v[lo]));
}

namespace detail {

inline std::vector<float> observed_errors(const TriMesh& m) {
    std::vector<float> out;
    const bool flags = m.observed.size() == m.faces.size();
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        if (!flags || m.observed[f]) out.push_back(m.face_error[f]);
    }
    if (out.empty()) out = m.face_error;
    return out;
}

inline void push_face_stats(TriMesh& out, const TriMesh& in, std::size_t f) {
    out.face_error.push_back(in.face_error[f]);
    out.normal_change.push_back(in.normal_change[f]);
    out.observed.push_back(in.observed.size() == in.faces.size() ? in.observed[f] : std::uint8_t(1));
}

/// Red-green refinement. Faces flagged red are split 1->4; faces left with two or
/// more split edges are promoted to red; faces with one split edge are split 1->2.
inline TriMesh subdivide(const TriMesh& m, std::vector<std::uint8_t> red, std::size_t& first_new_vertex, RemeshStats& stats) {
    std::set<std::uint64_t> split;
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t f = 0; f < m.faces.size(); ++f) {
            if (!red[f]) continue;
            for (int e = 0; e < 3; ++e) changed |= split.insert(edge_key(m.faces[f][e], m.faces[f][(e + 1) % 3])).second;
        }
        for (std::size_t f = 0; f < m.faces.size(); ++f) {
            if (red[f]) continue;
            int n = 0;
            for (int e = 0; e < 3; ++e) n += split.count(edge_key(m.faces[f][e], m.faces[f][(e + 1) % 3])) > 0;
            if (n >= 2) {
                red[f] = 1;
                changed = true;
            }
        }
    }

    TriMesh out;
    out.positions = m.positions;
    out.diffuse = m.diffuse;
    out.feature = m.feature;
    first_new_vertex = out.positions.size();
    std::map<std::uint64_t, std::uint32_t> mid;
    for (std::uint64_t key : split) {
        const auto a = std::uint32_t(key >> 32), b = std::uint32_t(key & 0xffffffffu);
        mid[key] = std::uint32_t(out.positions.size());
        out.positions.push_back((m.positions[a] + m.positions[b]) * 0.5f);
        out.diffuse.push_back((m.diffuse[a] + m.diffuse[b]) * 0.5f);
        Feature<float> f;
        for (std::size_t c = 0; c < kFeatureDim; ++c) f[c] = 0.5f * (m.feature[a][c] + m.feature[b][c]);
        out.feature.push_back(f);
    }
    stats.split_edges = split.size();

    auto emit = [&](std::size_t parent, const Face& face) {
        out.faces.push_back(face);
        push_face_stats(out, m, parent);
    };
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        const Face& face = m.faces[f];
        if (red[f]) {
            ++stats.subdivided;
            const std::uint32_t a = face[0], b = face[1], c = face[2];
            const std::uint32_t ab = mid[edge_key(a, b)], bc = mid[edge_key(b, c)], ca = mid[edge_key(c, a)];
            emit(f, {a, ab, ca});
            emit(f, {ab, b, bc});
            emit(f, {ca, bc, c});
            emit(f, {ab, bc, ca});
            continue;
        }
        int k = -1;
        for (int e = 0; e < 3; ++e) {
            if (split.count(edge_key(face[e], face[(e + 1) % 3]))) k = e;
        }
        if (k < 0) {
            emit(f, face);
            continue;
        }
        const std::uint32_t a = face[k], b = face[(k + 1) % 3], c = face[(k + 2) % 3];
        const std::uint32_t mab = mid[edge_key(a, b)];
        emit(f, {a, mab, c});
        emit(f, {mab, b, c});
    }
    return out;
}

/// One pass of non-overlapping midpoint edge collapses over edges whose two faces
/// are both mergeable. Vertices at or above `frozen_from` are never moved.
inline TriMesh collapse(const TriMesh& m, const std::vector<std::uint8_t>& mergeable, std::uint32_t frozen_from, float max_angle_deg,
                        RemeshStats& stats) {
    const std::size_t nv = m.positions.size();
    std::vector<std::vector<std::uint32_t>> vfaces(nv);
    for (std::uint32_t f = 0; f < m.faces.size(); ++f) {
        for (auto v : m.faces[f]) vfaces[v].push_back(f);
    }
    const auto edges = edge_faces(m);
    std::vector<std::uint8_t> boundary(nv, 0);
    for (const auto& [key, fs] : edges) {
        if (fs.size() != 2) {
            boundary[key >> 32] = 1;
            boundary[key & 0xffffffffu] = 1;
        }
    }
    auto neighbors = [&](std::uint32_t v) {
        std::set<std::uint32_t> s;
        for (auto f : vfaces[v]) {
            for (auto w : m.faces[f]) {
                if (w != v) s.insert(w);
            }
        }
        return s;
    };

    TriMesh work = m;
    std::vector<std::uint8_t> dead(m.faces.size(), 0), locked(nv, 0);
    std::vector<std::uint32_t> remap(nv);
    for (std::uint32_t v = 0; v < nv; ++v) remap[v] = v;
    const float cos_max = std::cos(max_angle_deg * std::numbers::pi_v<float> / 180.0f);

    for (const auto& [key, fs] : edges) {
        if (fs.size() != 2 || !mergeable[fs[0]] || !mergeable[fs[1]]) continue;
        const auto a = std::uint32_t(key >> 32), b = std::uint32_t(key & 0xffffffffu);
        if (a >= frozen_from || b >= frozen_from || boundary[a] || boundary[b] || locked[a] || locked[b]) continue;
        const auto na = neighbors(a), nb = neighbors(b);
        std::vector<std::uint32_t> common;
        std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(), std::back_inserter(common));
        if (common.size() != 2) continue;
        bool touches_locked = false;
        for (auto v : na) touches_locked |= locked[v] != 0;
        for (auto v : nb) touches_locked |= locked[v] != 0;
        if (touches_locked) continue;

        const Vec3f p = (m.positions[a] + m.positions[b]) * 0.5f;
        bool ok = true;
        for (auto v : {a, b}) {
            for (auto f : vfaces[v]) {
                if (f == fs[0] || f == fs[1]) continue;
                Face nf = m.faces[f];
                for (auto& i : nf) {
                    if (i == b) i = a;
                }
                const Vec3f before = face_normal(m, f);
                const Vec3f e1 = (nf[1] == a ? p : m.positions[nf[1]]) - (nf[0] == a ? p : m.positions[nf[0]]);
                const Vec3f e2 = (nf[2] == a ? p : m.positions[nf[2]]) - (nf[0] == a ? p : m.positions[nf[0]]);
                const Vec3f raw = cross(e1, e2);
                const float len = norm(raw);
                if (!(len > 1e-12f) || dot(raw / len, before) < cos_max) {
                    ok = false;
                    break;
                }
            }
            if (!ok) break;
        }
        if (!ok) continue;

        work.positions[a] = p;
        work.diffuse[a] = (m.diffuse[a] + m.diffuse[b]) * 0.5f;
        for (std::size_t c = 0; c < kFeatureDim; ++c) work.feature[a][c] = 0.5f * (m.feature[a][c] + m.feature[b][c]);
        remap[b] = a;
        dead[fs[0]] = dead[fs[1]] = 1;
        locked[a] = locked[b] = 1;
        for (auto v : na) locked[v] = 1;
        for (auto v : nb) locked[v] = 1;
        ++stats.collapses;
    }

    std::vector<std::uint8_t> keep(work.faces.size());
    for (std::size_t f = 0; f < work.faces.size(); ++f) {
        keep[f] = !dead[f];
        for (auto& i : work.faces[f]) i = remap[i];
    }
    return select_faces(work, keep);
}

}  // namespace detail

/// Runs up to `max_rounds` rounds of subdivision followed by collapse. Requires
/// per-face error and normal change; children inherit their parent's error.
inline TriMesh remesh(const TriMesh& mesh, const RemeshConfig& cfg, RemeshStats* stats_out = nullptr) {
    cfg.validate();
    if (!mesh.has_stats()) throw ContractViolation("remesh: per-face error and normal change are required");
    RemeshStats stats;
    TriMesh m = mesh;
    for (int round = 0; round < cfg.max_rounds && !m.empty(); ++round) {
        if (m.diffuse.size() != m.positions.size() || m.feature.size() != m.positions.size()) m.ensure_appearance();
        const auto errors = detail::observed_errors(m);
        const float q_sub = quantile(errors, cfg.subdivide_error_quantile);
        const float q_merge = quantile(errors, cfg.merge_error_quantile);

        std::vector<std::uint8_t> red(m.faces.size());
        for (std::size_t f = 0; f < m.faces.size(); ++f) red[f] = m.face_error[f] > q_sub;
        std::size_t first_new = 0;
        m = detail::subdivide(m, red, first_new, stats);

        std::vector<std::uint8_t> mergeable(m.faces.size());
        for (std::size_t f = 0; f < m.faces.size(); ++f) {
            mergeable[f] = m.face_error[f] <= q_merge && m.normal_change[f] < cfg.merge_normal_angle_max;
        }
        m = detail::collapse(m, mergeable, std::uint32_t(first_new), cfg.merge_normal_angle_max, stats);
        m = remove_degenerate(m);
        m.normal_change = compute_normal_change(m);
    }
    if (stats_out) *stats_out = stats;
    return m;
}

}  // namespace vosh
