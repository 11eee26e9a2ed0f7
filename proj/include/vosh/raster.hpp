#pragma once

// Software rasterizer producing a G-buffer of depth, face id, perspective-correct
// barycentrics and interpolated appearance. Mesh vertices are stored in
// contracted space and uncontracted before projection.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "vosh/mesh.hpp"
#include "vosh/parallel.hpp"
#include "vosh/scene.hpp"

namespace vosh {

inline constexpr std::uint32_t kMissFace = std::numeric_limits<std::uint32_t>::max();
inline constexpr float kMissAttribute = -1.0f;

struct GBuffer {
    int width = 0, height = 0;
    std::vector<float> depth;                   // camera-space z, +inf on miss
    std::vector<std::uint32_t> face;            // kMissFace on miss
    std::vector<std::array<float, 3>> bary;     // kMissAttribute on miss
    std::vector<Rgb<float>> diffuse;            // kMissAttribute on miss
    std::vector<Feature<float>> feature;        // kMissAttribute on miss

    GBuffer() = default;
    GBuffer(int w, int h) : width(w), height(h) {
        const std::size_t n = std::size_t(w) * h;
        depth.assign(n, std::numeric_limits<float>::infinity());
        face.assign(n, kMissFace);
        bary.assign(n, {kMissAttribute, kMissAttribute, kMissAttribute});
        diffuse.assign(n, Rgb<float>{kMissAttribute, kMissAttribute, kMissAttribute});
        Feature<float> f;
        f.fill(kMissAttribute);
        feature.assign(n, f);
    }
    std::size_t index(int x, int y) const { return std::size_t(y) * width + x; }
    bool hit(std::size_t p) const { return face[p] != kMissFace; }
    std::size_t hit_count() const {
        std::size_t n = 0;
        for (auto f : face) n += f != kMissFace;
        return n;
    }
};

/// Ray parameter of a camera-space depth along a unit pixel ray.
inline float depth_to_t(const Camera& cam, const Vec3f& dir, float z) { return z / dot(dir, cam.forward()); }

/// World-space vertex positions of a contracted-space mesh.
inline std::vector<Vec3f> world_positions(const TriMesh& mesh) {
    std::vector<Vec3f> out(mesh.positions.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncontract(mesh.positions[i]);
    return out;
}

namespace detail {

struct ClipVertex {
    Vec3d cam;                   // camera-space position
    std::array<double, 3> bary;  // weights of the original triangle's vertices
};

inline constexpr double kNear = 1e-4;

/// Clips a triangle against z >= kNear; returns 0, 3 or 4 vertices.
inline int clip_near(const std::array<ClipVertex, 3>& in, std::array<ClipVertex, 4>& out) {
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const ClipVertex& a = in[i];
        const ClipVertex& b = in[(i + 1) % 3];
        const bool ain = a.cam.z >= kNear, bin = b.cam.z >= kNear;
        if (ain) out[n++] = a;
        if (ain != bin) {
            const double t = (kNear - a.cam.z) / (b.cam.z - a.cam.z);
            ClipVertex c;
            c.cam = a.cam + (b.cam - a.cam) * t;
            c.cam.z = kNear;
            for (int k = 0; k < 3; ++k) c.bary[k] = a.bary[k] + (b.bary[k] - a.bary[k]) * t;
            out[n++] = c;
        }
    }
    return n;
}

}  // namespace detail

/// Z-buffered rasterization without back-face culling. A pixel is covered when
/// its center lies inside or on the edge of a projected triangle; at equal depth
/// the lowest face id wins.
inline GBuffer rasterize(const TriMesh& mesh, const Camera& cam, bool with_attributes = true) {
    cam.validate();
    GBuffer g(cam.width, cam.height);
    if (mesh.empty()) return g;
    const std::vector<Vec3f> world = world_positions(mesh);
    std::vector<Vec3d> camspace(world.size());
    const Vec3d pos(cam.position), r(cam.right()), u(cam.up()), fw(cam.forward());
    for (std::size_t i = 0; i < world.size(); ++i) {
        const Vec3d d = Vec3d(world[i]) - pos;
        camspace[i] = {dot(d, r), dot(d, u), dot(d, fw)};
    }
    const double f = cam.focal, hw = 0.5 * cam.width, hh = 0.5 * cam.height;

    parallel_for(std::size_t(cam.height), [&](std::size_t row0, std::size_t row1) {
        for (std::uint32_t fi = 0; fi < mesh.faces.size(); ++fi) {
            const Face& face = mesh.faces[fi];
            std::array<detail::ClipVertex, 3> tri;
            for (int k = 0; k < 3; ++k) {
                tri[k].cam = camspace[face[k]];
                tri[k].bary = {k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0, k == 2 ? 1.0 : 0.0};
            }
            std::array<detail::ClipVertex, 4> poly;
            const int nv = detail::clip_near(tri, poly);
            for (int s = 1; s + 1 < nv; ++s) {
                const detail::ClipVertex* v[3] = {&poly[0], &poly[s], &poly[s + 1]};
                double sx[3], sy[3], iz[3];
                for (int k = 0; k < 3; ++k) {
                    iz[k] = 1.0 / v[k]->cam.z;
                    sx[k] = f * v[k]->cam.x * iz[k] + hw;
                    sy[k] = -f * v[k]->cam.y * iz[k] + hh;
                }
                const double area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sx[2] - sx[0]) * (sy[1] - sy[0]);
                if (area == 0.0 || !std::isfinite(area)) continue;
                const double minx = std::min({sx[0], sx[1], sx[2]}), maxx = std::max({sx[0], sx[1], sx[2]});
                const double miny = std::min({sy[0], sy[1], sy[2]}), maxy = std::max({sy[0], sy[1], sy[2]});
                const int x0 = std::max(0, int(std::ceil(minx - 0.5))), x1 = std::min(cam.width - 1, int(std::floor(maxx - 0.5)));
                const int y0 = std::max(int(row0), int(std::ceil(miny - 0.5)));
                const int y1 = std::min(int(row1) - 1, int(std::floor(maxy - 0.5)));
                for (int y = y0; y <= y1; ++y) {
                    const double py = y + 0.5;
                    for (int x = x0; x <= x1; ++x) {
                        const double px = x + 0.5;
                        double l[3];
                        for (int k = 0; k < 3; ++k) {
                            const int a = (k + 1) % 3, b = (k + 2) % 3;
                            l[k] = ((sx[b] - sx[a]) * (py - sy[a]) - (sy[b] - sy[a]) * (px - sx[a])) / area;
                        }
                        if (l[0] < 0.0 || l[1] < 0.0 || l[2] < 0.0) continue;
                        const double q0 = l[0] * iz[0], q1 = l[1] * iz[1], q2 = l[2] * iz[2];
                        const double z = 1.0 / (q0 + q1 + q2);
                        const std::size_t p = g.index(x, y);
                        if (!(float(z) < g.depth[p])) continue;
                        g.depth[p] = float(z);
                        g.face[p] = fi;
                        const double b[3] = {q0 * z, q1 * z, q2 * z};
                        for (int k = 0; k < 3; ++k) {
                            g.bary[p][k] = float(b[0] * v[0]->bary[k] + b[1] * v[1]->bary[k] + b[2] * v[2]->bary[k]);
                        }
                    }
                }
            }
        }
    });
    if (with_attributes && mesh.diffuse.size() == mesh.positions.size()) {
        for (std::size_t p = 0; p < g.face.size(); ++p) {
            if (!g.hit(p)) continue;
            const Face& face = mesh.faces[g.face[p]];
            Rgb<float> c{};
            Feature<float> ft{};
            for (int k = 0; k < 3; ++k) {
                const float w = g.bary[p][k];
                c += mesh.diffuse[face[k]] * w;
                for (std::size_t ch = 0; ch < kFeatureDim; ++ch) ft[ch] += w * mesh.feature[face[k]][ch];
            }
            g.diffuse[p] = c;
            g.feature[p] = ft;
        }
    }
    return g;
}

}  // namespace vosh
