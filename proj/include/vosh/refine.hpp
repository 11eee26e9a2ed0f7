#pragma once

// Mesh appearance refinement: per-vertex diffuse and features are fitted to the
// training images through rasterization and the shared MLP head. Only pixels
// whose ray hits the mesh contribute.

#include <cmath>
#include <cstdint>
#include <vector>

#include "vosh/core_field.hpp"
#include "vosh/mesh.hpp"
#include "vosh/raster.hpp"
#include "vosh/scene.hpp"
#include "vosh/voxel_grid.hpp"

namespace vosh {

struct RefineConfig {
    int iterations = 100;
    float lr = 0.01f;

    void validate() const {
        if (iterations < 0) throw DescriptorError("refine.iterations", "must be non-negative");
        if (!(lr > 0.0f)) throw DescriptorError("refine.lr", "must be positive");
    }
};

struct RefineResult {
    TriMesh mesh;  // with face_error, observed and normal_change filled
    std::vector<float> loss_curve;
};

/// Per-vertex appearance from the voxel field at each vertex position.
inline void init_mesh_appearance(TriMesh& mesh, const VoxelGrid& grid) {
    mesh.ensure_appearance();
    for (std::size_t v = 0; v < mesh.positions.size(); ++v) {
        sample_appearance(grid, locate(grid.resolution(), mesh.positions[v]), mesh.diffuse[v], mesh.feature[v]);
    }
}

/// One mesh-covered pixel of a training view.
struct SurfacePixel {
    std::uint32_t face;
    std::array<float, 3> bary;
    Vec3f dir;
    Vec3f target;
};

inline std::vector<SurfacePixel> collect_surface_pixels(const TriMesh& mesh, const std::vector<const View*>& views) {
    std::vector<SurfacePixel> out;
    for (const View* view : views) {
        const GBuffer g = rasterize(mesh, view->camera, false);
        for (int y = 0; y < g.height; ++y) {
            for (int x = 0; x < g.width; ++x) {
                const std::size_t p = g.index(x, y);
                if (!g.hit(p)) continue;
                out.push_back({g.face[p], g.bary[p], view->camera.pixel_ray(x, y).dir, view->image.at(x, y)});
            }
        }
    }
    return out;
}

inline void interpolate_surface(const TriMesh& mesh, const SurfacePixel& px, Rgb<float>& c, Feature<float>& f) {
    c = {};
    f = {};
    const Face& face = mesh.faces[px.face];
    for (int k = 0; k < 3; ++k) {
        c += mesh.diffuse[face[k]] * px.bary[k];
        for (std::size_t ch = 0; ch < kFeatureDim; ++ch) f[ch] += px.bary[k] * mesh.feature[face[k]][ch];
    }
}

/// Adam over per-vertex appearance, projected back onto [0, 1] after each step.
class VertexAdam {
public:
    static constexpr std::size_t kWidth = 3 + kFeatureDim;

    VertexAdam(std::size_t vertices, float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : m_(vertices * kWidth, 0.0f), v_(vertices * kWidth, 0.0f), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(TriMesh& mesh, const std::vector<float>& grad) {
        ++t_;
        const float c1 = 1.0f - std::pow(b1_, float(t_));
        const float c2 = 1.0f - std::pow(b2_, float(t_));
        for (std::size_t vtx = 0; vtx < mesh.positions.size(); ++vtx) {
            for (std::size_t c = 0; c < kWidth; ++c) {
                const std::size_t i = vtx * kWidth + c;
                const float g = grad[i];
                m_[i] = b1_ * m_[i] + (1.0f - b1_) * g;
                v_[i] = b2_ * v_[i] + (1.0f - b2_) * g * g;
                float& p = c < 3 ? mesh.diffuse[vtx][int(c)] : mesh.feature[vtx][c - 3];
                p = std::clamp(p - lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_), 0.0f, 1.0f);
            }
        }
    }

private:
    std::vector<float> m_, v_;
    float lr_, b1_, b2_, eps_;
    long t_ = 0;
};

/// Scatters appearance gradients at a surface point onto the face's vertices.
inline void scatter_vertex_grad(const TriMesh& mesh, std::uint32_t face, const std::array<float, 3>& bary,
                                const Rgb<float>& g_diffuse, const Feature<float>& g_feature, std::vector<float>& grad) {
    for (int k = 0; k < 3; ++k) {
        float* g = grad.data() + std::size_t(mesh.faces[face][k]) * VertexAdam::kWidth;
        for (int c = 0; c < 3; ++c) g[c] += bary[k] * g_diffuse[c];
        for (std::size_t c = 0; c < kFeatureDim; ++c) g[3 + c] += bary[k] * g_feature[c];
    }
}

/// Per-face mean squared error over the pixels each face owns; faces owning no
/// pixel get error 0 and observed = 0.
inline void measure_face_error(TriMesh& mesh, const MlpHead<float>& head, const std::vector<SurfacePixel>& pixels) {
    std::vector<double> sum(mesh.faces.size(), 0.0);
    std::vector<std::size_t> count(mesh.faces.size(), 0);
    for (const auto& px : pixels) {
        Rgb<float> c;
        Feature<float> f;
        interpolate_surface(mesh, px, c, f);
        const Vec3f diff = mlp_forward(c, f, px.dir, head) - px.target;
        sum[px.face] += dot(diff, diff) / 3.0;
        ++count[px.face];
    }
    mesh.face_error.assign(mesh.faces.size(), 0.0f);
    mesh.observed.assign(mesh.faces.size(), 0);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (count[f] == 0) continue;
        mesh.face_error[f] = float(sum[f] / double(count[f]));
        mesh.observed[f] = 1;
    }
    mesh.normal_change = compute_normal_change(mesh);
}

/// Fits per-vertex appearance to the training views with the head frozen.
/// Positions and topology are never modified.
inline RefineResult refine_appearance(const TriMesh& mesh, const MlpHead<float>& head, const MultiViewDataset& dataset,
                                      const RefineConfig& cfg) {
    cfg.validate();
    const auto views = dataset.train();
    if (views.empty()) throw InvalidArgument("refine_appearance: dataset has no training views");
    if (mesh.empty()) throw InvalidArgument("refine_appearance: mesh is empty");
    mesh.validate();

    RefineResult out;
    out.mesh = mesh;
    TriMesh& m = out.mesh;
    const auto pixels = collect_surface_pixels(m, views);
    VertexAdam adam(m.positions.size(), cfg.lr);
    std::vector<float> grad(m.positions.size() * VertexAdam::kWidth);
    const float scale = pixels.empty() ? 0.0f : 2.0f / (3.0f * float(pixels.size()));
    MlpHead<float> unused;
    MlpCache<float> cache;
    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0f);
        double loss = 0.0;
        for (const auto& px : pixels) {
            Rgb<float> c;
            Feature<float> f;
            interpolate_surface(m, px, c, f);
            const Vec3f diff = mlp_forward(c, f, px.dir, head, &cache) - px.target;
            loss += dot(diff, diff);
            const auto gin = mlp_backward(cache, head, diff * scale, unused);
            scatter_vertex_grad(m, px.face, px.bary, gin.diffuse, gin.feature, grad);
        }
        out.loss_curve.push_back(pixels.empty() ? 0.0f : float(loss / (3.0 * double(pixels.size()))));
        adam.step(m, grad);
    }
    measure_face_error(m, head, pixels);
    return out;
}

/// Convenience: initialize appearance from the grid, then refine.
inline RefineResult refine_appearance(const TriMesh& mesh, const VoxelGrid& grid, const MlpHead<float>& head,
                                      const MultiViewDataset& dataset, const RefineConfig& cfg) {
    TriMesh init = mesh;
    init_mesh_appearance(init, grid);
    return refine_appearance(init, head, dataset, cfg);
}

}  // namespace vosh
