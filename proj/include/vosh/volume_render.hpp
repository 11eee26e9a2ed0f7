#pragma once

// Volume rendering of a VoxelGrid along one ray, optionally terminated by a
// rasterized surface, plus the scatter of per-sample gradients onto voxels.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "vosh/core_field.hpp"
#include "vosh/voxel_grid.hpp"

namespace vosh {

/// Surface reached by the ray: marching stops at t_hit and the surface takes
/// the leftover weight.
struct SurfaceInput {
    float t_hit = std::numeric_limits<float>::infinity();
    Rgb<float> diffuse{};
    Feature<float> feature{};
};

/// Reusable per-ray scratch space. After a render call it holds the sample
/// trace (only samples with non-zero density) and the forward cache.
struct RayWorkspace {
    std::vector<TrilinearSample> locs;
    std::vector<float> sigmas, deltas;
    std::vector<Rgb<float>> diffuses;
    std::vector<Feature<float>> features;
    RenderPathCache<float> cache;
    std::uint64_t samples_evaluated = 0;
    std::uint64_t samples_skipped = 0;

    void clear() {
        locs.clear();
        sigmas.clear();
        deltas.clear();
        diffuses.clear();
        features.clear();
    }
};

struct NoSkip {
    bool operator()(const TrilinearSample&) const { return false; }
};

/// Renders one ray. Samples for which `skip` returns true are not evaluated
/// and contribute nothing; callers must only skip samples whose eight corners
/// are empty (or accept the approximation, as grid training does).
template <class Skip = NoSkip>
ShadedRay<float> render_grid_ray(const VoxelGrid& grid, const MlpHead<float>& head, const Ray& ray,
                                 const SurfaceInput* surface, RayWorkspace& ws, const MarchParams& params,
                                 const Skip& skip = Skip{}) {
    if (std::abs(norm(ray.dir) - 1.0f) > 1e-4f) throw InvalidArgument("render_grid_ray: ray direction is not unit length");
    ws.clear();
    const float t_stop = surface ? surface->t_hit : std::numeric_limits<float>::infinity();
    const int res = grid.resolution();
    march_ray(ray, params, t_stop, [&](const MarchSegment& seg) {
        const TrilinearSample loc = locate(res, seg.mid);
        if (skip(loc)) {
            ++ws.samples_skipped;
            return;
        }
        ++ws.samples_evaluated;
        const float sigma = sample_density(grid, loc);
        if (!(sigma > 0.0f)) return;
        Rgb<float> c;
        Feature<float> f;
        sample_appearance(grid, loc, c, f);
        ws.locs.push_back(loc);
        ws.sigmas.push_back(sigma);
        ws.deltas.push_back(seg.delta);
        ws.diffuses.push_back(c);
        ws.features.push_back(f);
    });
    DeferredSum<float> surf;
    if (surface) {
        surf.diffuse = surface->diffuse;
        surf.feature = surface->feature;
    }
    return forward_render_path<float>(ws.sigmas, ws.deltas, ws.diffuses, ws.features, surface ? &surf : nullptr, ray.dir,
                                      head, ws.cache);
}

struct VolumeRenderResult {
    ShadedRay<float> shaded;
    RayWeights<float> weights;
    std::vector<TrilinearSample> trace;
};

/// Fixed-step volume rendering through the whole grid.
inline VolumeRenderResult volume_render_ray(const VoxelGrid& grid, const MlpHead<float>& head, const Ray& ray,
                                            float step_fraction = 0.5f) {
    RayWorkspace ws;
    VolumeRenderResult out;
    out.shaded = render_grid_ray(grid, head, ray, nullptr, ws, march_params_for(grid.resolution(), step_fraction));
    out.weights = ws.cache.weights;
    out.trace = ws.locs;
    return out;
}

// ---------------------------------------------------------------------------
// Gradient accumulation on voxels

/// Dense gradient buffer over raw voxel parameters with a touched-voxel list.
class GridGradient {
public:
    explicit GridGradient(std::size_t voxels) : grad_(voxels * kChannels, 0.0f), touched_(voxels, 0) {}

    /// Scatters per-sample gradients (w.r.t. decoded density/appearance) onto
    /// the eight corner voxels' raw parameters. Dead voxels receive nothing.
    void add_sample(const VoxelGrid& grid, const TrilinearSample& loc, float g_sigma, const Rgb<float>& g_diffuse,
                    const Feature<float>& g_feature) {
        for (int c = 0; c < 8; ++c) {
            const float w = loc.corner_weight(c);
            if (w == 0.0f) continue;
            const std::size_t v = corner_index(grid, loc, c);
            if (!grid.alive(v)) continue;
            float* g = touch(v);
            g[0] += w * g_sigma * grid.decode_derivative(v, 0);
            for (int ch = 0; ch < 3; ++ch) g[1 + ch] += w * g_diffuse[ch] * grid.decode_derivative(v, 1 + ch);
            for (std::size_t ch = 0; ch < kFeatureDim; ++ch) g[4 + ch] += w * g_feature[ch] * grid.decode_derivative(v, 4 + ch);
        }
    }

    /// Density-only scatter; voxels flagged in `blocked` are left untouched.
    void add_density(const VoxelGrid& grid, const TrilinearSample& loc, float g_sigma, const std::vector<std::uint8_t>* blocked) {
        for (int c = 0; c < 8; ++c) {
            const float w = loc.corner_weight(c);
            if (w == 0.0f) continue;
            const std::size_t v = corner_index(grid, loc, c);
            if (!grid.alive(v) || (blocked && (*blocked)[v])) continue;
            touch(v)[0] += w * g_sigma * grid.decode_derivative(v, 0);
        }
    }

    const std::vector<std::uint32_t>& touched() const { return list_; }
    std::span<const float> grad(std::size_t v) const { return {grad_.data() + v * kChannels, kChannels}; }
    std::span<float> grad(std::size_t v) { return {grad_.data() + v * kChannels, kChannels}; }

    void clear() {
        for (std::uint32_t v : list_) {
            std::fill_n(grad_.data() + std::size_t(v) * kChannels, kChannels, 0.0f);
            touched_[v] = 0;
        }
        list_.clear();
    }

private:
    float* touch(std::size_t v) {
        if (!touched_[v]) {
            touched_[v] = 1;
            list_.push_back(std::uint32_t(v));
        }
        return grad_.data() + v * kChannels;
    }

    std::vector<float> grad_;
    std::vector<std::uint8_t> touched_;
    std::vector<std::uint32_t> list_;
};

/// Adam state for the voxel grid; only voxels touched in a step are updated.
class GridAdam {
public:
    GridAdam(std::size_t voxels, float lr, float beta1 = 0.9f, float beta2 = 0.99f, float eps = 1e-8f)
        : m_(voxels * kChannels, 0.0f), v_(voxels * kChannels, 0.0f), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(VoxelGrid& grid, const GridGradient& grad) {
        ++t_;
        const float c1 = 1.0f - std::pow(b1_, float(t_));
        const float c2 = 1.0f - std::pow(b2_, float(t_));
        for (std::uint32_t vox : grad.touched()) {
            auto g = grad.grad(vox);
            auto raw = grid.raw(vox);
            for (std::size_t c = 0; c < kChannels; ++c) {
                float& m = m_[vox * kChannels + c];
                float& v = v_[vox * kChannels + c];
                m = b1_ * m + (1.0f - b1_) * g[c];
                v = b2_ * v + (1.0f - b2_) * g[c] * g[c];
                raw[c] -= lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
            }
            grid.decode_voxel(vox);
        }
    }

    void set_lr(float lr) { lr_ = lr; }

private:
    std::vector<float> m_, v_;
    float lr_, b1_, b2_, eps_;
    long t_ = 0;
};

template <std::size_t N>
class DenseAdam {
public:
    explicit DenseAdam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::span<float, N> params, std::span<const float, N> grad) {
        ++t_;
        const float c1 = 1.0f - std::pow(b1_, float(t_));
        const float c2 = 1.0f - std::pow(b2_, float(t_));
        for (std::size_t i = 0; i < N; ++i) {
            m_[i] = b1_ * m_[i] + (1.0f - b1_) * grad[i];
            v_[i] = b2_ * v_[i] + (1.0f - b2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

private:
    std::array<float, N> m_{}, v_{};
    float lr_, b1_, b2_, eps_;
    long t_ = 0;
};

}  // namespace vosh
