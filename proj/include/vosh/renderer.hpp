#pragma once

// Two-pass renderer for loaded assets: rasterize the mesh, then march each ray
// through the occupancy pyramid up to the rasterized depth.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vosh/bake.hpp"

namespace vosh {

struct RenderOptions {
    bool pyramid_skip = true;
    bool depth_termination = true;
    float step_fraction = 0.5f;
};

struct RenderStats {
    std::uint64_t samples_evaluated = 0;
    std::uint64_t samples_skipped = 0;
    std::uint64_t rays_terminated = 0;  // rays whose march stopped at the mesh depth
    std::uint64_t rays_total = 0;
    double seconds = 0.0;

    double samples_per_ray() const { return rays_total ? double(samples_evaluated) / double(rays_total) : 0.0; }
    RenderStats& operator+=(const RenderStats& o) {
        samples_evaluated += o.samples_evaluated;
        samples_skipped += o.samples_skipped;
        rays_terminated += o.rays_terminated;
        rays_total += o.rays_total;
        seconds += o.seconds;
        return *this;
    }
};

/// Skips samples whose eight trilinear corners are all dead per the pyramid.
class PyramidSkip {
public:
    explicit PyramidSkip(const OccupancyPyramid& p) : p_(&p) {}
    bool operator()(const TrilinearSample& s) const { return pyramid_block_empty(*p_, s.i, s.j, s.k); }

private:
    const OccupancyPyramid* p_;
};

struct FrameResult {
    Image image;
    RenderStats stats;
};

namespace detail {

/// Samples of a full march whose midpoint lies before t_limit.
template <class Skip>
ShadedRay<float> render_untruncated(const VoxelGrid& grid, const MlpHead<float>& head, const Ray& ray, const SurfaceInput& surface,
                                    RayWorkspace& ws, const MarchParams& params, const Skip& skip) {
    ws.clear();
    const int res = grid.resolution();
    march_ray(ray, params, std::numeric_limits<float>::infinity(), [&](const MarchSegment& seg) {
        if (0.5f * (seg.t0 + seg.t1) >= surface.t_hit) return;
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
    surf.diffuse = surface.diffuse;
    surf.feature = surface.feature;
    return forward_render_path<float>(ws.sigmas, ws.deltas, ws.diffuses, ws.features, &surf, ray.dir, head, ws.cache);
}

}  // namespace detail

inline FrameResult render_frame(const LoadedAsset& asset, const Camera& cam, const RenderOptions& opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const Vosh& v = asset.vosh;
    const GBuffer g = rasterize(v.mesh, cam, true);
    const MarchParams params = march_params_for(v.grid.resolution(), opt.step_fraction);
    const PyramidSkip pyramid(asset.pyramid);

    FrameResult out{Image(cam.width, cam.height), {}};
    std::atomic<std::uint64_t> evaluated{0}, skipped{0}, terminated{0};
    parallel_for(std::size_t(cam.height), [&](std::size_t y0, std::size_t y1) {
        RayWorkspace ws;
        std::uint64_t term = 0;
        for (std::size_t y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Ray ray = cam.pixel_ray(x, int(y));
                const SurfaceHit hit = surface_hit_at(g, cam, x, int(y));
                const SurfaceInput surface{hit.depth, hit.diffuse, hit.feature};
                ShadedRay<float> shaded;
                if (hit.hit && !opt.depth_termination) {
                    shaded = opt.pyramid_skip ? detail::render_untruncated(v.grid, v.head, ray, surface, ws, params, pyramid)
                                              : detail::render_untruncated(v.grid, v.head, ray, surface, ws, params, NoSkip{});
                } else {
                    const SurfaceInput* s = hit.hit ? &surface : nullptr;
                    shaded = opt.pyramid_skip ? render_grid_ray(v.grid, v.head, ray, s, ws, params, pyramid)
                                              : render_grid_ray(v.grid, v.head, ray, s, ws, params);
                    term += hit.hit;
                }
                out.image.set(x, int(y), shaded.final_color);
            }
        }
        evaluated += ws.samples_evaluated;
        skipped += ws.samples_skipped;
        terminated += term;
    });
    out.stats.samples_evaluated = evaluated;
    out.stats.samples_skipped = skipped;
    out.stats.rays_terminated = terminated;
    out.stats.rays_total = std::uint64_t(cam.width) * cam.height;
    out.stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark

/// Evenly spaced orbit at the mid elevation of the capture rig.
inline std::vector<Camera> camera_path(std::size_t n, int width, int height, const CameraRig& rig = {}) {
    std::vector<Camera> out;
    const float focal = focal_from_fov(rig.fov_deg, width);
    const double el = 0.5 * (rig.min_elevation_deg + rig.max_elevation_deg) * std::numbers::pi / 180.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double az = 2.0 * std::numbers::pi * double(k) / double(n) + 0.1;
        const Vec3f eye(float(rig.radius * std::cos(el) * std::cos(az)), float(rig.radius * std::sin(el)),
                        float(rig.radius * std::cos(el) * std::sin(az)));
        out.push_back(Camera::look_at(eye, {0, 0, 0}, {0, 1, 0}, focal, width, height));
    }
    return out;
}

struct BenchReport {
    std::size_t frames = 0;
    RenderStats total;
    double mean_samples_per_ray = 0.0;
    double mean_frame_seconds = 0.0;

    nlohmann::json to_json() const {
        return {{"frames", frames},
                {"samples_evaluated", total.samples_evaluated},
                {"samples_skipped", total.samples_skipped},
                {"rays_terminated", total.rays_terminated},
                {"rays_total", total.rays_total},
                {"mean_samples_per_ray", mean_samples_per_ray},
                {"mean_frame_seconds", mean_frame_seconds}};
    }
};

inline BenchReport bench(const LoadedAsset& asset, const std::vector<Camera>& path, const RenderOptions& opt = {}) {
    if (path.size() < 2) throw InvalidArgument("bench: camera path needs at least 2 cameras");
    BenchReport r;
    for (const Camera& cam : path) r.total += render_frame(asset, cam, opt).stats;
    r.frames = path.size();
    r.mean_samples_per_ray = r.total.samples_per_ray();
    r.mean_frame_seconds = r.total.seconds / double(r.frames);
    return r;
}

}  // namespace vosh
