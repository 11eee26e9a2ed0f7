#pragma once

// Joint voxel + mesh optimization: hybrid ray rendering where the rasterized
// surface terminates marching, the voxel adjustment loss pushing the surface
// weight toward one, the mesh-occupancy grid and final voxel pruning.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "vosh/grid_trainer.hpp"
#include "vosh/raster.hpp"
#include "vosh/refine.hpp"
#include "vosh/volume_render.hpp"

namespace vosh {

struct SurfaceHit {
    bool hit = false;
    float depth = std::numeric_limits<float>::infinity();  // ray parameter t
    Rgb<float> diffuse{};
    Feature<float> feature{};
    float w_m = 0.0f;  // filled by hybrid_render_ray
    Vec3f dir{};       // ray direction the hit was produced for
};

struct HybridRayResult {
    ShadedRay<float> shaded;
    float w_m = 0.0f;
    RayWeights<float> weights;
};

/// Surface hit for pixel (x, y) of a rasterized G-buffer with attributes.
inline SurfaceHit surface_hit_at(const GBuffer& g, const Camera& cam, int x, int y) {
    SurfaceHit h;
    h.dir = cam.pixel_ray(x, y).dir;
    const std::size_t p = g.index(x, y);
    if (!g.hit(p)) return h;
    h.hit = true;
    h.depth = depth_to_t(cam, h.dir, g.depth[p]);
    h.diffuse = g.diffuse[p];
    h.feature = g.feature[p];
    return h;
}

/// Renders one ray that stops at the mesh hit. Without a hit this is exactly
/// grid volume rendering.
template <class Skip = NoSkip>
HybridRayResult hybrid_render_ray(const VoxelGrid& grid, SurfaceHit& hit, const MlpHead<float>& head, const Ray& ray,
                                  RayWorkspace& ws, const MarchParams& params, const Skip& skip = Skip{}) {
    if (!(norm(hit.dir - ray.dir) <= 1e-6f)) throw ContractViolation("hybrid_render_ray: surface hit belongs to a different ray");
    HybridRayResult out;
    if (!hit.hit) {
        out.shaded = render_grid_ray(grid, head, ray, nullptr, ws, params, skip);
        hit.w_m = 0.0f;
    } else {
        const SurfaceInput surface{hit.depth, hit.diffuse, hit.feature};
        out.shaded = render_grid_ray(grid, head, ray, &surface, ws, params, skip);
        hit.w_m = ws.cache.surface_weight;
    }
    out.w_m = hit.w_m;
    out.weights = ws.cache.weights;
    return out;
}

inline HybridRayResult hybrid_render_ray(const VoxelGrid& grid, SurfaceHit& hit, const MlpHead<float>& head, const Ray& ray) {
    RayWorkspace ws;
    return hybrid_render_ray(grid, hit, head, ray, ws, march_params_for(grid.resolution()));
}

/// lambda * mean(1 - exp(w_m - 1)) over surface-hitting rays.
inline double voxel_adjust_loss(std::span<const float> w_m, double lambda) {
    if (w_m.empty()) throw InvalidArgument("voxel_adjust_loss: no surface-hitting rays");
    if (lambda < 0.0) throw InvalidArgument("voxel_adjust_loss: lambda must be non-negative");
    double sum = 0.0;
    for (float w : w_m) {
        if (!(w >= 0.0f && w <= 1.0f)) throw InvalidArgument("voxel_adjust_loss: surface weight outside [0, 1]");
        sum += 1.0 - std::exp(double(w) - 1.0);
    }
    return lambda * sum / double(w_m.size());
}

/// Density gradient of scale * (1 - exp(w_m - 1)) for the ray last rendered
/// into `ws`, using d w_m / d sigma_i = -delta_i * w_m. Voxels flagged in
/// `blocked` receive nothing.
inline void add_adjust_gradient(const VoxelGrid& grid, const RayWorkspace& ws, float w_m, float scale,
                                const std::vector<std::uint8_t>* blocked, GridGradient& grad) {
    if (!(w_m > 0.0f)) return;
    const float base = scale * std::exp(w_m - 1.0f) * w_m;
    for (std::size_t s = 0; s < ws.locs.size(); ++s) grad.add_density(grid, ws.locs[s], base * ws.deltas[s], blocked);
}

// ---------------------------------------------------------------------------
// Mesh occupancy

/// Binary grid over the contracted box marking cells that contain a visible
/// surface point. Resolution 0 means disabled (nothing occupied).
struct MeshOccupancy {
    int resolution = 0;
    std::vector<std::uint8_t> cells;

    bool enabled() const { return resolution > 0; }
    std::size_t index(int i, int j, int k) const { return (std::size_t(k) * resolution + j) * resolution + i; }
    static int cell_coord(float c, int res) { return std::clamp(int(std::floor((c + 2.0f) * 0.25f * float(res))), 0, res - 1); }
    std::size_t cell_of(const Vec3f& contracted) const {
        return index(cell_coord(contracted.x, resolution), cell_coord(contracted.y, resolution), cell_coord(contracted.z, resolution));
    }
    bool occupied(const Vec3f& contracted) const { return enabled() && cells[cell_of(contracted)] != 0; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto c : cells) n += c;
        return n;
    }
    bool operator==(const MeshOccupancy&) const = default;
};

inline void check_occupancy_resolution(int r) {
    if (r != 0 && (r < 8 || r > 1024)) throw InvalidArgument("mesh occupancy resolution must be 0 or in [8, 1024]");
}

/// World-space hit point of a G-buffer pixel.
inline Vec3f gbuffer_world_point(const GBuffer& g, const Camera& cam, int x, int y) {
    const Ray ray = cam.pixel_ray(x, y);
    return ray.origin + ray.dir * depth_to_t(cam, ray.dir, g.depth[g.index(x, y)]);
}

inline MeshOccupancy mesh_occupancy_grid(const TriMesh& mesh, std::span<const Camera> cameras, int r_mesh) {
    if (r_mesh < 8 || r_mesh > 1024) throw InvalidArgument("mesh_occupancy_grid: r_mesh must be in [8, 1024]");
    MeshOccupancy occ;
    occ.resolution = r_mesh;
    occ.cells.assign(std::size_t(r_mesh) * r_mesh * r_mesh, 0);
    if (mesh.empty()) return occ;
    for (const Camera& cam : cameras) {
        const GBuffer g = rasterize(mesh, cam, false);
        for (int y = 0; y < g.height; ++y) {
            for (int x = 0; x < g.width; ++x) {
                if (g.hit(g.index(x, y))) occ.cells[occ.cell_of(contract(gbuffer_world_point(g, cam, x, y)))] = 1;
            }
        }
    }
    return occ;
}

/// Per voxel: whether its center lies in an occupied cell.
inline std::vector<std::uint8_t> occupied_voxels(const VoxelGrid& grid, const MeshOccupancy& occ) {
    std::vector<std::uint8_t> out(grid.voxel_count(), 0);
    if (!occ.enabled()) return out;
    const int r = grid.resolution();
    for (int k = 0; k < r; ++k) {
        for (int j = 0; j < r; ++j) {
            for (int i = 0; i < r; ++i) out[grid.index(i, j, k)] = occ.occupied(grid.voxel_center(i, j, k));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vosh

struct Vosh {
    VoxelGrid grid;
    TriMesh mesh;
    MlpHead<float> head;
    MeshOccupancy occupancy;

    /// Throws ContractViolation when an alive voxel sits in an occupied cell or
    /// the mesh appearance does not match its vertices.
    void check_invariants() const {
        if (!mesh.empty() && (mesh.diffuse.size() != mesh.positions.size() || mesh.feature.size() != mesh.positions.size())) {
            throw ContractViolation("vosh: mesh appearance does not match the vertex count");
        }
        const auto occ = occupied_voxels(grid, occupancy);
        for (std::size_t v = 0; v < occ.size(); ++v) {
            if (occ[v] && grid.alive(v)) throw ContractViolation("vosh: alive voxel inside a mesh-occupied cell");
        }
    }
};

/// Renders a full image through hybrid_render_ray (training-side reference).
inline Image render_hybrid_image(const Vosh& v, const Camera& cam, float step_fraction = 0.5f) {
    const GBuffer g = rasterize(v.mesh, cam, true);
    const MarchParams params = march_params_for(v.grid.resolution(), step_fraction);
    Image img(cam.width, cam.height);
    parallel_for(std::size_t(cam.height), [&](std::size_t y0, std::size_t y1) {
        RayWorkspace ws;
        for (std::size_t y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                SurfaceHit hit = surface_hit_at(g, cam, x, int(y));
                img.set(x, int(y), hybrid_render_ray(v.grid, hit, v.head, cam.pixel_ray(x, int(y)), ws, params).shaded.final_color);
            }
        }
    });
    return img;
}

// ---------------------------------------------------------------------------
// Optimization

struct HybridConfig {
    float lambda_voxel = 0.001f;
    int r_mesh = 128;
    int iterations = 300;
    int batch_rays = 4096;
    float lr_grid = 0.1f;
    float lr_mlp = 1e-3f;
    float lr_mesh = 0.01f;
    float step_fraction = 0.5f;
    float prune_threshold = kAliveThreshold;
    int skip_interval = 100;
    float skip_optical_depth = 2e-3f;
    std::uint64_t seed = 0;

    static HybridConfig base() { return {}; }
    static HybridConfig light() {
        HybridConfig c;
        c.lambda_voxel = 0.1f;
        c.r_mesh = 32;
        return c;
    }

    void validate() const {
        if (!(lambda_voxel >= 0.0f)) throw DescriptorError("hybrid.lambda_voxel", "must be non-negative");
        if (r_mesh != 0 && (r_mesh < 8 || r_mesh > 1024)) throw DescriptorError("hybrid.r_mesh", "must be 0 or in [8, 1024]");
        if (iterations < 0) throw DescriptorError("hybrid.iterations", "must be non-negative");
        if (batch_rays <= 0) throw DescriptorError("hybrid.batch_rays", "must be positive");
        if (!(lr_grid > 0.0f)) throw DescriptorError("hybrid.lr_grid", "must be positive");
        if (!(lr_mlp > 0.0f)) throw DescriptorError("hybrid.lr_mlp", "must be positive");
        if (!(lr_mesh > 0.0f)) throw DescriptorError("hybrid.lr_mesh", "must be positive");
        if (!(step_fraction > 0.0f)) throw DescriptorError("hybrid.step_fraction", "must be positive");
        if (!(prune_threshold > 0.0f)) throw DescriptorError("hybrid.prune_threshold", "must be positive");
        if (skip_interval <= 0) throw DescriptorError("hybrid.skip_interval", "must be positive");
    }
};

inline void to_json(nlohmann::json& j, const HybridConfig& c) {
    j = {{"lambda_voxel", c.lambda_voxel}, {"r_mesh", c.r_mesh},           {"iterations", c.iterations},
         {"batch_rays", c.batch_rays},     {"lr_grid", c.lr_grid},         {"lr_mlp", c.lr_mlp},
         {"lr_mesh", c.lr_mesh},           {"step_fraction", c.step_fraction}, {"prune_threshold", c.prune_threshold},
         {"skip_interval", c.skip_interval}, {"skip_optical_depth", c.skip_optical_depth}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, HybridConfig& c) {
    c = HybridConfig{};
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const nlohmann::json::exception&) {
            throw DescriptorError(std::string("hybrid.") + key, "has the wrong type");
        }
    };
    get("lambda_voxel", c.lambda_voxel);
    get("r_mesh", c.r_mesh);
    get("iterations", c.iterations);
    get("batch_rays", c.batch_rays);
    get("lr_grid", c.lr_grid);
    get("lr_mlp", c.lr_mlp);
    get("lr_mesh", c.lr_mesh);
    get("step_fraction", c.step_fraction);
    get("prune_threshold", c.prune_threshold);
    get("skip_interval", c.skip_interval);
    get("skip_optical_depth", c.skip_optical_depth);
    get("seed", c.seed);
    c.validate();
}

struct HybridReport {
    std::vector<float> loss_curve;         // photometric MSE per step
    std::vector<float> adjust_loss_curve;  // voxel adjustment loss per step
    std::size_t alive_before = 0;
    std::size_t killed_by_occupancy = 0;
    std::size_t alive_after_kill = 0;
    std::size_t alive_after_prune = 0;
    std::size_t occupied_cells = 0;
    double seconds_occupancy = 0, seconds_optimize = 0, seconds_prune = 0;

    nlohmann::json to_json() const {
        return {{"loss_curve", loss_curve},
                {"adjust_loss_curve", adjust_loss_curve},
                {"alive_before", alive_before},
                {"killed_by_occupancy", killed_by_occupancy},
                {"alive_after_kill", alive_after_kill},
                {"alive_after_prune", alive_after_prune},
                {"occupied_cells", occupied_cells},
                {"seconds", {{"occupancy", seconds_occupancy}, {"optimize", seconds_optimize}, {"prune", seconds_prune}}}};
    }
};

struct HybridResult {
    Vosh vosh;
    HybridReport report;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Train-view G-buffers without attributes; mesh appearance is interpolated
/// per ray because it keeps training.
struct ViewHits {
    const View* view;
    GBuffer g;
};

}  // namespace detail

/// Max hybrid weight per voxel over every pixel of the given views.
inline MaxWeightTracker hybrid_max_weights(const Vosh& v, const std::vector<const View*>& views, const MarchParams& params) {
    MaxWeightTracker tracker(v.grid.voxel_count());
    RayWorkspace ws;
    for (const View* view : views) {
        const GBuffer g = rasterize(v.mesh, view->camera, true);
        for (int y = 0; y < g.height; ++y) {
            for (int x = 0; x < g.width; ++x) {
                SurfaceHit hit = surface_hit_at(g, view->camera, x, y);
                hybrid_render_ray(v.grid, hit, v.head, view->camera.pixel_ray(x, y), ws, params);
                tracker.record(v.grid, ws);
            }
        }
    }
    return tracker;
}

inline HybridResult optimize_hybrid(const VoxelGrid& grid, const TriMesh& mesh, const MlpHead<float>& head,
                                    const MultiViewDataset& dataset, const HybridConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    if (!mesh.empty() && (mesh.diffuse.size() != mesh.positions.size() || mesh.feature.size() != mesh.positions.size())) {
        throw ContractViolation("optimize_hybrid: mesh appearance does not match the feature layout");
    }
    const auto train_views = dataset.train();
    if (train_views.empty()) throw InvalidArgument("optimize_hybrid: dataset has no training views");

    HybridResult out;
    Vosh& v = out.vosh;
    v.grid = grid;
    v.mesh = mesh;
    v.head = head;
    HybridReport& rep = out.report;
    rep.alive_before = v.grid.alive_count();

    auto t0 = std::chrono::steady_clock::now();
    std::vector<Camera> cams;
    for (const View* view : train_views) cams.push_back(view->camera);
    if (cfg.r_mesh > 0) v.occupancy = mesh_occupancy_grid(v.mesh, cams, cfg.r_mesh);
    const std::vector<std::uint8_t> blocked = occupied_voxels(v.grid, v.occupancy);
    rep.occupied_cells = v.occupancy.count();
    rep.seconds_occupancy = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    const MarchParams params = march_params_for(v.grid.resolution(), cfg.step_fraction);
    if (cfg.iterations > 0) {
        std::vector<detail::ViewHits> hits;
        for (const View* view : train_views) hits.push_back({view, rasterize(v.mesh, view->camera, false)});
        std::vector<const View*> order;
        for (const auto& h : hits) order.push_back(h.view);
        PixelSampler sampler(order);

        std::mt19937_64 rng(cfg.seed);
        GridGradient grid_grad(v.grid.voxel_count());
        GridAdam grid_adam(v.grid.voxel_count(), cfg.lr_grid);
        DenseAdam<MlpHead<float>::kParamCount> mlp_adam(cfg.lr_mlp);
        VertexAdam mesh_adam(v.mesh.positions.size(), cfg.lr_mesh);
        std::vector<float> mesh_grad(v.mesh.positions.size() * VertexAdam::kWidth);
        OccupancySkip skip;
        skip.update(v.grid, cfg.skip_optical_depth);
        RayWorkspace ws;

        struct Pick {
            std::size_t view;
            int x, y;
        };
        std::vector<Pick> batch(std::size_t(cfg.batch_rays));
        for (int it = 0; it < cfg.iterations; ++it) {
            std::size_t surface_rays = 0;
            for (auto& p : batch) {
                const auto pick = sampler.pick(rng);
                std::size_t vi = 0;
                while (hits[vi].view != pick.view) ++vi;
                p = {vi, pick.x, pick.y};
                surface_rays += hits[vi].g.hit(hits[vi].g.index(pick.x, pick.y));
            }
            grid_grad.clear();
            std::fill(mesh_grad.begin(), mesh_grad.end(), 0.0f);
            MlpHead<float> head_grad;
            double loss = 0.0, adjust = 0.0;
            const float scale = 2.0f / (3.0f * float(cfg.batch_rays));
            const float adjust_scale = surface_rays ? cfg.lambda_voxel / float(surface_rays) : 0.0f;
            for (const Pick& p : batch) {
                const GBuffer& g = hits[p.view].g;
                const Camera& cam = hits[p.view].view->camera;
                const Ray ray = cam.pixel_ray(p.x, p.y);
                const std::size_t px = g.index(p.x, p.y);
                SurfaceHit hit;
                hit.dir = ray.dir;
                SurfacePixel sp{};
                if (g.hit(px)) {
                    hit.hit = true;
                    hit.depth = depth_to_t(cam, ray.dir, g.depth[px]);
                    sp = {g.face[px], g.bary[px], ray.dir, {}};
                    interpolate_surface(v.mesh, sp, hit.diffuse, hit.feature);
                }
                const auto r = hybrid_render_ray(v.grid, hit, v.head, ray, ws, params, skip);
                const Vec3f diff = r.shaded.final_color - hits[p.view].view->image.at(p.x, p.y);
                loss += dot(diff, diff);
                const auto gr = backward_render_path<float>(ws.cache, v.head, diff * scale);
                for (std::size_t k = 0; k < MlpHead<float>::kParamCount; ++k) head_grad.params[k] += gr.head.params[k];
                for (std::size_t s = 0; s < ws.locs.size(); ++s) {
                    grid_grad.add_sample(v.grid, ws.locs[s], gr.sigmas[s], gr.diffuses[s], gr.features[s]);
                }
                if (!hit.hit) continue;
                scatter_vertex_grad(v.mesh, sp.face, sp.bary, gr.surface_diffuse, gr.surface_feature, mesh_grad);
                adjust += 1.0 - std::exp(double(hit.w_m) - 1.0);
                if (adjust_scale > 0.0f) add_adjust_gradient(v.grid, ws, hit.w_m, adjust_scale, &blocked, grid_grad);
            }
            rep.loss_curve.push_back(float(loss / (3.0 * cfg.batch_rays)));
            rep.adjust_loss_curve.push_back(surface_rays ? float(cfg.lambda_voxel * adjust / double(surface_rays)) : 0.0f);
            grid_adam.step(v.grid, grid_grad);
            mlp_adam.step(std::span<float, MlpHead<float>::kParamCount>(v.head.params),
                          std::span<const float, MlpHead<float>::kParamCount>(head_grad.params));
            if (!v.mesh.empty()) mesh_adam.step(v.mesh, mesh_grad);
            if ((it + 1) % cfg.skip_interval == 0) skip.update(v.grid, cfg.skip_optical_depth);
            if (progress) progress(it, rep.loss_curve.back());
        }
    }
    rep.seconds_optimize = detail::seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    for (std::size_t vox = 0; vox < blocked.size(); ++vox) {
        if (blocked[vox] && v.grid.alive(vox)) {
            v.grid.set_alive(vox, false);
            ++rep.killed_by_occupancy;
        }
    }
    rep.alive_after_kill = v.grid.alive_count();
    const MaxWeightTracker tracker = hybrid_max_weights(v, train_views, params);
    rep.alive_after_prune = apply_alive_mask(v.grid, tracker, cfg.prune_threshold);
    rep.seconds_prune = detail::seconds_since(t0);
    v.check_invariants();
    return out;
}

}  // namespace vosh
