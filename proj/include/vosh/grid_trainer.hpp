#pragma once

// Stage one: fit a VoxelGrid and MLP head to posed images by minimizing the
// photometric error of volume-rendered rays.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "vosh/container.hpp"
#include "vosh/core_field.hpp"
#include "vosh/parallel.hpp"
#include "vosh/scene.hpp"
#include "vosh/volume_render.hpp"
#include "vosh/voxel_grid.hpp"

namespace vosh {

inline constexpr float kAliveThreshold = 0.005f;

struct TrainConfig {
    int resolution = 64;
    int iterations = 2000;
    int batch_rays = 4096;
    float lr_grid = 0.1f;
    float lr_mlp = 1e-3f;
    float step_fraction = 0.5f;  // sampling step as a fraction of the voxel edge
    int max_samples = 4096;      // march segments per ray
    float alive_threshold = kAliveThreshold;
    int alive_stride = 1;        // pixel stride of the ray subsample used for the alive mask
    // Empty-space skipping while training: after `skip_warmup` steps, samples whose
    // eight corners all have optical depth below `skip_optical_depth` are skipped.
    int skip_warmup = 300;
    int skip_interval = 100;
    float skip_optical_depth = 2e-3f;
    // Coarse to fine: training starts at resolution >> upsample_at.size() and
    // doubles the grid at each listed step.
    std::vector<int> upsample_at;
    std::uint64_t seed = 0;

    int start_resolution() const { return resolution >> upsample_at.size(); }

    void validate() const {
        auto positive = [](double v, const char* key) {
            if (!(v > 0)) throw DescriptorError(key, "must be positive");
        };
        if (resolution < 2) throw DescriptorError("train.resolution", "must be at least 2");
        if (iterations < 0) throw DescriptorError("train.iterations", "must be non-negative");
        positive(batch_rays, "train.batch_rays");
        positive(lr_grid, "train.lr_grid");
        positive(lr_mlp, "train.lr_mlp");
        positive(step_fraction, "train.step_fraction");
        positive(max_samples, "train.max_samples");
        positive(alive_threshold, "train.alive_threshold");
        positive(alive_stride, "train.alive_stride");
        positive(skip_interval, "train.skip_interval");
        if (start_resolution() < 2 || start_resolution() << upsample_at.size() != resolution)
            throw DescriptorError("train.upsample_at", "resolution must halve evenly once per upsample step");
        for (std::size_t i = 0; i < upsample_at.size(); ++i) {
            if (upsample_at[i] <= 0 || (i && upsample_at[i] <= upsample_at[i - 1]))
                throw DescriptorError("train.upsample_at", "steps must be positive and increasing");
        }
    }

    MarchParams march() const {
        MarchParams p = march_params_for(resolution, step_fraction);
        p.max_segments = std::size_t(max_samples);
        return p;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"resolution", c.resolution}, {"iterations", c.iterations}, {"batch_rays", c.batch_rays},
         {"lr_grid", c.lr_grid}, {"lr_mlp", c.lr_mlp}, {"step_fraction", c.step_fraction},
         {"max_samples", c.max_samples}, {"alive_threshold", c.alive_threshold}, {"alive_stride", c.alive_stride},
         {"skip_warmup", c.skip_warmup}, {"skip_interval", c.skip_interval},
         {"skip_optical_depth", c.skip_optical_depth}, {"upsample_at", c.upsample_at}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.resolution = j.value("resolution", c.resolution);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_rays = j.value("batch_rays", c.batch_rays);
    c.lr_grid = j.value("lr_grid", c.lr_grid);
    c.lr_mlp = j.value("lr_mlp", c.lr_mlp);
    c.step_fraction = j.value("step_fraction", c.step_fraction);
    c.max_samples = j.value("max_samples", c.max_samples);
    c.alive_threshold = j.value("alive_threshold", c.alive_threshold);
    c.alive_stride = j.value("alive_stride", c.alive_stride);
    c.skip_warmup = j.value("skip_warmup", c.skip_warmup);
    c.skip_interval = j.value("skip_interval", c.skip_interval);
    c.skip_optical_depth = j.value("skip_optical_depth", c.skip_optical_depth);
    c.upsample_at = j.value("upsample_at", c.upsample_at);
    c.seed = j.value("seed", c.seed);
}

/// Uniform double in [0, 1) from a 64-bit engine, identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline MlpHead<float> init_mlp(std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    MlpHead<float> h;
    auto fill = [&](std::size_t off, std::size_t fan_in, std::size_t fan_out, std::size_t count, float gain) {
        const float bound = gain * std::sqrt(6.0f / float(fan_in + fan_out));
        for (std::size_t i = 0; i < count; ++i) h.params[off + i] = float((2.0 * uniform01(rng) - 1.0) * bound);
    };
    fill(MlpHead<float>::kW1, kMlpInput, kMlpHidden, kMlpHidden * kMlpInput, 1.0f);
    fill(MlpHead<float>::kW2, kMlpHidden, kMlpHidden, kMlpHidden * kMlpHidden, 1.0f);
    fill(MlpHead<float>::kW3, kMlpHidden, kMlpOutput, kMlpOutput * kMlpHidden, 0.1f);
    return h;
}

/// Samples whose eight corners are all below an optical-depth floor.
class OccupancySkip {
public:
    bool active() const { return active_; }

    void update(const VoxelGrid& grid, float optical_depth) {
        res_ = grid.resolution();
        occ_.assign(grid.voxel_count(), 0);
        const float floor = optical_depth / grid.voxel_edge();
        for (std::size_t v = 0; v < occ_.size(); ++v) occ_[v] = grid.density(v) > floor ? 1 : 0;
        active_ = true;
    }

    bool operator()(const TrilinearSample& s) const {
        if (!active_) return false;
        for (int c = 0; c < 8; ++c) {
            const std::size_t v = (std::size_t(s.k + ((c >> 2) & 1)) * res_ + (s.j + ((c >> 1) & 1))) * res_ + (s.i + (c & 1));
            if (occ_[v]) return false;
        }
        return true;
    }

private:
    bool active_ = false;
    int res_ = 0;
    std::vector<std::uint8_t> occ_;
};

struct TrainResult {
    VoxelGrid grid;
    MlpHead<float> head;
    std::vector<float> loss_curve;      // per-step batch MSE
    std::vector<float> smoothed_curve;  // running minimum of an EMA of loss_curve
    int iterations = 0;
};

/// Picks random pixels uniformly over all training views.
class PixelSampler {
public:
    explicit PixelSampler(std::vector<const View*> views) : views_(std::move(views)) {
        std::size_t acc = 0;
        for (const View* v : views_) {
            acc += v->image.pixel_count();
            cumulative_.push_back(acc);
        }
    }
    std::size_t total() const { return cumulative_.empty() ? 0 : cumulative_.back(); }

    struct Pick {
        const View* view;
        int x, y;
    };
    Pick pick(std::mt19937_64& rng) const { return at(std::size_t(uniform01(rng) * double(total()))); }
    Pick at(std::size_t flat) const {
        std::size_t vi = 0;
        while (flat >= cumulative_[vi]) ++vi;
        const std::size_t local = flat - (vi ? cumulative_[vi - 1] : 0);
        const View* v = views_[vi];
        return {v, int(local % v->image.width), int(local / v->image.width)};
    }
    const std::vector<const View*>& views() const { return views_; }

private:
    std::vector<const View*> views_;
    std::vector<std::size_t> cumulative_;
};

/// Max rendering weight seen by each voxel over a set of rays. A voxel is
/// credited with the weight of every sample that uses it as a trilinear corner.
class MaxWeightTracker {
public:
    explicit MaxWeightTracker(std::size_t voxels) : maxw_(voxels, 0.0f) {}

    void record(const VoxelGrid& grid, const RayWorkspace& ws) {
        const auto& w = ws.cache.weights.weights;
        for (std::size_t s = 0; s < ws.locs.size(); ++s) {
            for (int c = 0; c < 8; ++c) {
                if (ws.locs[s].corner_weight(c) == 0.0f) continue;
                float& m = maxw_[corner_index(grid, ws.locs[s], c)];
                m = std::max(m, w[s]);
            }
        }
    }
    float operator[](std::size_t v) const { return maxw_[v]; }
    const std::vector<float>& values() const { return maxw_; }

private:
    std::vector<float> maxw_;
};

/// Keeps voxels whose max weight exceeds the threshold; returns the alive count.
inline std::size_t apply_alive_mask(VoxelGrid& grid, const MaxWeightTracker& tracker, float threshold) {
    std::size_t alive = 0;
    for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
        const bool keep = grid.alive(v) && tracker[v] > threshold;
        if (grid.alive(v) != keep) grid.set_alive(v, keep);
        alive += keep;
    }
    return alive;
}

template <class Skip = NoSkip>
Image render_volume_image(const VoxelGrid& grid, const MlpHead<float>& head, const Camera& cam, const MarchParams& params,
                          const Skip& skip = Skip{}) {
    Image img(cam.width, cam.height);
    parallel_for(std::size_t(cam.height), [&](std::size_t y0, std::size_t y1) {
        RayWorkspace ws;
        for (std::size_t y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const auto shaded = render_grid_ray(grid, head, cam.pixel_ray(x, int(y)), nullptr, ws, params, skip);
                img.set(x, int(y), shaded.final_color);
            }
        }
    });
    return img;
}

using ProgressFn = std::function<void(int iteration, float loss)>;

/// Doubles the resolution. Density is interpolated per unit length and
/// re-encoded for the finer edge; appearance is interpolated in raw space.
inline VoxelGrid upsample_grid(const VoxelGrid& g) {
    const int r = g.resolution();
    VoxelGrid out(2 * r);
    auto axis = [r](int i, int& lo, int& hi, float& t) {
        const float x = std::clamp(0.5f * float(i) - 0.25f, 0.0f, float(r - 1));
        lo = std::min(int(x), r - 2);
        hi = lo + 1;
        t = x - float(lo);
    };
    const float fine_edge = out.voxel_edge();
    for (int k = 0; k < 2 * r; ++k) {
        int k0, k1;
        float tk;
        axis(k, k0, k1, tk);
        for (int j = 0; j < 2 * r; ++j) {
            int j0, j1;
            float tj;
            axis(j, j0, j1, tj);
            for (int i = 0; i < 2 * r; ++i) {
                int i0, i1;
                float ti;
                axis(i, i0, i1, ti);
                std::array<float, kChannels> acc{};
                float sigma = 0.0f;
                bool alive = false;
                for (int c = 0; c < 8; ++c) {
                    const int ii = c & 1 ? i1 : i0, jj = c & 2 ? j1 : j0, kk = c & 4 ? k1 : k0;
                    const float w = (c & 1 ? ti : 1 - ti) * (c & 2 ? tj : 1 - tj) * (c & 4 ? tk : 1 - tk);
                    const std::size_t v = g.index(ii, jj, kk);
                    sigma += w * softplus(g.raw(v)[0]) / g.voxel_edge();
                    for (std::size_t ch = 1; ch < kChannels; ++ch) acc[ch] += w * g.raw(v)[ch];
                    alive = alive || g.alive(v);
                }
                const std::size_t v = out.index(i, j, k);
                auto raw = out.raw(v);
                raw[0] = softplus_inverse(sigma * fine_edge);
                for (std::size_t ch = 1; ch < kChannels; ++ch) raw[ch] = acc[ch];
                out.decode_voxel(v);
                if (!alive) out.set_alive(v, false);
            }
        }
    }
    return out;
}

inline TrainResult train_grid(const MultiViewDataset& dataset, const TrainConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    const auto train_views = dataset.train();
    if (train_views.empty()) throw InvalidArgument("train_grid: dataset has no training views");

    TrainResult out;
    out.grid = VoxelGrid(cfg.start_resolution());
    out.head = init_mlp(cfg.seed);
    VoxelGrid& grid = out.grid;
    MlpHead<float>& head = out.head;

    auto march_for = [&](int res) {
        MarchParams p = march_params_for(res, cfg.step_fraction);
        p.max_segments = std::size_t(cfg.max_samples);
        return p;
    };
    MarchParams params = march_for(grid.resolution());
    PixelSampler sampler(train_views);
    std::mt19937_64 rng(cfg.seed);
    GridGradient grid_grad(grid.voxel_count());
    GridAdam grid_adam(grid.voxel_count(), cfg.lr_grid);
    std::size_t next_upsample = 0;
    DenseAdam<MlpHead<float>::kParamCount> mlp_adam(cfg.lr_mlp);
    OccupancySkip skip;
    RayWorkspace ws;

    float ema = 0.0f, best = std::numeric_limits<float>::infinity();
    for (int it = 0; it < cfg.iterations; ++it) {
        if (next_upsample < cfg.upsample_at.size() && it == cfg.upsample_at[next_upsample]) {
            ++next_upsample;
            grid = upsample_grid(grid);
            params = march_for(grid.resolution());
            grid_grad = GridGradient(grid.voxel_count());
            grid_adam = GridAdam(grid.voxel_count(), cfg.lr_grid);
            if (skip.active()) skip.update(grid, cfg.skip_optical_depth);
        }
        grid_grad.clear();
        MlpHead<float> head_grad;
        double loss = 0.0;
        const float norm_factor = 2.0f / (3.0f * float(cfg.batch_rays));
        for (int b = 0; b < cfg.batch_rays; ++b) {
            const auto pick = sampler.pick(rng);
            const Ray ray = pick.view->camera.pixel_ray(pick.x, pick.y);
            const Vec3f gt = pick.view->image.at(pick.x, pick.y);
            const auto shaded = render_grid_ray(grid, head, ray, nullptr, ws, params, skip);
            const Vec3f diff = shaded.final_color - gt;
            loss += dot(diff, diff);
            const auto g = backward_render_path<float>(ws.cache, head, diff * norm_factor);
            for (std::size_t p = 0; p < MlpHead<float>::kParamCount; ++p) head_grad.params[p] += g.head.params[p];
            for (std::size_t s = 0; s < ws.locs.size(); ++s) grid_grad.add_sample(grid, ws.locs[s], g.sigmas[s], g.diffuses[s], g.features[s]);
        }
        const float mse = float(loss / (3.0 * cfg.batch_rays));
        out.loss_curve.push_back(mse);
        ema = it == 0 ? mse : 0.9f * ema + 0.1f * mse;
        best = std::min(best, ema);
        out.smoothed_curve.push_back(best);

        grid_adam.step(grid, grid_grad);
        mlp_adam.step(std::span<float, MlpHead<float>::kParamCount>(head.params),
                      std::span<const float, MlpHead<float>::kParamCount>(head_grad.params));
        if (it + 1 >= cfg.skip_warmup && (it + 1 - cfg.skip_warmup) % cfg.skip_interval == 0) {
            skip.update(grid, cfg.skip_optical_depth);
        }
        if (progress) progress(it, mse);
    }
    out.iterations = cfg.iterations;
    while (grid.resolution() < cfg.resolution) grid = upsample_grid(grid);
    params = march_for(grid.resolution());
    if (skip.active()) skip.update(grid, cfg.skip_optical_depth);

    // Alive mask from the max weight over a strided subsample of training rays.
    MaxWeightTracker tracker(grid.voxel_count());
    for (const View* v : train_views) {
        for (int y = 0; y < v->camera.height; y += cfg.alive_stride) {
            for (int x = 0; x < v->camera.width; x += cfg.alive_stride) {
                render_grid_ray(grid, head, v->camera.pixel_ray(x, y), nullptr, ws, params, skip);
                tracker.record(grid, ws);
            }
        }
    }
    apply_alive_mask(grid, tracker, cfg.alive_threshold);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> grid_section(const VoxelGrid& grid) {
    ByteWriter w;
    w.u32(std::uint32_t(grid.resolution()));
    for (std::size_t v = 0; v < grid.voxel_count(); ++v) w.floats(grid.raw(v));
    w.bytes(grid.alive_mask());
    return w.take();
}

inline VoxelGrid grid_from_section(const Section& s) {
    ByteReader r(s.payload, s.tag);
    const int res = int(r.u32());
    if (res < 2 || res > 1024) throw ParseError(ParseErrorKind::Malformed, s.tag, "bad grid resolution");
    VoxelGrid g(res);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) r.floats(g.raw(v));
    auto alive = r.bytes(g.voxel_count());
    for (std::size_t v = 0; v < g.voxel_count(); ++v) g.set_alive(v, alive[v] != 0);
    return g;
}

inline std::vector<std::uint8_t> mlp_section(const MlpHead<float>& head) {
    ByteWriter w;
    w.u32(std::uint32_t(MlpHead<float>::kParamCount));
    w.floats(head.params);
    return w.take();
}

inline MlpHead<float> mlp_from_section(const Section& s) {
    ByteReader r(s.payload, s.tag);
    if (r.u32() != MlpHead<float>::kParamCount) throw ParseError(ParseErrorKind::Malformed, s.tag, "MLP parameter count mismatch");
    MlpHead<float> h;
    r.floats(h.params);
    return h;
}

inline std::vector<std::uint8_t> text_section(const std::string& text) { return {text.begin(), text.end()}; }

inline void save_checkpoint(const std::filesystem::path& path, const TrainResult& result, const TrainConfig& cfg) {
    Container c{"VCKP", kCheckpointVersion, {}};
    c.sections.push_back({"CONF", text_section(nlohmann::json(cfg).dump())});
    c.sections.push_back({"GRID", grid_section(result.grid)});
    c.sections.push_back({"MLPW", mlp_section(result.head)});
    ByteWriter iters;
    iters.u64(std::uint64_t(result.iterations));
    iters.u32(std::uint32_t(result.loss_curve.size()));
    iters.floats(result.loss_curve);
    c.sections.push_back({"ITER", iters.take()});
    write_file_bytes(path, write_container(c));
}

struct Checkpoint {
    TrainResult result;
    TrainConfig config;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const Container c = read_container(bytes, "VCKP", kCheckpointVersion);
    Checkpoint ck;
    const auto& conf = c.find("CONF").payload;
    ck.config = nlohmann::json::parse(std::string(conf.begin(), conf.end())).get<TrainConfig>();
    ck.result.grid = grid_from_section(c.find("GRID"));
    ck.result.head = mlp_from_section(c.find("MLPW"));
    ByteReader r(c.find("ITER").payload, "ITER");
    ck.result.iterations = int(r.u64());
    ck.result.loss_curve.resize(r.u32());
    r.floats(ck.result.loss_curve);
    return ck;
}

}  // namespace vosh
