#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vosh/core_field.hpp"
#include "vosh/error.hpp"
#include "vosh/scene.hpp"
#include "vosh/vec.hpp"

namespace vosh {

/// Channels per voxel: density, diffuse RGB, features.
inline constexpr std::size_t kChannels = 1 + 3 + kFeatureDim;

inline float softplus(float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); }
/// Inverse of softplus; zero maps to a raw value whose softplus is exactly zero.
inline float softplus_inverse(float y) {
    if (!(y > 0.0f)) return -200.0f;
    if (y > 20.0f) return y + std::log1p(-std::exp(-y));
    return std::log(std::expm1(std::max(y, 1e-30f)));
}
inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
inline float logit(float p) {
    const float q = std::clamp(p, 1e-6f, 1.0f - 1e-6f);
    return std::log(q / (1.0f - q));
}

/// Dense voxel grid over the contracted box (-2, 2)^3. Voxel (i, j, k) is
/// centered at -2 + (i + 0.5) * edge. Parameters are stored raw; decoded values
/// are cached: density = softplus(raw) / edge, so softplus(raw) is the optical
/// depth across one voxel; appearance = sigmoid(raw). Dead voxels decode to
// zero density and keep their appearance.
class VoxelGrid {
public:
    VoxelGrid() = default;
    explicit VoxelGrid(int resolution, float raw_density = -10.0f, float raw_appearance = 0.0f) : res_(resolution) {
        if (resolution < 2) throw InvalidArgument("VoxelGrid: resolution must be at least 2");
        const std::size_t n = voxel_count();
        raw_.assign(n * kChannels, raw_appearance);
        for (std::size_t v = 0; v < n; ++v) raw_[v * kChannels] = raw_density;
        decoded_.assign(n * kChannels, 0.0f);
        alive_.assign(n, 1);
        decode_all();
    }

    int resolution() const { return res_; }
    float voxel_edge() const { return 4.0f / float(res_); }
    std::size_t voxel_count() const { return std::size_t(res_) * res_ * res_; }
    std::size_t index(int i, int j, int k) const { return (std::size_t(k) * res_ + j) * res_ + i; }
    void coords(std::size_t v, int& i, int& j, int& k) const {
        i = int(v % res_);
        j = int((v / res_) % res_);
        k = int(v / (std::size_t(res_) * res_));
    }
    Vec3f voxel_center(int i, int j, int k) const {
        const float e = voxel_edge();
        return {-2.0f + (float(i) + 0.5f) * e, -2.0f + (float(j) + 0.5f) * e, -2.0f + (float(k) + 0.5f) * e};
    }

    bool alive(std::size_t v) const { return alive_[v] != 0; }
    void set_alive(std::size_t v, bool a) {
        alive_[v] = a ? 1 : 0;
        decode_voxel(v);
    }
    std::size_t alive_count() const {
        std::size_t n = 0;
        for (auto a : alive_) n += a;
        return n;
    }
    const std::vector<std::uint8_t>& alive_mask() const { return alive_; }

    std::span<float> raw(std::size_t v) { return {raw_.data() + v * kChannels, kChannels}; }
    std::span<const float> raw(std::size_t v) const { return {raw_.data() + v * kChannels, kChannels}; }
    std::span<const float> decoded(std::size_t v) const { return {decoded_.data() + v * kChannels, kChannels}; }
    const float* decoded_data() const { return decoded_.data(); }
    float density(std::size_t v) const { return decoded_[v * kChannels]; }

    void decode_voxel(std::size_t v) {
        float* d = decoded_.data() + v * kChannels;
        const float* r = raw_.data() + v * kChannels;
        d[0] = alive_[v] ? softplus(r[0]) / voxel_edge() : 0.0f;
        for (std::size_t c = 1; c < kChannels; ++c) d[c] = sigmoid(r[c]);
    }
    void decode_all() {
        for (std::size_t v = 0; v < voxel_count(); ++v) decode_voxel(v);
    }

    /// Sets decoded values exactly (raw parameters follow by inversion) and marks the voxel alive.
    void set_voxel(std::size_t v, float sigma, const Rgb<float>& diffuse, const Feature<float>& feature) {
        alive_[v] = 1;
        float* r = raw_.data() + v * kChannels;
        float* d = decoded_.data() + v * kChannels;
        r[0] = softplus_inverse(sigma * voxel_edge());
        d[0] = sigma;
        for (int c = 0; c < 3; ++c) {
            r[1 + c] = logit(diffuse[c]);
            d[1 + c] = diffuse[c];
        }
        for (std::size_t c = 0; c < kFeatureDim; ++c) {
            r[4 + c] = logit(feature[c]);
            d[4 + c] = feature[c];
        }
    }

    /// d(decoded)/d(raw) for one channel of an alive voxel, from the decoded value.
    float decode_derivative(std::size_t v, std::size_t c) const {
        const float d = decoded_[v * kChannels + c];
        if (c == 0) return -std::expm1(-d * voxel_edge()) / voxel_edge();
        return d * (1.0f - d);
    }

    void kill_all() {
        std::fill(alive_.begin(), alive_.end(), 0);
        for (std::size_t v = 0; v < voxel_count(); ++v) decoded_[v * kChannels] = 0.0f;
    }

private:
    int res_ = 0;
    std::vector<float> raw_;
    std::vector<float> decoded_;
    std::vector<std::uint8_t> alive_;
};

// ---------------------------------------------------------------------------
// Trilinear lookup

struct TrilinearSample {
    int i = 0, j = 0, k = 0;  // lower corner voxel
    float fx = 0, fy = 0, fz = 0;

    float corner_weight(int corner) const {
        return ((corner & 1) ? fx : 1.0f - fx) * ((corner & 2) ? fy : 1.0f - fy) * ((corner & 4) ? fz : 1.0f - fz);
    }
};

inline TrilinearSample locate(int res, const Vec3f& c) {
    const float e = 4.0f / float(res);
    TrilinearSample s;
    float f[3];
    int idx[3];
    for (int a = 0; a < 3; ++a) {
        float u = (c[a] + 2.0f) / e - 0.5f;
        u = std::clamp(u, 0.0f, float(res - 1));
        int i0 = int(u);
        if (i0 > res - 2) i0 = res - 2;
        idx[a] = i0;
        f[a] = u - float(i0);
    }
    s.i = idx[0];
    s.j = idx[1];
    s.k = idx[2];
    s.fx = f[0];
    s.fy = f[1];
    s.fz = f[2];
    return s;
}

inline std::size_t corner_index(const VoxelGrid& g, const TrilinearSample& s, int corner) {
    return g.index(s.i + (corner & 1), s.j + ((corner >> 1) & 1), s.k + ((corner >> 2) & 1));
}

/// Trilinear density only.
inline float sample_density(const VoxelGrid& g, const TrilinearSample& s) {
    const float* d = g.decoded_data();
    float out = 0.0f;
    for (int c = 0; c < 8; ++c) out += s.corner_weight(c) * d[corner_index(g, s, c) * kChannels];
    return out;
}

/// Trilinear diffuse and features.
inline void sample_appearance(const VoxelGrid& g, const TrilinearSample& s, Rgb<float>& diffuse, Feature<float>& feature) {
    const float* d = g.decoded_data();
    float acc[kChannels - 1] = {};
    for (int c = 0; c < 8; ++c) {
        const float w = s.corner_weight(c);
        const float* p = d + corner_index(g, s, c) * kChannels + 1;
        for (std::size_t ch = 0; ch < kChannels - 1; ++ch) acc[ch] += w * p[ch];
    }
    diffuse = {acc[0], acc[1], acc[2]};
    for (std::size_t k = 0; k < kFeatureDim; ++k) feature[k] = acc[3 + k];
}

// ---------------------------------------------------------------------------
// Ray marching in contracted space

struct MarchSegment {
    float t0 = 0, t1 = 0;
    Vec3f mid;    // contracted midpoint
    float delta;  // contracted chord length
};

struct MarchParams {
    float step = 1.0f / 64.0f;       // target contracted step
    float far_norm = 2.0f - 1.0f / 128.0f;  // stop once the contracted point reaches this inf-norm
    std::size_t max_segments = 4096;
};

/// Half-voxel steps; marching ends half a voxel short of the domain boundary.
inline MarchParams march_params_for(int resolution, float step_fraction = 0.5f) {
    const float e = 4.0f / float(resolution);
    return {step_fraction * e, 2.0f - 0.5f * e, 4096};
}

/// Walks the ray in world space with steps sized so each segment spans about
/// `step` in contracted space. If t_stop is finite the last segment is cut at
/// t_stop and marching ends there.
template <class Visit>
void march_ray(const Ray& ray, const MarchParams& params, float t_stop, Visit&& visit) {
    float t = 0.0f;
    Vec3f x0 = ray.origin;
    Vec3f c0 = contract(x0);
    for (std::size_t n = 0; n < params.max_segments; ++n) {
        if (max_abs(c0) >= params.far_norm || t >= t_stop) break;
        const float speed = norm(contract_jvp(x0, ray.dir));
        float t1 = t + params.step / std::max(speed, 1e-6f);
        bool last = false;
        if (t1 >= t_stop) {
            t1 = t_stop;
            last = true;
        }
        const Vec3f x1 = ray.origin + ray.dir * t1;
        const Vec3f c1 = contract(x1);
        MarchSegment seg;
        seg.t0 = t;
        seg.t1 = t1;
        seg.mid = contract(ray.origin + ray.dir * (0.5f * (t + t1)));
        seg.delta = norm(c1 - c0);
        if (seg.delta > 0.0f) visit(seg);
        t = t1;
        x0 = x1;
        c0 = c1;
        if (last) break;
    }
}

}  // namespace vosh
