#pragma once

// Field kernels shared by training and inference: scene contraction, volume
// rendering weights, deferred accumulation and the view-dependent MLP head,
// each with hand-written reverse-mode derivatives.

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vosh/error.hpp"
#include "vosh/vec.hpp"

namespace vosh {

inline constexpr std::size_t kFeatureDim = 4;
inline constexpr std::size_t kMlpInput = 3 + kFeatureDim + 3;
inline constexpr std::size_t kMlpHidden = 16;
inline constexpr std::size_t kMlpOutput = 3;

template <std::floating_point T>
using Feature = std::array<T, kFeatureDim>;

template <std::floating_point T>
using Rgb = Vec3<T>;

// ---------------------------------------------------------------------------
// Contraction

/// Index of the component with the largest magnitude; ties go to the lowest axis.
template <std::floating_point T>
constexpr int dominant_axis(const Vec3<T>& x) {
    int k = 0;
    T best = std::abs(x.x);
    if (std::abs(x.y) > best) { k = 1; best = std::abs(x.y); }
    if (std::abs(x.z) > best) { k = 2; }
    return k;
}

/// Piecewise-projective contraction of R^3 into the open box (-2, 2)^3.
/// Identity inside the unit infinity-ball; outside it the dominant component
/// maps to sign(x_k) (2 - 1/|x_k|) and the others are divided by |x_k|.
template <std::floating_point T>
Vec3<T> contract(const Vec3<T>& x) {
    if (!all_finite(x)) throw InvalidArgument("contract: non-finite input");
    const T s = max_abs(x);
    if (s <= T(1)) return x;
    const int k = dominant_axis(x);
    Vec3<T> c = x / s;
    c[k] = (T(2) - T(1) / s) * (x[k] < 0 ? T(-1) : T(1));
    return c;
}

/// Directional derivative J(x) d of the contraction.
template <std::floating_point T>
Vec3<T> contract_jvp(const Vec3<T>& x, const Vec3<T>& d) {
    const T s = max_abs(x);
    if (s <= T(1)) return d;
    const int k = dominant_axis(x);
    const T sgn = x[k] < 0 ? T(-1) : T(1);
    const T inv = T(1) / s;
    const T inv2 = inv * inv;
    Vec3<T> out;
    for (int j = 0; j < 3; ++j) {
        out[j] = j == k ? d[j] * inv2 : d[j] * inv - x[j] * sgn * d[k] * inv2;
    }
    return out;
}

/// Inverse of contract on the open box (-2, 2)^3.
template <std::floating_point T>
Vec3<T> uncontract(const Vec3<T>& c) {
    const T m = max_abs(c);
    if (m <= T(1)) return c;
    if (m >= T(2)) throw InvalidArgument("uncontract: point outside (-2, 2)^3");
    const int k = dominant_axis(c);
    const T s = T(1) / (T(2) - m);
    Vec3<T> x = c * s;
    x[k] = c[k] < 0 ? -s : s;
    return x;
}

// ---------------------------------------------------------------------------
// Rendering weights

template <std::floating_point T>
struct RayWeights {
    std::vector<T> alphas;
    std::vector<T> transmittances;
    std::vector<T> weights;
    T residual = T(1);

    std::size_t size() const { return weights.size(); }
};

/// Writes alpha_i, T_i and w_i = alpha_i T_i into the output spans and returns
/// the residual transmittance past the last sample.
template <std::floating_point T>
T compute_weights_into(std::span<const T> sigmas, std::span<const T> deltas, std::span<T> alphas,
                       std::span<T> transmittances, std::span<T> weights) {
    T trans = T(1);
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const T a = T(1) - std::exp(-sigmas[i] * deltas[i]);
        alphas[i] = a;
        transmittances[i] = trans;
        weights[i] = a * trans;
        trans *= T(1) - a;
    }
    return trans;
}

template <std::floating_point T>
RayWeights<T> compute_weights(std::span<const T> sigmas, std::span<const T> deltas) {
    if (sigmas.size() != deltas.size()) throw InvalidArgument("compute_weights: sigma/delta length mismatch");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] >= T(0))) throw InvalidArgument("compute_weights: negative or NaN density at sample " + std::to_string(i));
        if (!(deltas[i] > T(0))) throw InvalidArgument("compute_weights: non-positive segment length at sample " + std::to_string(i));
    }
    RayWeights<T> w;
    w.alphas.resize(sigmas.size());
    w.transmittances.resize(sigmas.size());
    w.weights.resize(sigmas.size());
    w.residual = compute_weights_into<T>(sigmas, deltas, w.alphas, w.transmittances, w.weights);
    return w;
}

template <std::floating_point T>
RayWeights<T> compute_weights(const std::vector<T>& sigmas, const std::vector<T>& deltas) {
    return compute_weights<T>(std::span<const T>(sigmas), std::span<const T>(deltas));
}

// ---------------------------------------------------------------------------
// Deferred accumulation

template <std::floating_point T>
struct DeferredSum {
    Rgb<T> diffuse{};
    Feature<T> feature{};
};

template <std::floating_point T>
DeferredSum<T> accumulate_deferred(std::span<const T> weights, std::span<const Rgb<T>> diffuses,
                                   std::span<const Feature<T>> features) {
    if (diffuses.size() != weights.size() || features.size() != weights.size()) {
        throw InvalidArgument("accumulate_deferred: appearance list length differs from weight count");
    }
    DeferredSum<T> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out.diffuse += diffuses[i] * weights[i];
        for (std::size_t k = 0; k < kFeatureDim; ++k) out.feature[k] += weights[i] * features[i][k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// View-dependent MLP head: [C_d, F, d] -> 16 -> 16 -> 3, ReLU hidden, linear out.

template <std::floating_point T>
struct MlpHead {
    static constexpr std::size_t kW1 = 0;
    static constexpr std::size_t kB1 = kW1 + kMlpHidden * kMlpInput;
    static constexpr std::size_t kW2 = kB1 + kMlpHidden;
    static constexpr std::size_t kB2 = kW2 + kMlpHidden * kMlpHidden;
    static constexpr std::size_t kW3 = kB2 + kMlpHidden;
    static constexpr std::size_t kB3 = kW3 + kMlpOutput * kMlpHidden;
    static constexpr std::size_t kParamCount = kB3 + kMlpOutput;

    std::array<T, kParamCount> params{};

    T& w1(std::size_t o, std::size_t i) { return params[kW1 + o * kMlpInput + i]; }
    T& b1(std::size_t o) { return params[kB1 + o]; }
    T& w2(std::size_t o, std::size_t i) { return params[kW2 + o * kMlpHidden + i]; }
    T& b2(std::size_t o) { return params[kB2 + o]; }
    T& w3(std::size_t o, std::size_t i) { return params[kW3 + o * kMlpHidden + i]; }
    T& b3(std::size_t o) { return params[kB3 + o]; }
    T w1(std::size_t o, std::size_t i) const { return params[kW1 + o * kMlpInput + i]; }
    T b1(std::size_t o) const { return params[kB1 + o]; }
    T w2(std::size_t o, std::size_t i) const { return params[kW2 + o * kMlpHidden + i]; }
    T b2(std::size_t o) const { return params[kB2 + o]; }
    T w3(std::size_t o, std::size_t i) const { return params[kW3 + o * kMlpHidden + i]; }
    T b3(std::size_t o) const { return params[kB3 + o]; }

    template <std::floating_point U>
    MlpHead<U> cast() const {
        MlpHead<U> out;
        for (std::size_t i = 0; i < kParamCount; ++i) out.params[i] = U(params[i]);
        return out;
    }

    bool operator==(const MlpHead&) const = default;
};

/// Forward activations kept for the backward pass.
template <std::floating_point T>
struct MlpCache {
    bool valid = false;
    std::array<T, kMlpInput> input{};
    std::array<T, kMlpHidden> z1{}, h1{}, z2{}, h2{};
    Rgb<T> pre_clamp{};
};

template <std::floating_point T>
constexpr T clamp01(T v) { return v < T(0) ? T(0) : (v > T(1) ? T(1) : v); }

template <std::floating_point T>
Rgb<T> mlp_forward(const Rgb<T>& diffuse, const Feature<T>& feature, const Vec3<T>& dir, const MlpHead<T>& head,
                   MlpCache<T>* cache = nullptr) {
    std::array<T, kMlpInput> x{diffuse.x, diffuse.y, diffuse.z};
    for (std::size_t k = 0; k < kFeatureDim; ++k) x[3 + k] = feature[k];
    x[3 + kFeatureDim] = dir.x;
    x[4 + kFeatureDim] = dir.y;
    x[5 + kFeatureDim] = dir.z;

    std::array<T, kMlpHidden> z1, h1, z2, h2;
    for (std::size_t o = 0; o < kMlpHidden; ++o) {
        T s = head.b1(o);
        for (std::size_t i = 0; i < kMlpInput; ++i) s += head.w1(o, i) * x[i];
        z1[o] = s;
        h1[o] = s > T(0) ? s : T(0);
    }
    for (std::size_t o = 0; o < kMlpHidden; ++o) {
        T s = head.b2(o);
        for (std::size_t i = 0; i < kMlpHidden; ++i) s += head.w2(o, i) * h1[i];
        z2[o] = s;
        h2[o] = s > T(0) ? s : T(0);
    }
    Rgb<T> pre;
    for (std::size_t o = 0; o < kMlpOutput; ++o) {
        T s = head.b3(o);
        for (std::size_t i = 0; i < kMlpHidden; ++i) s += head.w3(o, i) * h2[i];
        pre[o] = diffuse[o] + s;
    }
    if (cache) {
        cache->valid = true;
        cache->input = x;
        cache->z1 = z1;
        cache->h1 = h1;
        cache->z2 = z2;
        cache->h2 = h2;
        cache->pre_clamp = pre;
    }
    return {clamp01(pre.x), clamp01(pre.y), clamp01(pre.z)};
}

/// Final color = clamp(C_d + MLP(C_d, F, d), 0, 1). Direction must be unit length.
template <std::floating_point T>
Rgb<T> mlp_view_color(const Rgb<T>& diffuse, const Feature<T>& feature, const Vec3<T>& dir, const MlpHead<T>& head) {
    if (std::abs(norm(dir) - T(1)) > T(1e-4)) throw InvalidArgument("mlp_view_color: view direction is not unit length");
    return mlp_forward(diffuse, feature, dir, head);
}

template <std::floating_point T>
struct MlpInputGrad {
    Rgb<T> diffuse{};
    Feature<T> feature{};
};

/// Accumulates dL/dparams into grad_head and returns dL/d(C_d, F).
template <std::floating_point T>
MlpInputGrad<T> mlp_backward(const MlpCache<T>& cache, const MlpHead<T>& head, const Rgb<T>& grad_out,
                             MlpHead<T>& grad_head) {
    if (!cache.valid) throw ContractViolation("mlp_backward: no cached forward pass");
    Rgb<T> g_pre;
    for (int o = 0; o < 3; ++o) {
        const T p = cache.pre_clamp[o];
        g_pre[o] = (p > T(0) && p < T(1)) ? grad_out[o] : T(0);
    }
    std::array<T, kMlpHidden> g_h2{}, g_z2{}, g_h1{}, g_z1{};
    for (std::size_t o = 0; o < kMlpOutput; ++o) {
        grad_head.b3(o) += g_pre[o];
        for (std::size_t i = 0; i < kMlpHidden; ++i) {
            grad_head.w3(o, i) += g_pre[o] * cache.h2[i];
            g_h2[i] += g_pre[o] * head.w3(o, i);
        }
    }
    for (std::size_t o = 0; o < kMlpHidden; ++o) g_z2[o] = cache.z2[o] > T(0) ? g_h2[o] : T(0);
    for (std::size_t o = 0; o < kMlpHidden; ++o) {
        if (g_z2[o] == T(0)) continue;
        grad_head.b2(o) += g_z2[o];
        for (std::size_t i = 0; i < kMlpHidden; ++i) {
            grad_head.w2(o, i) += g_z2[o] * cache.h1[i];
            g_h1[i] += g_z2[o] * head.w2(o, i);
        }
    }
    for (std::size_t o = 0; o < kMlpHidden; ++o) g_z1[o] = cache.z1[o] > T(0) ? g_h1[o] : T(0);
    std::array<T, kMlpInput> g_x{};
    for (std::size_t o = 0; o < kMlpHidden; ++o) {
        if (g_z1[o] == T(0)) continue;
        grad_head.b1(o) += g_z1[o];
        for (std::size_t i = 0; i < kMlpInput; ++i) {
            grad_head.w1(o, i) += g_z1[o] * cache.input[i];
            g_x[i] += g_z1[o] * head.w1(o, i);
        }
    }
    MlpInputGrad<T> out;
    // Residual path: C_d feeds the output directly as well as through the network.
    for (int c = 0; c < 3; ++c) out.diffuse[c] = g_pre[c] + g_x[c];
    for (std::size_t k = 0; k < kFeatureDim; ++k) out.feature[k] = g_x[3 + k];
    return out;
}

// ---------------------------------------------------------------------------
// Full render path: weights -> deferred accumulation (+ optional surface) -> MLP

template <std::floating_point T>
struct ShadedRay {
    Rgb<T> diffuse_color{};
    Feature<T> feature{};
    Rgb<T> final_color{};
    Vec3<T> direction{};
};

/// Everything the backward pass needs from one ray's forward evaluation.
template <std::floating_point T>
struct RenderPathCache {
    bool valid = false;
    std::vector<T> sigmas, deltas;
    std::vector<Rgb<T>> diffuses;
    std::vector<Feature<T>> features;
    RayWeights<T> weights;
    bool has_surface = false;
    Rgb<T> surface_diffuse{};
    Feature<T> surface_feature{};
    T surface_weight = T(0);
    MlpCache<T> mlp;
    ShadedRay<T> shaded;
};

template <std::floating_point T>
struct RenderPathGrads {
    std::vector<T> sigmas;
    std::vector<Rgb<T>> diffuses;
    std::vector<Feature<T>> features;
    Rgb<T> surface_diffuse{};
    Feature<T> surface_feature{};
    MlpHead<T> head{};
};

/// Surface weight from the voxel weights: w_m = 1 - sum_i w_i, floored at zero.
template <std::floating_point T>
T surface_weight_from(std::span<const T> weights) {
    T sum = T(0);
    for (T w : weights) sum += w;
    const T wm = T(1) - sum;
    return wm > T(0) ? wm : T(0);
}

/// Evaluates one ray from per-sample density/appearance. When `surface` is set
/// the ray terminates on a surface whose appearance takes the leftover weight.
template <std::floating_point T>
ShadedRay<T> forward_render_path(std::span<const T> sigmas, std::span<const T> deltas, std::span<const Rgb<T>> diffuses,
                                 std::span<const Feature<T>> features, const DeferredSum<T>* surface,
                                 const Vec3<T>& dir, const MlpHead<T>& head, RenderPathCache<T>& cache) {
    cache.weights = compute_weights<T>(sigmas, deltas);
    cache.sigmas.assign(sigmas.begin(), sigmas.end());
    cache.deltas.assign(deltas.begin(), deltas.end());
    cache.diffuses.assign(diffuses.begin(), diffuses.end());
    cache.features.assign(features.begin(), features.end());
    DeferredSum<T> acc = accumulate_deferred<T>(cache.weights.weights, diffuses, features);
    cache.has_surface = surface != nullptr;
    if (surface) {
        cache.surface_diffuse = surface->diffuse;
        cache.surface_feature = surface->feature;
        cache.surface_weight = surface_weight_from<T>(cache.weights.weights);
        acc.diffuse += surface->diffuse * cache.surface_weight;
        for (std::size_t k = 0; k < kFeatureDim; ++k) acc.feature[k] += cache.surface_weight * surface->feature[k];
    }
    ShadedRay<T> out;
    out.diffuse_color = acc.diffuse;
    out.feature = acc.feature;
    out.direction = dir;
    if (std::abs(norm(dir) - T(1)) > T(1e-4)) throw InvalidArgument("forward_render_path: view direction is not unit length");
    out.final_color = mlp_forward(acc.diffuse, acc.feature, dir, head, &cache.mlp);
    cache.shaded = out;
    cache.valid = true;
    return out;
}

/// Reverse-mode derivatives of the render path. `grad_surface_weight` is an
/// extra upstream derivative on w_m (used by the voxel adjustment loss).
template <std::floating_point T>
RenderPathGrads<T> backward_render_path(const RenderPathCache<T>& cache, const MlpHead<T>& head,
                                        const Rgb<T>& grad_color, T grad_surface_weight = T(0)) {
    if (!cache.valid || !cache.mlp.valid) throw ContractViolation("backward_render_path: missing cached forward state");
    RenderPathGrads<T> g;
    const std::size_t n = cache.sigmas.size();
    g.sigmas.assign(n, T(0));
    g.diffuses.assign(n, Rgb<T>{});
    g.features.assign(n, Feature<T>{});

    const MlpInputGrad<T> gin = mlp_backward(cache.mlp, head, grad_color, g.head);
    const auto& w = cache.weights;

    // Scalar value each sample contributes to the loss per unit weight.
    auto project = [&](const Rgb<T>& c, const Feature<T>& f) {
        T v = dot(gin.diffuse, c);
        for (std::size_t k = 0; k < kFeatureDim; ++k) v += gin.feature[k] * f[k];
        return v;
    };

    T suffix = T(0);
    T wm_grad = grad_surface_weight;
    if (cache.has_surface) {
        g.surface_diffuse = gin.diffuse * cache.surface_weight;
        for (std::size_t k = 0; k < kFeatureDim; ++k) g.surface_feature[k] = gin.feature[k] * cache.surface_weight;
        wm_grad += project(cache.surface_diffuse, cache.surface_feature);
    }
    // d w_m / d sigma_i = -delta_i * T_{N+1} when w_m is not floored.
    const bool wm_active = cache.has_surface && cache.surface_weight > T(0);
    for (std::size_t ii = n; ii-- > 0;) {
        const T v = project(cache.diffuses[ii], cache.features[ii]);
        g.diffuses[ii] = gin.diffuse * w.weights[ii];
        for (std::size_t k = 0; k < kFeatureDim; ++k) g.features[ii][k] = gin.feature[k] * w.weights[ii];
        const T t_next = w.transmittances[ii] * (T(1) - w.alphas[ii]);
        T gs = cache.deltas[ii] * (t_next * v - suffix);
        if (wm_active) gs -= cache.deltas[ii] * w.residual * wm_grad;
        g.sigmas[ii] = gs;
        suffix += w.weights[ii] * v;
    }
    return g;
}

}  // namespace vosh
