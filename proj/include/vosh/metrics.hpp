#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "vosh/error.hpp"
#include "vosh/image.hpp"

namespace vosh {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw InvalidArgument("mse: image dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        s += d * d;
    }
    return a.data.empty() ? 0.0 : s / double(a.data.size());
}

/// 10 log10(1 / MSE), capped at kPsnrCap for identical images.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over the valid
/// region, averaged over pixels and channels.
inline double ssim(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw InvalidArgument("ssim: image dimensions differ");
    constexpr int kWin = 11;
    if (a.width < kWin || a.height < kWin) throw InvalidArgument("ssim: images must be at least 11x11");
    std::array<double, kWin> g{};
    double gs = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - kWin / 2;
        g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        gs += g[i];
    }
    for (auto& x : g) x /= gs;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int ow = a.width - kWin + 1, oh = a.height - kWin + 1;

    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        auto px = [&](const Image& im, int x, int y) { return double(im.data[3 * (std::size_t(y) * im.width + x) + ch]); };
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int j = 0; j < kWin; ++j) {
                    for (int i = 0; i < kWin; ++i) {
                        const double w = g[i] * g[j];
                        const double va = px(a, x + i, y + j), vb = px(b, x + i, y + j);
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    return total / (3.0 * ow * oh);
}

}  // namespace vosh
