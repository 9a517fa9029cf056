// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/image.hpp"

#include <vector>

namespace m3::metrics {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over pixels and channels; 11x11 Gaussian window (sigma 1.5),
/// zero padding at the borders.
double ssim(const Image& a, const Image& b);

struct SsimGradient {
    double value = 0.0;
    std::vector<double> grad; // d ssim / d a, same layout as a.data
};
SsimGradient ssim_with_gradient(const Image& a, const Image& b);

/// Normalized 1D Gaussian window used by ssim().
std::vector<double> ssim_window();

} // namespace m3::metrics
