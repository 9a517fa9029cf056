// SPDX-License-Identifier: Apache-2.0
#include "m3/image_metrics.hpp"

#include "m3/errors.hpp"

#include <cmath>

namespace m3::metrics {
namespace {

void check_same(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels ||
        a.data.size() != b.data.size()) {
        throw DimensionError("image dimensions differ");
    }
}

// Separable zero-padded "same" filtering of one channel plane.
std::vector<double> blur(const std::vector<double>& plane, int w, int h, const std::vector<double>& win) {
    const int r = static_cast<int>(win.size()) / 2;
    std::vector<double> tmp(plane.size(), 0.0), out(plane.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                const int xx = x + k;
                if (xx >= 0 && xx < w) acc += win[k + r] * plane[std::size_t(y) * w + xx];
            }
            tmp[std::size_t(y) * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -r; k <= r; ++k) {
                const int yy = y + k;
                if (yy >= 0 && yy < h) acc += win[k + r] * tmp[std::size_t(yy) * w + x];
            }
            out[std::size_t(y) * w + x] = acc;
        }
    }
    return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> p(img.pixel_count());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
    return p;
}

SsimGradient ssim_impl(const Image& a, const Image& b, bool want_grad) {
    check_same(a, b);
    const auto win = ssim_window();
    const int w = a.width, h = a.height;
    const std::size_t n = a.pixel_count();
    const double norm = 1.0 / double(n * a.channels);

    SsimGradient result;
    if (want_grad) result.grad.assign(a.data.size(), 0.0);

    for (int c = 0; c < a.channels; ++c) {
        const auto x = channel_plane(a, c);
        const auto y = channel_plane(b, c);
        std::vector<double> xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mu1 = blur(x, w, h, win), mu2 = blur(y, w, h, win);
        const auto e11 = blur(xx, w, h, win), e22 = blur(yy, w, h, win), e12 = blur(xy, w, h, win);

        std::vector<double> da(n), db(n), dc(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double s11 = e11[i] - mu1[i] * mu1[i];
            const double s22 = e22[i] - mu2[i] * mu2[i];
            const double s12 = e12[i] - mu1[i] * mu2[i];
            const double a1 = 2.0 * mu1[i] * mu2[i] + kSsimC1;
            const double a2 = 2.0 * s12 + kSsimC2;
            const double b1 = mu1[i] * mu1[i] + mu2[i] * mu2[i] + kSsimC1;
            const double b2 = s11 + s22 + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            result.value += s * norm;
            if (want_grad) {
                const double dmu = (2.0 * mu2[i] * a2) / (b1 * b2) - s * 2.0 * mu1[i] / b1;
                const double dvar = -s / b2;
                const double dcov = 2.0 * a1 / (b1 * b2);
                db[i] = dvar * norm;
                dc[i] = dcov * norm;
                da[i] = dmu * norm - 2.0 * db[i] * mu1[i] - dc[i] * mu2[i];
            }
        }
        if (want_grad) {
            // Adjoint of the symmetric zero-padded filter is the same filter.
            const auto ga = blur(da, w, h, win), gb = blur(db, w, h, win), gc = blur(dc, w, h, win);
            for (std::size_t i = 0; i < n; ++i) {
                result.grad[i * a.channels + c] = ga[i] + 2.0 * x[i] * gb[i] + y[i] * gc[i];
            }
        }
    }
    return result;
}

} // namespace

std::vector<double> ssim_window() {
    std::vector<double> win(kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int k = -r; k <= r; ++k) {
        win[k + r] = std::exp(-double(k * k) / (2.0 * kSsimSigma * kSsimSigma));
        sum += win[k + r];
    }
    for (auto& v : win) v /= sum;
    return win;
}

double psnr(const Image& a, const Image& b) {
    check_same(a, b);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double diff = a.data[i] - b.data[i];
        mse += diff * diff;
    }
    mse /= double(a.data.size());
    if (mse < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, false).value; }

SsimGradient ssim_with_gradient(const Image& a, const Image& b) { return ssim_impl(a, b, true); }

} // namespace m3::metrics
