// SPDX-License-Identifier: Apache-2.0
#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace m3::reference {

std::vector<std::uint32_t> reduce_sequential(std::span<const float> rows, std::size_t d, double theta) {
    const std::size_t n = rows.size() / d;
    std::vector<double> unit(rows.size());
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) norm += double(rows[i * d + k]) * rows[i * d + k];
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < d; ++k) unit[i * d + k] = rows[i * d + k] / norm;
    }
    std::vector<std::vector<double>> sim(n, std::vector<double>(n));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += unit[a * d + k] * unit[b * d + k];
            sim[a][b] = s;
        }
    }
    std::vector<bool> used(n, false);
    std::vector<std::uint32_t> out;
    for (std::size_t j = 0; j < n; ++j) {
        if (used[j]) continue;
        bool free = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (sim[j][i] >= theta && used[i]) free = false;
        }
        if (!free) continue;
        out.push_back(std::uint32_t(j));
        for (std::size_t i = 0; i < n; ++i) {
            if (sim[j][i] >= theta) used[i] = true;
        }
        used[j] = true;
    }
    return out;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Mat3 transpose(const Mat3& a) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) c[i][j] = a[j][i];
    return c;
}

Mat3 rotation(const std::array<float, 4>& q4) {
    double w = q4[0], x = q4[1], y = q4[2], z = q4[3];
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n == 0.0) return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    w /= n, x /= n, y /= n, z /= n;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

struct Splat {
    std::size_t index;
    double depth, u, v, opacity;
    double a, b, c; // inverse 2D covariance: a dx^2 + 2 b dx dy + c dy^2
};

} // namespace

bool project_point(const CameraView& cam, const std::array<double, 3>& p, double& u, double& v, double& z) {
    const auto& m = cam.world_to_camera;
    const double x = m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3];
    const double y = m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7];
    z = m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11];
    if (z <= 0.01) return false;
    u = cam.fx * x / z + cam.cx;
    v = cam.fy * y / z + cam.cy;
    return true;
}

NaiveRender render_naive(const GaussianScene& scene, const CameraView& cam, bool rgb, std::uint32_t qstart,
                         std::uint32_t qlen) {
    const auto& m = cam.world_to_camera;
    const Mat3 w{{{m[0], m[1], m[2]}, {m[4], m[5], m[6]}, {m[8], m[9], m[10]}}};
    std::vector<Splat> splats;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene.primitives[i];
        const std::array<double, 3> c{g.centroid[0], g.centroid[1], g.centroid[2]};
        const double x = m[0] * c[0] + m[1] * c[1] + m[2] * c[2] + m[3];
        const double y = m[4] * c[0] + m[5] * c[1] + m[6] * c[2] + m[7];
        const double z = m[8] * c[0] + m[9] * c[1] + m[10] * c[2] + m[11];
        if (z <= 0.01) continue;
        const Mat3 r = rotation(g.rotation);
        Mat3 s{};
        for (int k = 0; k < 3; ++k) s[k][k] = std::exp(double(g.log_scale[k]));
        const Mat3 rs = mul(r, s);
        const Mat3 sigma = mul(w, mul(mul(rs, transpose(rs)), transpose(w)));
        // J rows: (fx/z, 0, -fx x/z^2), (0, fy/z, -fy y/z^2)
        const double j[2][3] = {{cam.fx / z, 0, -cam.fx * x / (z * z)}, {0, cam.fy / z, -cam.fy * y / (z * z)}};
        double cov[2][2] = {};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                for (int k = 0; k < 3; ++k)
                    for (int l = 0; l < 3; ++l) cov[a][b] += j[a][k] * sigma[k][l] * j[b][l];
        cov[0][0] += 0.3;
        cov[1][1] += 0.3;
        const double det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        Splat sp;
        sp.index = i;
        sp.depth = z;
        sp.u = cam.fx * x / z + cam.cx;
        sp.v = cam.fy * y / z + cam.cy;
        sp.opacity = 1.0 / (1.0 + std::exp(-double(g.opacity_logit)));
        sp.a = cov[1][1] / det;
        sp.b = -0.5 * (cov[0][1] + cov[1][0]) / det;
        sp.c = cov[0][0] / det;
        splats.push_back(sp);
    }
    std::sort(splats.begin(), splats.end(), [](const Splat& p, const Splat& q) {
        return p.depth != q.depth ? p.depth < q.depth : p.index < q.index;
    });

    NaiveRender out;
    const std::size_t pixels = cam.pixel_count();
    out.rgb.assign(rgb ? pixels * 3 : 0, 0.0);
    out.query.assign(pixels * qlen, 0.0);
    out.transmittance.assign(pixels, 1.0);
    out.trace.resize(pixels);
    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            const std::size_t pix = std::size_t(py) * cam.width + px;
            double t = 1.0;
            for (const auto& sp : splats) {
                if (t < 1e-4) break;
                const double dx = px + 0.5 - sp.u, dy = py + 0.5 - sp.v;
                const double q = sp.a * dx * dx + 2.0 * sp.b * dx * dy + sp.c * dy * dy;
                double alpha = sp.opacity * std::exp(-0.5 * q);
                if (alpha < 1.0 / 255.0) continue;
                alpha = std::min(alpha, 0.99);
                const auto& g = scene.primitives[sp.index];
                out.trace[pix].push_back(t);
                if (rgb) {
                    for (int ch = 0; ch < 3; ++ch) out.rgb[pix * 3 + ch] += g.color_sh[ch] * alpha * t;
                }
                for (std::uint32_t ch = 0; ch < qlen; ++ch) out.query[pix * qlen + ch] += g.query[qstart + ch] * alpha * t;
                t *= 1.0 - alpha;
            }
            out.transmittance[pix] = t;
        }
    }
    return out;
}

NaiveAttention attend_naive(std::span<const double> queries, std::size_t s, std::span<const float> psc,
                            std::size_t t, std::size_t d, std::span<const float> w_m, double scale) {
    const std::size_t rows = queries.size() / s;
    NaiveAttention out;
    out.features.assign(rows * d, 0.0);
    out.weights.assign(rows * t, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> logits(t, 0.0);
        for (std::size_t j = 0; j < t; ++j) {
            for (std::size_t a = 0; a < s; ++a) {
                for (std::size_t k = 0; k < d; ++k) {
                    logits[j] += queries[r * s + a] * double(w_m[a * d + k]) * double(psc[j * d + k]);
                }
            }
            logits[j] *= scale;
        }
        const double top = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (std::size_t j = 0; j < t; ++j) z += std::exp(logits[j] - top);
        for (std::size_t j = 0; j < t; ++j) {
            const double wgt = std::exp(logits[j] - top) / z;
            out.weights[r * t + j] = wgt;
            for (std::size_t k = 0; k < d; ++k) out.features[r * d + k] += wgt * double(psc[j * d + k]);
        }
    }
    return out;
}

namespace {

double cosine_naive(const double* a, const double* b, std::size_t d) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    return dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-8);
}

} // namespace

double recall_at_k_naive(std::span<const double> queries, std::span<const double> keys, std::size_t m,
                         std::size_t d, int k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t j = 0; j < m; ++j) ranked.emplace_back(cosine_naive(&queries[i * d], &keys[j * d], d), j);
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (int r = 0; r < k; ++r) {
            if (ranked[r].second == i) ++hits;
        }
    }
    return 100.0 * double(hits) / double(m);
}

NaiveGrounding grounding_naive(std::span<const double> rendered, std::size_t pixels, std::size_t d,
                               const std::vector<std::vector<double>>& embeddings,
                               const std::vector<std::vector<std::uint8_t>>& masks) {
    const std::size_t q = embeddings.size();
    std::vector<int> label(pixels, -1);
    for (std::size_t p = 0; p < pixels; ++p) {
        double best = 0.0;
        for (std::size_t k = 0; k < q; ++k) {
            const double c = cosine_naive(&rendered[p * d], embeddings[k].data(), d);
            if (c > best) {
                best = c;
                label[p] = int(k);
            }
        }
    }
    NaiveGrounding g;
    double inter_sum = 0.0, union_sum = 0.0;
    for (std::size_t k = 0; k < q; ++k) {
        double inter = 0.0, uni = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
            const bool pred = label[p] == int(k);
            const bool gt = masks[k][p] != 0;
            inter += pred && gt;
            uni += pred || gt;
        }
        g.iou.push_back(uni > 0 ? inter / uni : 0.0);
        inter_sum += inter;
        union_sum += uni;
    }
    g.miou = std::accumulate(g.iou.begin(), g.iou.end(), 0.0) / double(q);
    g.ciou = union_sum > 0 ? inter_sum / union_sum : 0.0;
    return g;
}

} // namespace m3::reference
