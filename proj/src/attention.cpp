// SPDX-License-Identifier: Apache-2.0
#include "m3/attention.hpp"

#include "m3/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace m3::attention {
namespace {

// Row blocks for gradient partials; fixed so reductions do not depend on the worker count.
constexpr std::size_t kBlockRows = 256;

struct Prepared {
    std::size_t s, d, t;
    double scale;
    LogitPath path;
    std::vector<double> psc; // t*d
    std::vector<double> w_m; // s*d
    std::vector<double> m;   // s*t when materialized
};

Prepared prepare(std::size_t rows, std::size_t s, const MemoryBank& bank, const AttentionConfig& config) {
    if (bank.size() == 0 || bank.d == 0) throw DimensionError("attention: empty memory bank");
    if (bank.psc.size() != bank.size() * bank.d) throw DimensionError("attention: psc is not t x d");
    if (s != bank.degree || bank.w_m.size() != s * bank.d) {
        throw DimensionError("attention: query width " + std::to_string(s) + " does not match W_m rows " +
                             std::to_string(bank.degree));
    }
    Prepared p;
    p.s = s;
    p.d = bank.d;
    p.t = bank.size();
    p.scale = logit_scale(config, p.d);
    p.path = resolve_path(config, rows, p.s, p.t, p.d);
    p.psc.assign(bank.psc.begin(), bank.psc.end());
    p.w_m.assign(bank.w_m.begin(), bank.w_m.end());
    if (p.path == LogitPath::Materialized) {
        p.m.assign(p.s * p.t, 0.0);
        for (std::size_t a = 0; a < p.s; ++a) {
            for (std::size_t j = 0; j < p.t; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < p.d; ++k) acc += p.w_m[a * p.d + k] * p.psc[j * p.d + k];
                p.m[a * p.t + j] = acc;
            }
        }
    }
    return p;
}

void check_queries(std::span<const double> queries, std::size_t s) {
    if (s == 0 || queries.size() % s != 0) throw DimensionError("attention: query buffer is not rows x s");
    for (double v : queries) {
        if (!std::isfinite(v)) throw NumericalError("attention: non-finite query value");
    }
}

// Unscaled logits r_j = (q W_m) . PSC_j; `u` is scratch of size d (direct path).
void raw_logits(const Prepared& p, const double* q, double* u, double* r) {
    if (p.path == LogitPath::Materialized) {
        for (std::size_t j = 0; j < p.t; ++j) r[j] = 0.0;
        for (std::size_t a = 0; a < p.s; ++a) {
            const double qa = q[a];
            const double* mrow = p.m.data() + a * p.t;
            for (std::size_t j = 0; j < p.t; ++j) r[j] += qa * mrow[j];
        }
        return;
    }
    std::fill(u, u + p.d, 0.0);
    for (std::size_t a = 0; a < p.s; ++a) {
        const double qa = q[a];
        const double* wrow = p.w_m.data() + a * p.d;
        for (std::size_t k = 0; k < p.d; ++k) u[k] += qa * wrow[k];
    }
    for (std::size_t j = 0; j < p.t; ++j) {
        const double* prow = p.psc.data() + j * p.d;
        double acc = 0.0;
        for (std::size_t k = 0; k < p.d; ++k) acc += u[k] * prow[k];
        r[j] = acc;
    }
}

void weights_from_raw(const Prepared& p, const double* r, double* w) {
    for (std::size_t j = 0; j < p.t; ++j) w[j] = r[j] * p.scale;
    stable_softmax({w, p.t});
}

} // namespace

TemperatureMode parse_temperature(std::string_view name) {
    if (name == "none") return TemperatureMode::None;
    if (name == "inv_sqrt_d") return TemperatureMode::InvSqrtD;
    if (name == "learned") return TemperatureMode::Learned;
    throw std::invalid_argument("unknown temperature mode '" + std::string(name) + "'");
}

std::string to_string(TemperatureMode mode) {
    switch (mode) {
    case TemperatureMode::None: return "none";
    case TemperatureMode::InvSqrtD: return "inv_sqrt_d";
    case TemperatureMode::Learned: return "learned";
    }
    return "none";
}

double logit_scale(const AttentionConfig& config, std::size_t d) {
    switch (config.mode) {
    case TemperatureMode::None: return 1.0;
    case TemperatureMode::InvSqrtD: return 1.0 / std::sqrt(double(d));
    case TemperatureMode::Learned: return config.learned_scale;
    }
    return 1.0;
}

LogitPath resolve_path(const AttentionConfig& config, std::size_t rows, std::size_t s, std::size_t t,
                       std::size_t d) {
    if (config.path != LogitPath::Auto) return config.path;
    constexpr std::size_t kMaxMaterialized = std::size_t(1) << 22;
    if (s * t > kMaxMaterialized) return LogitPath::Direct;
    const double direct = double(rows) * double(s + t) * double(d);
    const double materialized = double(s) * double(t) * double(d) + double(rows) * double(s) * double(t);
    return materialized < direct ? LogitPath::Materialized : LogitPath::Direct;
}

void stable_softmax(std::span<double> logits) {
    if (logits.empty()) return;
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& z : logits) {
        z = std::exp(z - peak);
        sum += z;
    }
    for (auto& z : logits) z /= sum;
}

AttentionOutput attend(std::span<const double> queries, std::size_t s, const MemoryBank& bank,
                       const AttentionConfig& config, bool keep_weights) {
    check_queries(queries, s);
    const std::size_t rows = queries.size() / s;
    const Prepared p = prepare(rows, s, bank, config);

    AttentionOutput out;
    out.rows = rows;
    out.d = p.d;
    out.t = p.t;
    out.features.assign(rows * p.d, 0.0);
    if (keep_weights) out.weights.assign(rows * p.t, 0.0);

#pragma omp parallel
    {
        std::vector<double> u(p.d), r(p.t), w(p.t);
#pragma omp for schedule(static)
        for (std::size_t row = 0; row < rows; ++row) {
            raw_logits(p, queries.data() + row * s, u.data(), r.data());
            weights_from_raw(p, r.data(), w.data());
            double* f = out.features.data() + row * p.d;
            for (std::size_t j = 0; j < p.t; ++j) {
                const double wj = w[j];
                const double* prow = p.psc.data() + j * p.d;
                for (std::size_t k = 0; k < p.d; ++k) f[k] += wj * prow[k];
            }
            if (keep_weights) std::copy(w.begin(), w.end(), out.weights.begin() + row * p.t);
        }
    }
    return out;
}

AttentionGradients attend_backward(std::span<const double> queries, std::size_t s, const MemoryBank& bank,
                                   const AttentionConfig& config, std::span<const double> grad_features) {
    check_queries(queries, s);
    const std::size_t rows = queries.size() / s;
    const Prepared p = prepare(rows, s, bank, config);
    if (grad_features.size() != rows * p.d) throw DimensionError("attention backward: gradient is not rows x d");

    const bool materialized = p.path == LogitPath::Materialized;
    // Direct path accumulates dW (s*d); materialized accumulates q (x) dz (s*t) and lifts at the end.
    const std::size_t partial_size = materialized ? p.s * p.t : p.s * p.d;
    const std::size_t blocks = (rows + kBlockRows - 1) / kBlockRows;
    std::vector<std::vector<double>> partial(blocks);
    std::vector<double> partial_scale(blocks, 0.0);

    AttentionGradients g;
    g.query.assign(rows * s, 0.0);

#pragma omp parallel
    {
        std::vector<double> u(p.d), r(p.t), w(p.t), gp(p.t), dz(p.t), du(p.d);
#pragma omp for schedule(dynamic, 1)
        for (std::size_t b = 0; b < blocks; ++b) {
            auto& acc = partial[b];
            acc.assign(partial_size, 0.0);
            double acc_scale = 0.0;
            const std::size_t row_end = std::min(rows, (b + 1) * kBlockRows);
            for (std::size_t row = b * kBlockRows; row < row_end; ++row) {
                const double* gf = grad_features.data() + row * p.d;
                if (std::all_of(gf, gf + p.d, [](double v) { return v == 0.0; })) continue;
                const double* q = queries.data() + row * s;
                raw_logits(p, q, u.data(), r.data());
                weights_from_raw(p, r.data(), w.data());

                double mean_gp = 0.0;
                for (std::size_t j = 0; j < p.t; ++j) {
                    const double* prow = p.psc.data() + j * p.d;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < p.d; ++k) dot += gf[k] * prow[k];
                    gp[j] = dot;
                    mean_gp += w[j] * dot;
                }
                for (std::size_t j = 0; j < p.t; ++j) {
                    dz[j] = w[j] * (gp[j] - mean_gp);
                    acc_scale += dz[j] * r[j];
                }

                double* gq = g.query.data() + row * s;
                if (materialized) {
                    for (std::size_t a = 0; a < p.s; ++a) {
                        const double* mrow = p.m.data() + a * p.t;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < p.t; ++j) dot += mrow[j] * dz[j];
                        gq[a] = p.scale * dot;
                        double* arow = acc.data() + a * p.t;
                        for (std::size_t j = 0; j < p.t; ++j) arow[j] += q[a] * dz[j];
                    }
                } else {
                    std::fill(du.begin(), du.end(), 0.0);
                    for (std::size_t j = 0; j < p.t; ++j) {
                        const double c = p.scale * dz[j];
                        const double* prow = p.psc.data() + j * p.d;
                        for (std::size_t k = 0; k < p.d; ++k) du[k] += c * prow[k];
                    }
                    for (std::size_t a = 0; a < p.s; ++a) {
                        const double* wrow = p.w_m.data() + a * p.d;
                        double* arow = acc.data() + a * p.d;
                        double dot = 0.0;
                        for (std::size_t k = 0; k < p.d; ++k) {
                            dot += wrow[k] * du[k];
                            arow[k] += q[a] * du[k];
                        }
                        gq[a] = dot;
                    }
                }
            }
            partial_scale[b] = acc_scale;
        }
    }

    std::vector<double> total(partial_size, 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t i = 0; i < partial_size; ++i) total[i] += partial[b][i];
        g.scale += partial_scale[b];
    }
    if (materialized) {
        g.w_m.assign(p.s * p.d, 0.0);
        for (std::size_t a = 0; a < p.s; ++a) {
            for (std::size_t j = 0; j < p.t; ++j) {
                const double c = p.scale * total[a * p.t + j];
                if (c == 0.0) continue;
                const double* prow = p.psc.data() + j * p.d;
                for (std::size_t k = 0; k < p.d; ++k) g.w_m[a * p.d + k] += c * prow[k];
            }
        }
    } else {
        g.w_m = std::move(total);
    }
    return g;
}

std::vector<TraceEntry> trace_top_k(std::span<const double> query, const MemoryBank& bank,
                                    const AttentionConfig& config, std::size_t k) {
    if (k < 1) throw std::invalid_argument("trace_top_k: k must be >= 1");
    if (k > bank.size()) throw std::invalid_argument("trace_top_k: k exceeds bank size");
    const auto out = attend(query, query.size(), bank, config, true);
    std::vector<std::uint32_t> order(out.t);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return out.weights[a] > out.weights[b]; });
    std::vector<TraceEntry> result;
    for (std::size_t i = 0; i < k; ++i) {
        result.push_back({order[i], out.weights[order[i]], bank.selected_indices[order[i]]});
    }
    return result;
}

} // namespace m3::attention
