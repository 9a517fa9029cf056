// SPDX-License-Identifier: Apache-2.0
#include "m3/errors.hpp"
#include "m3/parallel.hpp"
#include "m3/rasterizer.hpp"
#include "reference.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace m3;
using namespace m3::raster;

namespace {

CameraView front_camera(int w, int h) { return testkit::make_camera(w, h, 1.2 * w, {0.0, 0.0, 4.0}); }

GaussianPrimitive blob(std::array<float, 3> c, float scale, float opacity, std::array<float, 3> rgb,
                       std::vector<float> q = {}) {
    GaussianPrimitive g;
    g.centroid = c;
    const float ls = std::log(scale);
    g.log_scale = {ls, ls, ls};
    g.opacity_logit = float(logit(opacity));
    g.color_sh = rgb;
    g.query = std::move(q);
    return g;
}

// Perturb one float parameter by +-h and return the central difference,
// dividing by the perturbation actually representable in float.
template <class F>
double central_difference(float& param, double h, F&& loss) {
    const float orig = param;
    param = float(orig + h);
    const double up_at = param;
    const double up = loss();
    param = float(orig - h);
    const double down_at = param;
    const double down = loss();
    param = orig;
    return (up - down) / (up_at - down_at);
}

double weighted(const std::vector<double>& v, const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
    return s;
}

} // namespace

TEST(Project, OnAxisLandsOnPrincipalPoint) {
    const auto cam = front_camera(16, 12);
    const auto f = project(blob({0, 0, 0}, 0.2f, 0.5f, {1, 1, 1}), 0, cam);
    ASSERT_TRUE(f.has_value());
    EXPECT_NEAR(f->mean[0], cam.cx, 1e-9);
    EXPECT_NEAR(f->mean[1], cam.cy, 1e-9);
    EXPECT_NEAR(f->depth, 4.0, 1e-9);
    EXPECT_NEAR(f->cov[1], 0.0, 1e-9);
    EXPECT_NEAR(f->cov[0], f->cov[2], 1e-9);
}

TEST(Project, BehindCameraAndNearPlaneCulled) {
    const auto cam = front_camera(8, 8);
    EXPECT_FALSE(project(blob({0, 0, 5}, 0.2f, 0.5f, {1, 1, 1}), 0, cam).has_value());
    EXPECT_FALSE(project(blob({0, 0, 4.0f - 0.005f}, 0.2f, 0.5f, {1, 1, 1}), 0, cam).has_value());
    EXPECT_TRUE(project(blob({0, 0, 3.9f}, 0.2f, 0.5f, {1, 1, 1}), 0, cam).has_value());
}

TEST(Project, OffAxisMatchesPinholeOracle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    const auto cam = testkit::make_camera(20, 14, 17.0, {0.7, -0.4, 4.5}, {0.1, 0.2, 0.0});
    for (int i = 0; i < 50; ++i) {
        const std::array<double, 3> c{u(rng), u(rng), u(rng)};
        const auto f = project(blob({float(c[0]), float(c[1]), float(c[2])}, 0.3f, 0.5f, {0, 0, 0}), 0, cam);
        double pu, pv, z;
        ASSERT_TRUE(reference::project_point(cam, {double(float(c[0])), double(float(c[1])), double(float(c[2]))}, pu, pv, z));
        ASSERT_TRUE(f.has_value());
        EXPECT_NEAR(f->mean[0], pu, 1e-6);
        EXPECT_NEAR(f->mean[1], pv, 1e-6);
        EXPECT_NEAR(f->depth, z, 1e-7);
    }
}

TEST(Project, CovarianceIsRegularizedSpd) {
    std::mt19937_64 rng(6);
    auto scene = testkit::random_scene(rng, 60, 0, 1.0, 0.001, 0.5);
    const auto cam = front_camera(32, 32);
    for (std::uint32_t i = 0; i < scene.size(); ++i) {
        const auto f = project(scene.primitives[i], i, cam);
        ASSERT_TRUE(f.has_value());
        Eigen::Matrix2d c;
        c << f->cov[0], f->cov[1], f->cov[1], f->cov[2];
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(c);
        EXPECT_GE(es.eigenvalues()[0], 0.3 - 1e-9);
        // conic is the inverse
        const double det = c.determinant();
        EXPECT_NEAR(f->conic[0], c(1, 1) / det, 1e-12 * std::abs(f->conic[0]) + 1e-15);
    }
}

TEST(Project, RadiusBoundsSupport) {
    // Beyond the radius the weight must be below the 1/255 cutoff.
    std::mt19937_64 rng(7);
    auto scene = testkit::random_scene(rng, 30, 0);
    const auto cam = front_camera(24, 24);
    for (std::uint32_t i = 0; i < scene.size(); ++i) {
        const auto f = project(scene.primitives[i], i, cam);
        ASSERT_TRUE(f.has_value());
        const double r = f->radius;
        for (int k = 0; k < 64; ++k) {
            const double ang = 2.0 * M_PI * k / 64.0;
            EXPECT_LT(f->evaluate(f->mean[0] + r * std::cos(ang), f->mean[1] + r * std::sin(ang)), kMinAlpha);
        }
    }
}

TEST(Composite, SingleFragment) {
    const std::vector<double> p{1, 0, 0};
    const std::vector<PixelFragment> frags{{1.0, 0.99, p}};
    const auto r = composite_pixel(frags, 3);
    EXPECT_NEAR(r.payload[0], 0.99, 1e-15);
    EXPECT_EQ(r.payload[1], 0.0);
    EXPECT_NEAR(r.transmittance, 0.01, 1e-15);
}

TEST(Composite, EmptyList) {
    const auto r = composite_pixel({}, 3);
    EXPECT_EQ(r.payload, std::vector<double>(3, 0.0));
    EXPECT_EQ(r.transmittance, 1.0);
}

TEST(Composite, TwoHalfFragments) {
    const std::vector<double> p1{1, 0, 0}, p2{0, 1, 0};
    const std::vector<PixelFragment> frags{{1.0, 0.5, p1}, {2.0, 0.5, p2}};
    const auto r = composite_pixel(frags, 3);
    EXPECT_NEAR(r.payload[0], 0.5, 1e-15);
    EXPECT_NEAR(r.payload[1], 0.25, 1e-15);
    EXPECT_NEAR(r.payload[2], 0.0, 1e-15);
    EXPECT_NEAR(r.transmittance, 0.25, 1e-15);
}

TEST(Composite, ClampAndEarlyTermination) {
    const std::vector<double> p{1.0};
    std::vector<PixelFragment> frags;
    for (int i = 0; i < 5; ++i) frags.push_back({double(i), 1.0, p});
    const auto r = composite_pixel(frags, 1);
    // 0.99, then 0.0099, then T = 1e-4 exactly is not below the cutoff, 1e-6 is
    EXPECT_EQ(r.composited, 3u);
    EXPECT_NEAR(r.transmittance, 1e-6, 1e-18);
    EXPECT_NEAR(r.payload[0], 1.0 - 1e-6, 1e-12);
}

#ifndef NDEBUG
TEST(Composite, UnsortedInputIsContractViolation) {
    const std::vector<double> p{1.0};
    const std::vector<PixelFragment> frags{{2.0, 0.5, p}, {1.0, 0.5, p}};
    EXPECT_THROW(composite_pixel(frags, 1), std::logic_error);
}
#endif

TEST(Render, QueryDuplicatingColorMatchesRgb) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto scene = testkit::random_scene(rng, 12, 5);
        for (auto& g : scene.primitives) {
            g.query[1] = g.color_sh[0];
            g.query[2] = g.color_sh[1];
            g.query[3] = g.color_sh[2];
        }
        const auto cam = front_camera(20, 17);
        const auto out = render_view(scene, cam, {true, QueryRange{1, 3}});
        ASSERT_EQ(out.query_channels, 3u);
        for (std::size_t i = 0; i < out.rgb.size(); ++i) EXPECT_LT(std::abs(out.rgb[i] - out.query_map[i]), 1e-5);
    }
}

TEST(Render, TransparentSceneIsBackground) {
    std::mt19937_64 rng(9);
    auto scene = testkit::random_scene(rng, 10, 2);
    for (auto& g : scene.primitives) g.opacity_logit = -std::numeric_limits<float>::infinity();
    const auto out = render_view(scene, front_camera(8, 8), {true, QueryRange{0, 2}});
    for (double v : out.rgb) EXPECT_EQ(v, 0.0);
    for (double v : out.query_map) EXPECT_EQ(v, 0.0);
    for (double v : out.alpha) EXPECT_EQ(v, 0.0);
}

TEST(Render, NothingVisibleIsBackground) {
    std::mt19937_64 rng(10);
    auto scene = testkit::random_scene(rng, 4, 1);
    const auto cam = testkit::make_camera(8, 8, 8.0, {0, 0, 4}, {0, 0, 8});
    const auto out = render_view(scene, cam, RenderRequest::rgb_only());
    for (double v : out.rgb) EXPECT_EQ(v, 0.0);
}

TEST(Render, TwoGaussiansMatchNaiveOracle) {
    GaussianScene scene;
    scene.primitives = {blob({0.1f, 0.0f, 0.0f}, 0.35f, 0.8f, {1, 0.2f, 0}, {0.5f}),
                        blob({-0.2f, 0.1f, -0.5f}, 0.5f, 0.9f, {0, 0.3f, 1}, {-1.0f})};
    scene.model_slices = {{"m", 0, 1}};
    const auto cam = front_camera(8, 8);
    const auto out = render_view(scene, cam, {true, QueryRange{0, 1}});
    const auto ref = reference::render_naive(scene, cam, true, 0, 1);
    for (std::size_t i = 0; i < out.rgb.size(); ++i) EXPECT_NEAR(out.rgb[i], ref.rgb[i], 1e-6);
    for (std::size_t i = 0; i < out.query_map.size(); ++i) EXPECT_NEAR(out.query_map[i], ref.query[i], 1e-6);
    for (std::size_t i = 0; i < out.alpha.size(); ++i) EXPECT_NEAR(out.alpha[i], 1.0 - ref.transmittance[i], 1e-6);
}

TEST(Render, RandomScenesMatchNaiveOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto scene = testkit::random_scene(rng, 15, 4);
        const int w = 3 + int(rng() % 6), h = 3 + int(rng() % 6);
        const auto cam = testkit::make_camera(w, h, 1.2 * w, {0.3, 0.2, 4.0});
        const auto out = render_view(scene, cam, {true, QueryRange{0, 4}});
        const auto ref = reference::render_naive(scene, cam, true, 0, 4);
        for (std::size_t i = 0; i < out.rgb.size(); ++i) ASSERT_NEAR(out.rgb[i], ref.rgb[i], 1e-6);
        for (std::size_t i = 0; i < out.query_map.size(); ++i) ASSERT_NEAR(out.query_map[i], ref.query[i], 1e-6);
        for (const auto& trace : ref.trace) {
            for (std::size_t k = 1; k < trace.size(); ++k) ASSERT_LE(trace[k], trace[k - 1]);
        }
    }
}

TEST(Render, MultiTileMatchesNaiveOracle) {
    std::mt19937_64 rng(12);
    auto scene = testkit::random_scene(rng, 40, 2, 1.0, 0.05, 0.3);
    const auto cam = front_camera(37, 29);
    const auto out = render_view(scene, cam, {true, QueryRange{0, 2}});
    const auto ref = reference::render_naive(scene, cam, true, 0, 2);
    for (std::size_t i = 0; i < out.rgb.size(); ++i) ASSERT_NEAR(out.rgb[i], ref.rgb[i], 1e-6);
}

TEST(Render, SliceEqualsSliceOfFullRender) {
    std::mt19937_64 rng(13);
    auto scene = testkit::random_scene(rng, 10, 7);
    const auto cam = front_camera(19, 13);
    const auto full = render_view(scene, cam, RenderRequest::query_only({0, 7}));
    const auto part = render_view(scene, cam, RenderRequest::query_only({2, 3}));
    for (std::size_t p = 0; p < cam.pixel_count(); ++p) {
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(part.query_map[p * 3 + c], full.query_map[p * 7 + 2 + c]);
    }
    EXPECT_THROW(render_view(scene, cam, RenderRequest::query_only({5, 3})), std::invalid_argument);
}

TEST(Render, LinearInPayload) {
    std::mt19937_64 rng(14);
    auto a = testkit::random_scene(rng, 10, 3);
    auto b = a;
    auto sum = a;
    std::uniform_real_distribution<float> u(-1, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            b.primitives[i].query[k] = u(rng);
            sum.primitives[i].query[k] = a.primitives[i].query[k] + b.primitives[i].query[k];
        }
    }
    const auto cam = front_camera(12, 12);
    const auto ra = render_view(a, cam, RenderRequest::query_only({0, 3}));
    const auto rb = render_view(b, cam, RenderRequest::query_only({0, 3}));
    const auto rs = render_view(sum, cam, RenderRequest::query_only({0, 3}));
    for (std::size_t i = 0; i < rs.query_map.size(); ++i) {
        EXPECT_NEAR(rs.query_map[i], ra.query_map[i] + rb.query_map[i], 1e-6);
    }
    auto scaled = a;
    for (auto& g : scaled.primitives) {
        for (auto& v : g.query) v *= 2.5f;
    }
    const auto rl = render_view(scaled, cam, RenderRequest::query_only({0, 3}));
    for (std::size_t i = 0; i < rl.query_map.size(); ++i) EXPECT_NEAR(rl.query_map[i], 2.5 * ra.query_map[i], 1e-6);
}

TEST(Render, TransmittanceMonotoneOnImplementationPath) {
    std::mt19937_64 rng(15);
    auto scene = testkit::random_scene(rng, 25, 0);
    const auto cam = front_camera(16, 16);
    const auto bins = bin_fragments(scene, cam);
    const auto out = render_view(scene, cam, RenderRequest::rgb_only());
    const std::vector<double> payload{0.0};
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const auto& list = bins.tiles[(y / kTileSize) * bins.tiles_x + x / kTileSize];
            std::vector<PixelFragment> frags;
            for (auto k : list) {
                const auto& f = bins.fragments[k];
                const double a = f.evaluate(x + 0.5, y + 0.5);
                if (a >= kMinAlpha) frags.push_back({f.depth, a, payload});
            }
            double prev = 1.0;
            for (std::size_t n = 0; n <= frags.size(); ++n) {
                const auto r = composite_pixel(std::span(frags.data(), n), 1);
                ASSERT_LE(r.transmittance, prev);
                ASSERT_GE(r.transmittance, 0.0);
                prev = r.transmittance;
            }
            EXPECT_NEAR(out.alpha[std::size_t(y) * cam.width + x], 1.0 - prev, 1e-12);
        }
    }
}

TEST(Render, ThreadCountDoesNotChangeBits) {
    std::mt19937_64 rng(16);
    auto scene = testkit::random_scene(rng, 60, 4, 1.0, 0.05, 0.3);
    const auto cam = front_camera(45, 38);
    std::vector<double> grad(cam.pixel_count() * 3), gq(cam.pixel_count() * 4);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& g : grad) g = u(rng);
    for (auto& g : gq) g = u(rng);
    const int before = parallel::threads();
    parallel::set_threads(1);
    const auto a = render_view(scene, cam, {true, QueryRange{0, 4}});
    const auto ga = backward_render(scene, cam, {true, QueryRange{0, 4}}, grad, gq);
    parallel::set_threads(4);
    const auto b = render_view(scene, cam, {true, QueryRange{0, 4}});
    const auto gb = backward_render(scene, cam, {true, QueryRange{0, 4}}, grad, gq);
    parallel::set_threads(before);
    EXPECT_EQ(a.rgb, b.rgb);
    EXPECT_EQ(a.query_map, b.query_map);
    EXPECT_EQ(ga.color, gb.color);
    EXPECT_EQ(ga.opacity_logit, gb.opacity_logit);
    EXPECT_EQ(ga.query, gb.query);
}

TEST(Backward, SingleFragmentPayloadGradientIsAlpha) {
    GaussianScene scene;
    scene.primitives = {blob({0, 0, 0}, 0.3f, 0.6f, {0.2f, 0.4f, 0.6f}, {1.0f})};
    scene.model_slices = {{"m", 0, 1}};
    const auto cam = front_camera(1, 1);
    const auto out = render_view(scene, cam, {true, QueryRange{0, 1}});
    const std::vector<double> ones{1, 1, 1}, q1{1};
    const auto g = backward_render(scene, cam, {true, QueryRange{0, 1}}, ones, q1);
    EXPECT_NEAR(g.color[0], out.alpha[0], 1e-12);
    EXPECT_NEAR(g.color[2], out.alpha[0], 1e-12);
    EXPECT_NEAR(g.query[0], out.alpha[0], 1e-12);
}

TEST(Backward, FragmentsPastTerminationGetNothing) {
    GaussianScene scene;
    // three clamped walls leave T = 1e-6 before the fourth
    scene.primitives = {blob({0, 0, 0.5f}, 20.0f, 0.9999f, {1, 0, 0}), blob({0, 0, 0.2f}, 20.0f, 0.9999f, {0, 1, 0}),
                        blob({0, 0, -0.1f}, 20.0f, 0.9999f, {0, 1, 1}), blob({0, 0, -0.5f}, 2.0f, 0.999f, {0, 0, 1})};
    const auto cam = front_camera(4, 4);
    const std::vector<double> grad(cam.pixel_count() * 3, 1.0);
    const auto g = backward_render(scene, cam, RenderRequest::rgb_only(), grad, {});
    EXPECT_GT(g.color[0], 0.0);
    EXPECT_GT(g.color[3], 0.0);
    EXPECT_GT(g.color[6], 0.0);
    EXPECT_EQ(g.color[9], 0.0);
    EXPECT_EQ(g.opacity_logit[3], 0.0);
    // clamped alphas pass no opacity gradient
    EXPECT_EQ(g.opacity_logit[0], 0.0);
}

TEST(Backward, ZeroUpstreamGivesZero) {
    std::mt19937_64 rng(17);
    auto scene = testkit::random_scene(rng, 5, 2);
    const auto cam = front_camera(6, 6);
    const std::vector<double> zero_rgb(cam.pixel_count() * 3, 0.0), zero_q(cam.pixel_count() * 2, 0.0);
    const auto g = backward_render(scene, cam, {true, QueryRange{0, 2}}, zero_rgb, zero_q);
    for (double v : g.color) EXPECT_EQ(v, 0.0);
    for (double v : g.query) EXPECT_EQ(v, 0.0);
    for (double v : g.opacity_logit) EXPECT_EQ(v, 0.0);
}

TEST(Backward, UnrenderedChannelIsError) {
    std::mt19937_64 rng(18);
    auto scene = testkit::random_scene(rng, 3, 2);
    const auto cam = front_camera(4, 4);
    const std::vector<double> rgb(cam.pixel_count() * 3, 1.0), q(cam.pixel_count() * 2, 1.0);
    EXPECT_THROW(backward_render(scene, cam, RenderRequest::query_only({0, 2}), rgb, {}), std::invalid_argument);
    EXPECT_THROW(backward_render(scene, cam, RenderRequest::rgb_only(), {}, q), std::invalid_argument);
    EXPECT_THROW(backward_render(scene, cam, RenderRequest::rgb_only(), q, {}), std::invalid_argument);
}

TEST(Backward, FiniteDifferences) {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(-1, 1);
    int checked = 0;
    for (int trial = 0; trial < 5; ++trial) {
        auto scene = testkit::random_scene(rng, 5, 3, 0.6, 0.2, 0.5);
        const auto cam = front_camera(6, 6);
        const RenderRequest req{true, QueryRange{0, 3}};
        std::vector<double> wr(cam.pixel_count() * 3), wq(cam.pixel_count() * 3);
        for (auto& v : wr) v = u(rng);
        for (auto& v : wq) v = u(rng);
        auto loss = [&] {
            const auto o = render_view(scene, cam, req);
            return weighted(o.rgb, wr) + weighted(o.query_map, wq);
        };
        const auto g = backward_render(scene, cam, req, wr, wq);
        for (std::size_t i = 0; i < scene.size(); ++i) {
            auto& p = scene.primitives[i];
            for (int c = 0; c < 3; ++c) {
                const double fd = central_difference(p.color_sh[c], 1e-3, loss);
                EXPECT_LT(testkit::rel_err(g.color[i * 3 + c], fd), 1e-3) << "color " << i << "," << c;
                const double fq = central_difference(p.query[c], 1e-3, loss);
                EXPECT_LT(testkit::rel_err(g.query[i * 3 + c], fq), 1e-3) << "query " << i << "," << c;
                checked += 2;
            }
            const double fo = central_difference(p.opacity_logit, 1e-3, loss);
            EXPECT_LT(testkit::rel_err(g.opacity_logit[i], fo, 1e-5), 1e-3) << "opacity " << i;
            ++checked;
        }
    }
    EXPECT_EQ(checked, 5 * 5 * 7);
}
