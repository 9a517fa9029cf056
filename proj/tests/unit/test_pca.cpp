// SPDX-License-Identifier: Apache-2.0
#include "m3/errors.hpp"
#include "m3/pca.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace m3;

TEST(Pca, ConstantMapIsGray) {
    const std::vector<double> map(6 * 4, 0.25);
    const auto img = pca_visualize(map, 3, 2, 4);
    ASSERT_EQ(img.data.size(), 18u);
    for (double v : img.data) EXPECT_EQ(v, 0.5);
}

TEST(Pca, RankOneVariesInFirstChannelOnly) {
    // rows = base + a_i * dir: a single principal direction
    const int w = 5, h = 4;
    const std::size_t d = 6;
    const std::vector<double> base{1, 2, 3, 4, 5, 6}, dir{1, -1, 2, 0, 0.5, 1};
    std::vector<double> map(w * h * d), a(w * h);
    for (int p = 0; p < w * h; ++p) {
        a[p] = std::sin(0.7 * p);
        for (std::size_t k = 0; k < d; ++k) map[p * d + k] = base[k] + a[p] * dir[k];
    }
    const auto img = pca_visualize(map, w, h, d);
    double lo = 1, hi = 0;
    for (int p = 0; p < w * h; ++p) {
        lo = std::min(lo, img.data[p * 3]);
        hi = std::max(hi, img.data[p * 3]);
        EXPECT_EQ(img.data[p * 3 + 1], 0.5);
        EXPECT_EQ(img.data[p * 3 + 2], 0.5);
    }
    EXPECT_NEAR(lo, 0.0, 1e-12);
    EXPECT_NEAR(hi, 1.0, 1e-12);
    // dir sums positive, so larger a maps brighter
    const auto pmax = std::max_element(a.begin(), a.end()) - a.begin();
    EXPECT_NEAR(img.data[pmax * 3], 1.0, 1e-9);
}

TEST(Pca, DeterministicAndInRange) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> map(64 * 10);
    for (auto& v : map) v = n(rng);
    const auto a = pca_visualize(map, 8, 8, 10), b = pca_visualize(map, 8, 8, 10);
    EXPECT_EQ(a.data, b.data);
    for (double v : a.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    // eigenvector signs are pinned, so flipping the features inverts every channel
    std::vector<double> neg(map);
    for (auto& v : neg) v = -v;
    const auto c = pca_visualize(neg, 8, 8, 10);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], 1.0 - c.data[i], 1e-9);
}

TEST(Pca, Errors) {
    const std::vector<double> map(8, 0.0);
    EXPECT_THROW(pca_visualize(map, 2, 2, 2), DimensionError);
    EXPECT_THROW(pca_visualize(map, 3, 2, 3), DimensionError);
}
