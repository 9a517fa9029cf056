// SPDX-License-Identifier: Apache-2.0
#include "m3/pca.hpp"

#include "m3/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace m3 {

Image pca_visualize(std::span<const double> map, int width, int height, std::size_t d) {
    if (d < 3) throw DimensionError("PCA visualization needs d >= 3");
    const std::size_t pixels = std::size_t(width) * height;
    if (pixels == 0 || map.size() != pixels * d) throw DimensionError("feature map is not h x w x d");

    const auto dim = static_cast<Eigen::Index>(d);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t k = 0; k < d; ++k) mean[Eigen::Index(k)] += map[p * d + k];
    }
    mean /= double(pixels);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd centered(dim);
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t k = 0; k < d; ++k) centered[Eigen::Index(k)] = map[p * d + k] - mean[Eigen::Index(k)];
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centered);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= double(pixels);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    const auto& values = solver.eigenvalues(); // ascending
    const double top = std::max(values[dim - 1], 0.0);

    Image out = Image::zeros(width, height, 3);
    for (int c = 0; c < 3; ++c) {
        const Eigen::Index col = dim - 1 - c;
        const bool degenerate = top <= 1e-12 || values[col] <= 1e-9 * top;
        if (degenerate) {
            for (std::size_t p = 0; p < pixels; ++p) out.data[p * 3 + c] = 0.5;
            continue;
        }
        Eigen::VectorXd axis = solver.eigenvectors().col(col);
        double sum = axis.sum();
        if (sum == 0.0) {
            for (Eigen::Index k = 0; k < axis.size(); ++k) {
                if (axis[k] != 0.0) {
                    sum = axis[k];
                    break;
                }
            }
        }
        if (sum < 0.0) axis = -axis;

        std::vector<double> proj(pixels);
        for (std::size_t p = 0; p < pixels; ++p) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += (map[p * d + k] - mean[Eigen::Index(k)]) * axis[Eigen::Index(k)];
            proj[p] = acc;
        }
        const auto [lo, hi] = std::minmax_element(proj.begin(), proj.end());
        const double range = *hi - *lo;
        for (std::size_t p = 0; p < pixels; ++p) {
            out.data[p * 3 + c] = range > 1e-12 ? (proj[p] - *lo) / range : 0.5;
        }
    }
    return out;
}

} // namespace m3
