// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "m3/image.hpp"

#include <span>

namespace m3 {

/// False-color view of a feature map (pixels x d, d >= 3): the three leading
/// principal components, each min-max normalized to [0, 1]. Component signs
/// are fixed so each eigenvector sums positive; degenerate components and
/// constant channels map to 0.5.
Image pca_visualize(std::span<const double> map, int width, int height, std::size_t d);

} // namespace m3
