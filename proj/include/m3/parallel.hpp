// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace m3::parallel {

/// Worker count used by the OpenMP kernels. Results never depend on it: every
/// kernel fixes its per-element summation order and merges partials in a fixed
/// block order.
int threads();
void set_threads(int n);

/// Applies M3_THREADS if set; returns the resulting worker count.
int configure_from_env();

} // namespace m3::parallel
