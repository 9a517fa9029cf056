// SPDX-License-Identifier: Apache-2.0
#include "m3/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace m3::parallel {

int threads() { return omp_get_max_threads(); }

void set_threads(int n) { omp_set_num_threads(n < 1 ? 1 : n); }

int configure_from_env() {
    if (const char* env = std::getenv("M3_THREADS"); env != nullptr && *env != '\0') {
        try {
            set_threads(std::stoi(env));
        } catch (const std::exception&) {
            // ignore unparsable values, keep the OpenMP default
        }
    }
    return threads();
}

} // namespace m3::parallel
