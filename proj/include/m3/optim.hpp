// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace m3 {

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Adam with bias correction over a flat float parameter buffer.
class Adam {
public:
    Adam(std::size_t size, double learning_rate, AdamParams params = {});

    void step(std::span<float> params, std::span<const double> grads);
    void step(std::span<double> params, std::span<const double> grads);

    std::size_t steps() const { return steps_; }
    double learning_rate() const { return lr_; }

private:
    template <typename T>
    void step_impl(std::span<T> params, std::span<const double> grads);

    double lr_;
    AdamParams p_;
    std::vector<double> m_, v_;
    std::size_t steps_ = 0;
};

} // namespace m3
