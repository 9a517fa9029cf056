// SPDX-License-Identifier: Apache-2.0
#include "m3/optim.hpp"

#include "m3/errors.hpp"

#include <cmath>

namespace m3 {

Adam::Adam(std::size_t size, double learning_rate, AdamParams params)
    : lr_(learning_rate), p_(params), m_(size, 0.0), v_(size, 0.0) {}

template <typename T>
void Adam::step_impl(std::span<T> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("Adam: parameter/gradient size mismatch");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(p_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(p_.beta2, double(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = p_.beta1 * m_[i] + (1.0 - p_.beta1) * g;
        v_[i] = p_.beta2 * v_[i] + (1.0 - p_.beta2) * g * g;
        const double update = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + p_.eps);
        params[i] = static_cast<T>(double(params[i]) - update);
    }
}

void Adam::step(std::span<float> params, std::span<const double> grads) { step_impl(params, grads); }
void Adam::step(std::span<double> params, std::span<const double> grads) { step_impl(params, grads); }

} // namespace m3
