#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "meltpool/tensor.hpp"

namespace meltpool {

// beta/epsilon defaults are the conventional Adam values.
template <typename T>
struct AdamState {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    long step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update, in place. Gradients are cleared afterwards.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, T lr) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            throw std::logic_error("adam_step: parameter '" +
                                   (params[i].name().empty() ? "#" + std::to_string(i) : params[i].name()) +
                                   "' has no gradient");
        }
    }
    if (state.m.empty()) {
        for (auto& p : params) {
            state.m.emplace_back(p.size(), T(0));
            state.v.emplace_back(p.size(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw std::logic_error("adam_step: optimizer state tracks a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].size()) {
            throw ShapeError("adam_step: state for '" + params[i].name() + "' has a different size");
        }
    }

    ++state.step;
    const T c1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
    const T c2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_values();
        auto g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
            const T m_hat = m[j] / c1;
            const T v_hat = v[j] / c2;
            w[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
        params[i].clear_grad();
    }
}

}  // namespace meltpool
