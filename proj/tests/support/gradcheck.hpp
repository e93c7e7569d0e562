#pragma once

// Central finite-difference gradient checker used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "meltpool/ops.hpp"

namespace meltpool::testing {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "leaf[i]" of the worst entry
};

/// Compares the tape gradient of <R, f(leaves)> against central differences,
/// where R is a fixed random projection of f's output. The error of one entry
/// is |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T, typename Fn>
GradCheckResult gradient_check(std::vector<Tensor<T>> leaves, Fn&& fn, unsigned seed = 0, double h = 1e-3) {
    std::mt19937_64 rng(seed + 7919);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    Tensor<T> probe = fn(leaves);
    std::vector<double> proj(probe.size());
    for (auto& r : proj) r = uni(rng);

    auto project = [&](const Tensor<T>& out) {
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) total += proj[i] * static_cast<double>(out[i]);
        return total;
    };

    std::vector<std::vector<T>> analytic;
    {
        Tape<T> tape;
        for (auto& l : leaves) {
            l.set_requires_grad(true);
            l.clear_grad();
        }
        auto out = fn(leaves);
        std::vector<T> pv(proj.begin(), proj.end());
        auto loss = sum(mul(out, Tensor<T>(out.shape(), pv)));
        tape.backward(loss);
        for (auto& l : leaves) {
            analytic.emplace_back(l.grad().begin(), l.grad().end());
            l.clear_grad();
        }
    }

    GradCheckResult result;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto values = leaves[li].mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T saved = values[i];
            values[i] = static_cast<T>(saved + h);
            const double up = project(fn(leaves));
            values[i] = static_cast<T>(saved - h);
            const double down = project(fn(leaves));
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = static_cast<double>(analytic[li][i]);
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst = "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> uni(lo, hi);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(uni(rng));
    return Tensor<T>(std::move(shape), std::move(v));
}

/// Values that stay at least `gap` away from zero, so ReLU kinks are not
/// crossed by a finite-difference probe.
template <typename T>
Tensor<T> random_tensor_away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
    std::uniform_real_distribution<double> uni(gap, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(sign(rng) ? uni(rng) : -uni(rng));
    return Tensor<T>(std::move(shape), std::move(v));
}

/// Distinct values spaced 0.01 apart in random order, so 2x2 window maxima
/// are unique and stable under a 1e-3 perturbation.
template <typename T>
Tensor<T> distinct_tensor(Shape shape, std::mt19937_64& rng) {
    std::vector<T> v(numel(shape));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(0.01 * static_cast<double>(i) - 0.5);
    std::shuffle(v.begin(), v.end(), rng);
    return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace meltpool::testing
