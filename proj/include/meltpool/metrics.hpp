#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

namespace meltpool {

inline double mean_absolute_error(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size() || pred.empty()) throw std::invalid_argument("mae: need equal, non-empty inputs");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
    return total / static_cast<double>(pred.size());
}

/// Coefficient of determination against the mean of `truth`. Empty when the
/// targets have zero variance.
inline std::optional<double> r2_score(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size() || pred.empty()) throw std::invalid_argument("r2: need equal, non-empty inputs");
    double mean = 0.0;
    for (double y : truth) mean += y;
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ss_res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) return std::nullopt;
    return 1.0 - ss_res / ss_tot;
}

}  // namespace meltpool
