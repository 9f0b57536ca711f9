#pragma once

#include <span>

namespace snowball {

/// Probability floor applied inside every log.
inline constexpr double kProbFloor = 1e-12;

enum class Divergence {
    cross_entropy,
    squared_error,
};

/// -sum_i target_i * log(max(pred_i, 1e-12)). The target is treated as a constant.
double cross_entropy(std::span<const double> target, std::span<const double> pred);

/// mean_i (pred_i - target_i)^2 over the class axis.
double squared_error(std::span<const double> target, std::span<const double> pred);

double divergence(Divergence kind, std::span<const double> target, std::span<const double> pred);

} // namespace snowball
