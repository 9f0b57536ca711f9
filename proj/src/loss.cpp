#include "snowball/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "snowball/errors.hpp"

namespace snowball {

namespace {

void check_lengths(std::span<const double> target, std::span<const double> pred, const char* what)
{
    if (target.size() != pred.size())
        throw ConfigError(std::string(what) + ": length mismatch (" + std::to_string(target.size()) + " vs " +
                          std::to_string(pred.size()) + ")");
}

} // namespace

double cross_entropy(std::span<const double> target, std::span<const double> pred)
{
    check_lengths(target, pred, "cross_entropy");
    double sum = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] == 0.0) continue;
        sum -= target[i] * std::log(std::max(pred[i], kProbFloor));
    }
    return sum;
}

double squared_error(std::span<const double> target, std::span<const double> pred)
{
    check_lengths(target, pred, "squared_error");
    if (target.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = pred[i] - target[i];
        sum += d * d;
    }
    return sum / static_cast<double>(target.size());
}

double divergence(Divergence kind, std::span<const double> target, std::span<const double> pred)
{
    switch (kind) {
    case Divergence::cross_entropy: return cross_entropy(target, pred);
    case Divergence::squared_error: return squared_error(target, pred);
    }
    return 0.0;
}

} // namespace snowball
