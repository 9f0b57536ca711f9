#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace snowball {

/// Invalid arguments, shape mismatches, malformed configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset problems: unparsable CSV, insufficient samples per class.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& what, std::size_t line)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite value produced during a forward pass.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t layer)
        : std::runtime_error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}

    std::size_t layer() const noexcept { return layer_; }

private:
    std::size_t layer_;
};

/// Loss diverged during a training loop.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::size_t step, int generation = 0, int iteration = 0)
        : std::runtime_error(format(what, step, generation, iteration)),
          detail_(what), step_(step), generation_(generation), iteration_(iteration) {}

    /// Same failure tagged with the (generation, iteration) it happened in.
    TrainingError located(int generation, int iteration) const
    {
        return TrainingError(detail_, step_, generation, iteration);
    }

    std::size_t step() const noexcept { return step_; }
    int generation() const noexcept { return generation_; }
    int iteration() const noexcept { return iteration_; }

private:
    static std::string format(const std::string& what, std::size_t step, int m, int k)
    {
        std::string where = "step " + std::to_string(step);
        if (m > 0) where = "generation " + std::to_string(m) + ", iteration " + std::to_string(k) + ", " + where;
        return what + " at " + where;
    }

    std::string detail_;
    std::size_t step_;
    int generation_;
    int iteration_;
};

class DiscoveryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class OrchestrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class AggregationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace snowball
