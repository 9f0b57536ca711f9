#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "snowball/nn.hpp"

namespace snowball {

using ClassId = int;
using SampleId = std::size_t;

struct Sample {
    SampleId id = 0;
    Vector x;
    std::optional<ClassId> label; // visible label; empty for unlabeled samples
    ClassId true_label = 0;       // ground truth, evaluation only
};

/// Features and labels before any split or normalization.
struct RawDataset {
    std::vector<Vector> features;
    std::vector<ClassId> labels;
    std::size_t class_count = 0;

    std::size_t size() const noexcept { return features.size(); }
    std::size_t input_dim() const noexcept { return features.empty() ? 0 : features.front().size(); }
};

struct DatasetSplit {
    std::vector<Sample> labeled;   // class-balanced
    std::vector<Sample> unlabeled; // labels hidden, ground truth retained
    std::vector<Sample> test;
    std::size_t class_count = 0;
    std::size_t input_dim = 0;
};

/// Two interleaved unit half-circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t), t ~ U[0, pi], plus isotropic Gaussian noise.
RawDataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Isotropic Gaussian blobs whose centers sit on a circle in the first two
/// dimensions, spaced so that the closest pair of centers is `separation` apart.
RawDataset gen_gaussian_blobs(std::size_t classes, std::size_t n_per_class, double sigma, double separation,
                              std::uint64_t seed, std::size_t dim = 2);

/// Concentric circles of radius 1, 2, ..., classes with radial Gaussian noise.
RawDataset gen_rings(std::size_t classes, std::size_t n_per_class, double sigma, std::uint64_t seed);

struct SplitOptions {
    std::size_t labels_per_class = 1;
    double test_fraction = 0.2;
    std::optional<std::size_t> test_size; // overrides test_fraction when set
    std::uint64_t seed = 0;
};

/// Draws the test set first, then a class-balanced labeled set from the rest,
/// and normalizes every split with the mean/std of labeled + unlabeled.
DatasetSplit split(const RawDataset& data, const SplitOptions& options);

/// x + N(0, sigma^2 I).
Vector augment(std::span<const double> x, double sigma, std::mt19937_64& rng);

/// Comma-separated reals with an integer class label in the last column.
/// The class count is `class_count` when given, otherwise max label + 1.
RawDataset parse_csv(std::istream& in, std::optional<std::size_t> class_count = std::nullopt);
RawDataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> class_count = std::nullopt);
void write_csv(std::ostream& out, const RawDataset& data);

} // namespace snowball
