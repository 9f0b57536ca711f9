#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "snowball/data.hpp"
#include "snowball/nn.hpp"

namespace snowball {

enum class SelectionStrategy { min, max, random };
enum class Fusion { single, average_distance, feature_cascade, average_sorting_score };

std::string to_string(SelectionStrategy strategy);
std::string to_string(Fusion fusion);
SelectionStrategy parse_selection_strategy(const std::string& text);
Fusion parse_fusion(const std::string& text);

struct DiscoveryEntry {
    SampleId sample_id = 0;
    std::size_t pool_index = 0; // position in the pool the report was built from
    Vector feature;
    ClassId assigned_label = 0;
    double distance = 0.0; // nearest-center distance, or the fused score
    std::size_t rank = 0;  // position by ascending distance, ties by sample_id
    bool selected = false;
};

struct DiscoveryReport {
    std::vector<DiscoveryEntry> entries; // pool order
    std::vector<Vector> centers;
    SelectionStrategy strategy = SelectionStrategy::min;
    Fusion fusion = Fusion::single;
    /// Entry indices in the order the strategy picks them; the first
    /// `selected_count()` are the selected ones.
    std::vector<std::size_t> selection_order;
    std::size_t requested = 0;
    bool truncated = false; // requested more than the pool holds

    std::size_t selected_count() const;
    /// Entry indices of the selected samples, in selection order.
    std::vector<std::size_t> selected_indices() const;
};

/// Per-class mean of the given features. Throws DiscoveryError naming the first
/// class in [0, class_count) without samples.
std::vector<Vector> class_centers(std::span<const Vector> features, std::span<const ClassId> labels,
                                  std::size_t class_count);

/// Mean penultimate feature per class over `training_set`, extracted with `model`.
std::vector<Vector> compute_class_centers(const ModelParams& model, std::span<const Sample> training_set);

double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// Labels every pool sample with its nearest class center (lower class index on
/// ties) and ranks the pool by ascending distance. Nothing is selected yet.
DiscoveryReport assign_pseudo_labels(const ModelParams& model, std::span<const Sample> pool,
                                     std::span<const Sample> training_set);

/// Marks min(n, pool size) entries as selected. min takes the smallest
/// distances, max the largest, random a uniform draw without replacement
/// under `seed`. Ties go to the lower sample_id. Throws ConfigError when n == 0.
void select_samples(DiscoveryReport& report, std::size_t n, SelectionStrategy strategy, std::uint64_t seed);

/// Like select_samples but gives each assigned class an equal quota of n
/// (remainder to the lower classes); unfilled quota is taken from the
/// remaining entries in strategy order.
void select_samples_balanced(DiscoveryReport& report, std::size_t n, SelectionStrategy strategy,
                             std::size_t class_count, std::uint64_t seed);

/// Multi-model discovery report (1 to 3 models).
///   single                 exactly one model, same as assign_pseudo_labels
///   average_distance       mean of the per-model nearest-center distances
///   feature_cascade        nearest center in the concatenated feature space
///   average_sorting_score  mean of the per-model 0-based distance ranks
/// Labels of average_distance and average_sorting_score come from a majority
/// vote over the models; without a strict majority the last model decides.
DiscoveryReport fuse_distances(std::span<const ModelParams> models, std::span<const Sample> pool,
                               std::span<const Sample> training_set, Fusion fusion);

/// Fraction of selected entries whose label differs from `ground_truth`
/// (indexed like report.entries). 0 when nothing is selected.
double noise_rate(const DiscoveryReport& report, std::span<const ClassId> ground_truth);
/// Same, reading ground truth from the pool the report was built from.
double noise_rate(const DiscoveryReport& report, std::span<const Sample> pool);

/// CSV dump: sample_id,assigned_label,true_label,distance,rank,selected
void write_report_csv(std::ostream& out, const DiscoveryReport& report, std::span<const Sample> pool);

} // namespace snowball
