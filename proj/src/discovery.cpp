#include "snowball/discovery.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "snowball/errors.hpp"

namespace snowball {

std::string to_string(SelectionStrategy strategy)
{
    switch (strategy) {
    case SelectionStrategy::min: return "min";
    case SelectionStrategy::max: return "max";
    case SelectionStrategy::random: return "random";
    }
    return "?";
}

std::string to_string(Fusion fusion)
{
    switch (fusion) {
    case Fusion::single: return "single";
    case Fusion::average_distance: return "average_distance";
    case Fusion::feature_cascade: return "feature_cascade";
    case Fusion::average_sorting_score: return "average_sorting_score";
    }
    return "?";
}

SelectionStrategy parse_selection_strategy(const std::string& text)
{
    if (text == "min") return SelectionStrategy::min;
    if (text == "max") return SelectionStrategy::max;
    if (text == "random") return SelectionStrategy::random;
    throw ConfigError("unknown selection strategy '" + text + "' (expected min, max or random)");
}

Fusion parse_fusion(const std::string& text)
{
    if (text == "single") return Fusion::single;
    if (text == "average_distance") return Fusion::average_distance;
    if (text == "feature_cascade") return Fusion::feature_cascade;
    if (text == "average_sorting_score") return Fusion::average_sorting_score;
    throw ConfigError("unknown fusion '" + text +
                      "' (expected single, average_distance, feature_cascade or average_sorting_score)");
}

std::size_t DiscoveryReport::selected_count() const
{
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [](const DiscoveryEntry& e) { return e.selected; }));
}

std::vector<std::size_t> DiscoveryReport::selected_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t idx : selection_order)
        if (entries[idx].selected) out.push_back(idx);
    return out;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ConfigError("euclidean_distance: length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

std::vector<Vector> class_centers(std::span<const Vector> features, std::span<const ClassId> labels,
                                  std::size_t class_count)
{
    if (features.size() != labels.size()) throw ConfigError("class_centers: features and labels differ in length");
    if (features.empty()) throw DiscoveryError("class_centers: empty training set");
    const std::size_t dim = features.front().size();
    std::vector<Vector> centers(class_count, Vector(dim, 0.0));
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        if (labels[i] < 0 || c >= class_count) throw DiscoveryError("class_centers: label outside class range");
        for (std::size_t d = 0; d < dim; ++d) centers[c][d] += features[i][d];
        ++counts[c];
    }
    for (std::size_t c = 0; c < class_count; ++c) {
        if (counts[c] == 0) throw DiscoveryError("class " + std::to_string(c) + " has no samples to form a center");
        for (double& v : centers[c]) v /= static_cast<double>(counts[c]);
    }
    return centers;
}

namespace {

std::vector<Vector> extract_features(const ModelParams& model, std::span<const Sample> samples)
{
    std::vector<Vector> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(forward(model, s.x).features);
    return out;
}

std::vector<ClassId> training_labels(std::span<const Sample> training_set)
{
    std::vector<ClassId> labels;
    labels.reserve(training_set.size());
    for (const Sample& s : training_set) {
        if (!s.label) throw DiscoveryError("training sample " + std::to_string(s.id) + " has no label");
        labels.push_back(*s.label);
    }
    return labels;
}

void assign_nearest(DiscoveryEntry& entry, const std::vector<Vector>& centers)
{
    double best = std::numeric_limits<double>::infinity();
    ClassId best_class = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = euclidean_distance(entry.feature, centers[c]);
        if (d < best) {
            best = d;
            best_class = static_cast<ClassId>(c);
        }
    }
    entry.assigned_label = best_class;
    entry.distance = best;
}

// Entry indices by (distance, sample_id) ascending.
std::vector<std::size_t> ascending_order(const std::vector<DiscoveryEntry>& entries)
{
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (entries[a].distance != entries[b].distance) return entries[a].distance < entries[b].distance;
        return entries[a].sample_id < entries[b].sample_id;
    });
    return order;
}

void assign_ranks(DiscoveryReport& report)
{
    const auto order = ascending_order(report.entries);
    for (std::size_t r = 0; r < order.size(); ++r) report.entries[order[r]].rank = r;
    for (auto& e : report.entries) e.selected = false;
    report.selection_order = order;
    report.requested = 0;
    report.truncated = false;
}

std::vector<std::size_t> strategy_order(const DiscoveryReport& report, SelectionStrategy strategy, std::uint64_t seed)
{
    const auto& entries = report.entries;
    std::vector<std::size_t> order = ascending_order(entries);
    switch (strategy) {
    case SelectionStrategy::min: break;
    case SelectionStrategy::max:
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (entries[a].distance != entries[b].distance) return entries[a].distance > entries[b].distance;
            return entries[a].sample_id < entries[b].sample_id;
        });
        break;
    case SelectionStrategy::random: {
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return entries[a].sample_id < entries[b].sample_id; });
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        break;
    }
    }
    return order;
}

DiscoveryReport base_report(std::span<const Sample> pool)
{
    DiscoveryReport report;
    report.entries.resize(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        report.entries[i].sample_id = pool[i].id;
        report.entries[i].pool_index = i;
    }
    return report;
}

ClassId majority_vote(std::span<const ClassId> votes)
{
    std::map<ClassId, std::size_t> counts;
    for (ClassId v : votes) ++counts[v];
    std::size_t best = 0;
    std::size_t holders = 0;
    ClassId winner = votes.back();
    for (const auto& [label, count] : counts) {
        if (count > best) {
            best = count;
            holders = 1;
            winner = label;
        } else if (count == best) {
            ++holders;
        }
    }
    return holders == 1 ? winner : votes.back();
}

} // namespace

std::vector<Vector> compute_class_centers(const ModelParams& model, std::span<const Sample> training_set)
{
    const auto features = extract_features(model, training_set);
    return class_centers(features, training_labels(training_set), model.class_count());
}

DiscoveryReport assign_pseudo_labels(const ModelParams& model, std::span<const Sample> pool,
                                     std::span<const Sample> training_set)
{
    DiscoveryReport report = base_report(pool);
    report.centers = compute_class_centers(model, training_set);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        report.entries[i].feature = forward(model, pool[i].x).features;
        assign_nearest(report.entries[i], report.centers);
    }
    assign_ranks(report);
    return report;
}

void select_samples(DiscoveryReport& report, std::size_t n, SelectionStrategy strategy, std::uint64_t seed)
{
    if (n == 0) throw ConfigError("select_samples: n must be positive");
    report.strategy = strategy;
    report.requested = n;
    report.truncated = n > report.entries.size();
    report.selection_order = strategy_order(report, strategy, seed);
    const std::size_t take = std::min(n, report.entries.size());
    for (auto& e : report.entries) e.selected = false;
    for (std::size_t i = 0; i < take; ++i) report.entries[report.selection_order[i]].selected = true;
}

void select_samples_balanced(DiscoveryReport& report, std::size_t n, SelectionStrategy strategy,
                             std::size_t class_count, std::uint64_t seed)
{
    if (n == 0) throw ConfigError("select_samples_balanced: n must be positive");
    if (class_count == 0) throw ConfigError("select_samples_balanced: class_count must be positive");
    report.strategy = strategy;
    report.requested = n;
    report.truncated = n > report.entries.size();
    const auto order = strategy_order(report, strategy, seed);

    std::vector<std::size_t> quota(class_count, n / class_count);
    for (std::size_t c = 0; c < n % class_count; ++c) ++quota[c];

    for (auto& e : report.entries) e.selected = false;
    std::vector<std::size_t> chosen;
    for (std::size_t idx : order) {
        auto& e = report.entries[idx];
        const auto c = static_cast<std::size_t>(e.assigned_label);
        if (c < class_count && quota[c] > 0) {
            --quota[c];
            e.selected = true;
            chosen.push_back(idx);
        }
    }
    const std::size_t take = std::min(n, report.entries.size());
    for (std::size_t idx : order) {
        if (chosen.size() >= take) break;
        if (!report.entries[idx].selected) {
            report.entries[idx].selected = true;
            chosen.push_back(idx);
        }
    }
    // Selected entries first, both halves kept in strategy order.
    std::vector<std::size_t> final_order;
    final_order.reserve(order.size());
    for (std::size_t idx : order)
        if (report.entries[idx].selected) final_order.push_back(idx);
    for (std::size_t idx : order)
        if (!report.entries[idx].selected) final_order.push_back(idx);
    report.selection_order = std::move(final_order);
}

DiscoveryReport fuse_distances(std::span<const ModelParams> models, std::span<const Sample> pool,
                               std::span<const Sample> training_set, Fusion fusion)
{
    if (models.empty() || models.size() > 3)
        throw ConfigError("fuse_distances: expected 1 to 3 models, got " + std::to_string(models.size()));
    if (fusion == Fusion::single) {
        if (models.size() != 1) throw ConfigError("fuse_distances: single fusion takes exactly one model");
        DiscoveryReport report = assign_pseudo_labels(models.front(), pool, training_set);
        report.fusion = Fusion::single;
        return report;
    }
    for (const auto& m : models) require_same_shape(models.front(), m, "fuse_distances");

    DiscoveryReport fused = base_report(pool);
    fused.fusion = fusion;

    if (fusion == Fusion::feature_cascade) {
        std::vector<Vector> train_features(training_set.size());
        for (const ModelParams& model : models) {
            const auto f = extract_features(model, training_set);
            for (std::size_t i = 0; i < f.size(); ++i) train_features[i].insert(train_features[i].end(), f[i].begin(), f[i].end());
        }
        fused.centers = class_centers(train_features, training_labels(training_set), models.front().class_count());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            auto& entry = fused.entries[i];
            for (const ModelParams& model : models) {
                const Vector f = forward(model, pool[i].x).features;
                entry.feature.insert(entry.feature.end(), f.begin(), f.end());
            }
            assign_nearest(entry, fused.centers);
        }
        assign_ranks(fused);
        return fused;
    }

    std::vector<DiscoveryReport> per_model;
    per_model.reserve(models.size());
    for (const ModelParams& model : models) per_model.push_back(assign_pseudo_labels(model, pool, training_set));
    fused.centers = per_model.back().centers;

    std::vector<ClassId> votes(models.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double score = 0.0;
        for (std::size_t m = 0; m < models.size(); ++m) {
            const auto& e = per_model[m].entries[i];
            votes[m] = e.assigned_label;
            score += fusion == Fusion::average_distance ? e.distance : static_cast<double>(e.rank);
        }
        auto& entry = fused.entries[i];
        entry.feature = per_model.back().entries[i].feature;
        entry.assigned_label = majority_vote(votes);
        entry.distance = score / static_cast<double>(models.size());
    }
    assign_ranks(fused);
    return fused;
}

double noise_rate(const DiscoveryReport& report, std::span<const ClassId> ground_truth)
{
    if (ground_truth.size() != report.entries.size())
        throw ConfigError("noise_rate: ground truth does not match the report");
    std::size_t selected = 0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < report.entries.size(); ++i) {
        if (!report.entries[i].selected) continue;
        ++selected;
        if (report.entries[i].assigned_label != ground_truth[i]) ++wrong;
    }
    return selected == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(selected);
}

double noise_rate(const DiscoveryReport& report, std::span<const Sample> pool)
{
    std::vector<ClassId> truth;
    truth.reserve(report.entries.size());
    for (const auto& e : report.entries) truth.push_back(pool[e.pool_index].true_label);
    return noise_rate(report, truth);
}

void write_report_csv(std::ostream& out, const DiscoveryReport& report, std::span<const Sample> pool)
{
    out << "sample_id,assigned_label,true_label,distance,rank,selected\n";
    char buf[32];
    for (const auto& e : report.entries) {
        const auto res = std::to_chars(buf, buf + sizeof buf, e.distance);
        out << e.sample_id << ',' << e.assigned_label << ',' << pool[e.pool_index].true_label << ',';
        out.write(buf, res.ptr - buf);
        out << ',' << e.rank << ',' << (e.selected ? 1 : 0) << '\n';
    }
}

} // namespace snowball
