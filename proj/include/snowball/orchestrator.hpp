#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowball/data.hpp"
#include "snowball/discovery.hpp"
#include "snowball/nn.hpp"
#include "snowball/training.hpp"

namespace snowball {

enum class Algorithm { snowball, mean_teacher, self_learning, supervised };

std::string to_string(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& text);

struct ExperimentConfig {
    Algorithm algorithm = Algorithm::snowball;

    std::vector<std::size_t> hidden = {32, 32};
    Activation activation = Activation::relu;

    int generations = 3;               // M
    int iterations = 3;                // K per generation
    std::vector<std::size_t> discovery_schedule = {100, 200, 400}; // N^{m,k}, indexed by k

    double alpha = 0.99; // teacher EMA decay
    double beta = 0.99;  // master EMA decay
    double lambda1 = 1.0;
    double lambda2_max = 1.0;
    std::size_t ramp_len = 400;
    std::size_t steps_per_iteration = 400;
    std::size_t batch_labeled = 8;
    std::size_t batch_unlabeled = 56;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double augment_sigma = 0.1;
    std::size_t ema_every = 1;
    Divergence consistency = Divergence::cross_entropy;
    double master_weight = 1.0;

    double master_extra_fraction = 0.5;
    std::size_t master_refine_steps = 0; // 0 means steps_per_iteration / 4
    SelectionStrategy strategy = SelectionStrategy::min;
    Fusion fusion = Fusion::single;
    bool balance_classes = false;

    std::size_t eval_every = 0;
    std::uint64_t seed = 0;

    /// Throws ConfigError when a field is out of range.
    void validate() const;
    std::size_t refine_steps() const { return master_refine_steps ? master_refine_steps : steps_per_iteration / 4; }

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// N, 2N, 4N, ... (k entries).
std::vector<std::size_t> doubling_schedule(std::size_t first, int iterations);

enum class Provenance { original, discovered };

/// The evolving labeled pool: the original labeled set plus the samples
/// discovered so far in the current generation.
class TrainingSet {
public:
    struct Entry {
        Sample sample;
        Provenance provenance = Provenance::original;
        int generation = 0; // (m, k) of discovery; 0 for original samples
        int iteration = 0;
    };

    explicit TrainingSet(std::span<const Sample> original);

    /// Appends pool samples with their pseudo-labels. Throws OrchestrationError
    /// if a sample id is already present.
    void add_discovered(std::span<const Sample> samples, std::span<const ClassId> labels, int generation,
                        int iteration);
    /// Drops every discovered sample.
    void reset();

    std::size_t size() const noexcept { return samples_.size(); }
    std::size_t original_size() const noexcept { return original_count_; }
    std::span<const Sample> samples() const noexcept { return samples_; }
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    bool contains(SampleId id) const;

private:
    std::size_t original_count_ = 0;
    std::vector<Entry> entries_;
    std::vector<Sample> samples_; // mirror of entries_ handed to training
};

/// Entry indices of the augmented discovery set: the selected samples followed
/// by the next ceil(fraction * N) entries in selection order.
std::vector<std::size_t> augmented_discovery(const DiscoveryReport& report, double extra_fraction);

/// Fine-tunes a copy of the teacher on the training set plus the augmented
/// discovery set (classification loss only) and returns the EMA (decay beta)
/// of the refined snapshots, started from `previous_master` when given.
ModelParams build_master(const ModelParams& teacher, std::span<const Sample> training_set,
                         const DiscoveryReport& report, std::span<const Sample> pool, const ExperimentConfig& config,
                         const ModelParams* previous_master, std::uint64_t seed);

struct IterationRow {
    int generation = 1;
    int iteration = 1;
    double train_err = 0.0;        // evaluation model on the original labeled set
    double test_err = 0.0;         // evaluation model on the test set
    double student_test_err = 0.0;
    double master_test_err = 0.0;  // equals test_err when no master exists
    double noise_rate = 0.0;       // pseudo-label error among samples discovered this iteration
    std::size_t discovered = 0;
    std::size_t labeled_set_size = 0; // |Omega^{m,k}| after this iteration's discovery
    double wall_time = 0.0;           // seconds since the run started
};

struct Snapshot {
    int generation = 1;
    int iteration = 1;
    ModelParams student;
    ModelParams teacher;
    std::optional<ModelParams> master;
};

struct RunRecord {
    ExperimentConfig config;
    std::vector<IterationRow> rows;
    std::vector<StepMetrics> steps;
    std::vector<Snapshot> snapshots;
    ModelParams final_student;
    ModelParams final_teacher;
    std::optional<ModelParams> final_master;
    std::vector<std::string> checkpoint_paths;

    const IterationRow& final_row() const { return rows.back(); }
};

/// Full master-teacher-student evolution over M generations of K iterations.
RunRecord snowball_run(const DatasetSplit& data, const ExperimentConfig& config);
/// One training pass of M*K*steps_per_iteration steps with teacher consistency only.
RunRecord mean_teacher_run(const DatasetSplit& data, const ExperimentConfig& config);
/// Mean-teacher loop with lambda2 forced to 0.
RunRecord supervised_run(const DatasetSplit& data, const ExperimentConfig& config);
/// Discovery loop without teacher or master guidance.
RunRecord self_learning_run(const DatasetSplit& data, const ExperimentConfig& config);

/// Dispatches on config.algorithm.
RunRecord run_experiment(const DatasetSplit& data, const ExperimentConfig& config);

/// Initial student weights for a run seed.
ModelParams initial_model(const ExperimentConfig& config, std::size_t input_dim, std::size_t class_count);

} // namespace snowball
