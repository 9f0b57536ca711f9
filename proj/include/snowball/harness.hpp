#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowball/data.hpp"
#include "snowball/orchestrator.hpp"

namespace snowball {

enum class DatasetKind { two_moons, blobs, rings, csv };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& text);

struct DataConfig {
    DatasetKind kind = DatasetKind::two_moons;
    std::size_t n = 1504;          // two-moons point count
    double noise = 0.15;           // generator noise (two-moons, blobs, rings)
    std::size_t classes = 4;       // blobs / rings
    std::size_t n_per_class = 100; // blobs / rings
    double separation = 3.0;       // blobs: distance between neighbouring centers
    std::size_t dim = 2;           // blobs
    std::string csv_path;
    std::size_t csv_classes = 0; // 0 infers from the labels
    std::size_t labels_per_class = 2;
    double test_fraction = 0.2;
    std::size_t test_size = 500; // overrides test_fraction when > 0

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Everything needed to reproduce one run.
struct RunSpec {
    ExperimentConfig experiment;
    DataConfig data;

    friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

/// Sets one `key = value` field. Throws ConfigError for unknown keys or bad values.
void apply_setting(RunSpec& spec, const std::string& key, const std::string& value);
/// Every key in schema order with its current value.
std::vector<std::pair<std::string, std::string>> settings(const RunSpec& spec);

/// Flat `key = value` lines; '#' starts a comment. In a manifest only the
/// [config] section is read.
RunSpec parse_config(std::istream& in, RunSpec base = {});
RunSpec load_config(const std::filesystem::path& path, RunSpec base = {});
void write_config(std::ostream& out, const RunSpec& spec);

/// Generates or loads the dataset and splits it under the run seed.
DatasetSplit make_dataset(const RunSpec& spec);

inline constexpr const char* kManifestMagic = "# snowball run manifest v1";
inline constexpr const char* kRowsHeader =
    "generation,iteration,train_err,test_err,student_test_err,master_test_err,noise_rate,discovered,"
    "labeled_set_size,wall_time";

struct Manifest {
    RunSpec spec;
    std::vector<IterationRow> rows;
    std::vector<std::pair<std::string, std::string>> checkpoints;
};

void write_manifest(std::ostream& out, const RunSpec& spec, const RunRecord& record);
void write_manifest(std::ostream& out, const Manifest& manifest);
Manifest read_manifest(std::istream& in);
Manifest load_manifest(const std::filesystem::path& path);

void write_rows_csv(std::ostream& out, std::span<const IterationRow> rows);
std::vector<IterationRow> read_rows_csv(std::istream& in);

/// True when every metric except wall time matches exactly.
bool same_metrics(const IterationRow& a, const IterationRow& b);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation; 0 for a single record
};

MeanStd mean_std(std::span<const double> values);

struct AggregateRow {
    int generation = 1;
    int iteration = 1;
    std::size_t runs = 0;
    MeanStd train_err;
    MeanStd test_err;
    MeanStd student_test_err;
    MeanStd noise_rate;
    MeanStd labeled_set_size;
};

/// Per-(m,k) mean and sample std across records. Throws AggregationError when
/// the records differ in anything but the seed or in their (m,k) grid.
std::vector<AggregateRow> aggregate(std::span<const RunRecord> records);
void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows);

/// Runs one experiment and writes manifest, step CSV and final checkpoints into `dir`.
RunRecord execute_run(const RunSpec& spec, const std::filesystem::path& dir);

// Ablations.

struct SelectionRow {
    std::string method;               // "base", "min", "random", "max"
    std::size_t labels = 0;           // labeled samples used for the ground-truth model
    double ground_truth_test_err = 0; // model trained with the selected samples' true labels
    double sample_error_rate = 0;     // pseudo-label noise of the selection (0 for base)
};

/// Trains a mean-teacher model on the labeled set, discovers `n` samples with
/// each strategy, and retrains with ground-truth labels for the selected ones.
std::vector<SelectionRow> selection_ablation(const DatasetSplit& data, const ExperimentConfig& config, std::size_t n);

struct FusionRow {
    Fusion fusion = Fusion::single;
    double test_err = 0;
    double noise_rate = 0; // mean pseudo-label noise over the discovery iterations
};

std::vector<FusionRow> fusion_ablation(const DatasetSplit& data, const ExperimentConfig& config);

struct GuidanceRow {
    int generation = 1;
    int iteration = 1;
    double snowball_test_err = 0;
    double self_learning_test_err = 0;
    double snowball_noise = 0;
    double self_learning_noise = 0;
};

std::vector<GuidanceRow> guidance_ablation(const DatasetSplit& data, const ExperimentConfig& config);

/// Parses "0..4" (inclusive) or "1,5,9".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// Output root: $SNOWBALL_OUTPUT_DIR when set, else "runs".
std::filesystem::path default_output_root();

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDivergence = 3 };

int cli_run(int argc, char** argv);

} // namespace snowball
