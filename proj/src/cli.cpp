#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "snowball/errors.hpp"
#include "snowball/harness.hpp"

namespace snowball {

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string algorithm;
    std::string dataset;
    std::optional<std::size_t> labels_per_class;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string seeds = "0..4";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_seeds)
{
    cmd->add_option("-c,--config", o.config_path, "Config file (key = value) or a run manifest");
    cmd->add_option("--set", o.overrides, "Override a setting, key=value (repeatable)");
    cmd->add_option("--algo", o.algorithm, "snowball | mean-teacher | self-learning | supervised");
    cmd->add_option("--dataset", o.dataset, "two-moons | blobs | rings | csv");
    cmd->add_option("--labels-per-class", o.labels_per_class, "Labeled samples per class");
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--out", o.out, "Output directory (default $SNOWBALL_OUTPUT_DIR or ./runs)");
    if (with_seeds) cmd->add_option("--seeds", o.seeds, "Seed range a..b or list a,b,c")->capture_default_str();
}

RunSpec resolve(const CommonOptions& o)
{
    RunSpec spec;
    if (!o.config_path.empty()) spec = load_config(o.config_path);
    if (!o.algorithm.empty()) apply_setting(spec, "algorithm", o.algorithm);
    if (!o.dataset.empty()) apply_setting(spec, "dataset", o.dataset);
    if (o.labels_per_class) spec.data.labels_per_class = *o.labels_per_class;
    if (o.seed) spec.experiment.seed = *o.seed;
    for (const std::string& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_setting(spec, kv.substr(0, eq), kv.substr(eq + 1));
    }
    spec.experiment.validate();
    return spec;
}

std::filesystem::path output_root(const CommonOptions& o)
{
    return o.out.empty() ? default_output_root() : std::filesystem::path(o.out);
}

std::string pct(double rate)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * rate << '%';
    return s.str();
}

std::string pct(const MeanStd& m)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * m.mean << " +- " << 100.0 * m.std << '%';
    return s.str();
}

void print_rows(std::ostream& out, std::span<const IterationRow> rows)
{
    out << std::left << std::setw(5) << "gen" << std::setw(5) << "it" << std::setw(10) << "train" << std::setw(10)
        << "test" << std::setw(10) << "student" << std::setw(10) << "master" << std::setw(10) << "noise"
        << std::setw(11) << "discovered" << std::setw(9) << "labeled" << "time\n";
    for (const IterationRow& r : rows) {
        std::ostringstream time;
        time << std::fixed << std::setprecision(2) << r.wall_time << 's';
        out << std::left << std::setw(5) << r.generation << std::setw(5) << r.iteration << std::setw(10)
            << pct(r.train_err) << std::setw(10) << pct(r.test_err) << std::setw(10) << pct(r.student_test_err)
            << std::setw(10) << pct(r.master_test_err) << std::setw(10) << pct(r.noise_rate) << std::setw(11)
            << r.discovered << std::setw(9) << r.labeled_set_size << time.str() << '\n';
    }
}

std::string run_name(const RunSpec& spec)
{
    return to_string(spec.experiment.algorithm) + "-seed" + std::to_string(spec.experiment.seed);
}

int cmd_train(const CommonOptions& o)
{
    const RunSpec spec = resolve(o);
    const auto dir = output_root(o) / run_name(spec);
    const RunRecord record = execute_run(spec, dir);
    std::cout << to_string(spec.experiment.algorithm) << " on " << to_string(spec.data.kind) << ", seed "
              << spec.experiment.seed << '\n';
    print_rows(std::cout, record.rows);
    std::cout << "manifest: " << (dir / "manifest.txt").string() << '\n';
    return kExitOk;
}

int cmd_sweep(const CommonOptions& o)
{
    const RunSpec base = resolve(o);
    const auto root = output_root(o) / ("sweep-" + to_string(base.experiment.algorithm));
    std::vector<RunRecord> records;
    for (std::uint64_t seed : parse_seed_list(o.seeds)) {
        RunSpec spec = base;
        spec.experiment.seed = seed;
        records.push_back(execute_run(spec, root / ("seed-" + std::to_string(seed))));
        std::cout << "seed " << seed << ": final test error " << pct(records.back().final_row().test_err) << '\n';
    }
    const auto rows = aggregate(records);
    {
        std::ofstream csv(root / "aggregate.csv");
        write_aggregate_csv(csv, rows);
    }
    std::cout << "\n" << std::left << std::setw(5) << "gen" << std::setw(5) << "it" << std::setw(6) << "runs"
              << std::setw(20) << "test" << std::setw(20) << "student" << "noise\n";
    for (const AggregateRow& r : rows)
        std::cout << std::left << std::setw(5) << r.generation << std::setw(5) << r.iteration << std::setw(6) << r.runs
                  << std::setw(20) << pct(r.test_err) << std::setw(20) << pct(r.student_test_err) << pct(r.noise_rate)
                  << '\n';
    std::cout << "aggregate: " << (root / "aggregate.csv").string() << '\n';
    return kExitOk;
}

int cmd_ablate_selection(const CommonOptions& o, std::size_t n)
{
    const RunSpec base = resolve(o);
    const std::size_t count = n ? n : base.experiment.discovery_schedule.front();
    const auto root = output_root(o);
    std::filesystem::create_directories(root);
    std::ofstream csv(root / "ablate-selection.csv");
    csv << "seed,method,labels,ground_truth_test_err,sample_error_rate\n";
    std::vector<std::vector<SelectionRow>> all;
    for (std::uint64_t seed : parse_seed_list(o.seeds)) {
        RunSpec spec = base;
        spec.experiment.seed = seed;
        const auto rows = selection_ablation(make_dataset(spec), spec.experiment, count);
        for (const SelectionRow& r : rows)
            csv << seed << ',' << r.method << ',' << r.labels << ',' << r.ground_truth_test_err << ','
                << r.sample_error_rate << '\n';
        all.push_back(rows);
    }
    std::cout << std::left << std::setw(22) << "Number of Labels" << std::setw(28) << "With Ground-truth Label"
              << "Sample Error Rate\n";
    for (std::size_t i = 0; i < all.front().size(); ++i) {
        std::vector<double> gt, noise;
        for (const auto& rows : all) {
            gt.push_back(rows[i].ground_truth_test_err);
            noise.push_back(rows[i].sample_error_rate);
        }
        const SelectionRow& r = all.front()[i];
        const std::string label = r.method == "base" ? std::to_string(r.labels)
                                                     : std::to_string(all.front()[0].labels) + " + " +
                                                           std::to_string(count) + " (" + r.method + ")";
        std::cout << std::left << std::setw(22) << label << std::setw(28) << pct(mean_std(gt))
                  << (r.method == "base" ? std::string("-") : pct(mean_std(noise))) << '\n';
    }
    return kExitOk;
}

int cmd_ablate_fusion(const CommonOptions& o)
{
    const RunSpec base = resolve(o);
    const auto root = output_root(o);
    std::filesystem::create_directories(root);
    std::ofstream csv(root / "ablate-fusion.csv");
    csv << "seed,fusion,test_err,noise_rate\n";
    std::vector<std::vector<FusionRow>> all;
    for (std::uint64_t seed : parse_seed_list(o.seeds)) {
        RunSpec spec = base;
        spec.experiment.seed = seed;
        const auto rows = fusion_ablation(make_dataset(spec), spec.experiment);
        for (const FusionRow& r : rows)
            csv << seed << ',' << to_string(r.fusion) << ',' << r.test_err << ',' << r.noise_rate << '\n';
        all.push_back(rows);
    }
    std::cout << std::left << std::setw(24) << "Fusion method" << std::setw(22) << "Noisy labels ratio"
              << "Test error\n";
    for (std::size_t i = 0; i < all.front().size(); ++i) {
        std::vector<double> noise, test;
        for (const auto& rows : all) {
            noise.push_back(rows[i].noise_rate);
            test.push_back(rows[i].test_err);
        }
        std::cout << std::left << std::setw(24) << to_string(all.front()[i].fusion) << std::setw(22)
                  << pct(mean_std(noise)) << pct(mean_std(test)) << '\n';
    }
    return kExitOk;
}

int cmd_ablate_guidance(const CommonOptions& o)
{
    const RunSpec base = resolve(o);
    const auto root = output_root(o);
    std::filesystem::create_directories(root);
    std::ofstream csv(root / "ablate-guidance.csv");
    csv << "seed,generation,iteration,snowball_test_err,self_learning_test_err,snowball_noise,self_learning_noise\n";
    std::vector<std::vector<GuidanceRow>> all;
    for (std::uint64_t seed : parse_seed_list(o.seeds)) {
        RunSpec spec = base;
        spec.experiment.seed = seed;
        const auto rows = guidance_ablation(make_dataset(spec), spec.experiment);
        for (const GuidanceRow& r : rows)
            csv << seed << ',' << r.generation << ',' << r.iteration << ',' << r.snowball_test_err << ','
                << r.self_learning_test_err << ',' << r.snowball_noise << ',' << r.self_learning_noise << '\n';
        all.push_back(rows);
    }
    std::cout << std::left << std::setw(5) << "gen" << std::setw(5) << "it" << std::setw(22) << "snowball test"
              << std::setw(22) << "self-learning test" << std::setw(22) << "snowball noise" << "self-learning noise\n";
    for (std::size_t i = 0; i < all.front().size(); ++i) {
        std::vector<double> a, b, c, d;
        for (const auto& rows : all) {
            a.push_back(rows[i].snowball_test_err);
            b.push_back(rows[i].self_learning_test_err);
            c.push_back(rows[i].snowball_noise);
            d.push_back(rows[i].self_learning_noise);
        }
        std::cout << std::left << std::setw(5) << all.front()[i].generation << std::setw(5) << all.front()[i].iteration
                  << std::setw(22) << pct(mean_std(a)) << std::setw(22) << pct(mean_std(b)) << std::setw(22)
                  << pct(mean_std(c)) << pct(mean_std(d)) << '\n';
    }
    return kExitOk;
}

int cmd_report(const std::string& path, bool csv)
{
    const Manifest m = load_manifest(path);
    if (csv) {
        write_rows_csv(std::cout, m.rows);
        return kExitOk;
    }
    std::cout << "Run manifest " << path << "\n\nConfiguration\n";
    for (const auto& [key, value] : settings(m.spec)) std::cout << "  " << std::left << std::setw(24) << key << value << '\n';
    std::cout << "\nPer-iteration metrics\n";
    print_rows(std::cout, m.rows);
    if (!m.checkpoints.empty()) {
        std::cout << "\nCheckpoints\n";
        for (const auto& [name, p] : m.checkpoints) std::cout << "  " << name << ": " << p << '\n';
    }
    return kExitOk;
}

} // namespace

int cli_run(int argc, char** argv)
{
    CLI::App app{"Snowball semi-supervised learning engine"};
    app.require_subcommand(1);

    CommonOptions train_opts, sweep_opts, sel_opts, fusion_opts, guidance_opts;
    auto* train = app.add_subcommand("train", "Run one experiment");
    add_common(train, train_opts, false);
    auto* sweep = app.add_subcommand("sweep", "Repeat an experiment over seeds and aggregate");
    add_common(sweep, sweep_opts, true);
    auto* selection = app.add_subcommand("ablate-selection", "Compare min / random / max sample selection");
    add_common(selection, sel_opts, true);
    std::size_t selection_n = 0;
    selection->add_option("--n", selection_n, "Samples to discover (default: first schedule entry)");
    auto* fusion = app.add_subcommand("ablate-fusion", "Compare multi-master distance fusion methods");
    add_common(fusion, fusion_opts, true);
    auto* guidance = app.add_subcommand("ablate-guidance", "Snowball versus unguided self-learning");
    add_common(guidance, guidance_opts, true);
    auto* report = app.add_subcommand("report", "Render a run manifest");
    std::string manifest_path;
    bool report_csv = false;
    report->add_option("manifest", manifest_path, "manifest.txt of a run")->required();
    report->add_flag("--csv", report_csv, "Emit the per-iteration rows as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) return cmd_train(train_opts);
        if (*sweep) return cmd_sweep(sweep_opts);
        if (*selection) return cmd_ablate_selection(sel_opts, selection_n);
        if (*fusion) return cmd_ablate_fusion(fusion_opts);
        if (*guidance) return cmd_ablate_guidance(guidance_opts);
        if (*report) return cmd_report(manifest_path, report_csv);
    } catch (const TrainingError& e) {
        std::cerr << "error: training diverged: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical failure: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

} // namespace snowball
