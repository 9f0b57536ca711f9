#include "snowball/harness.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "snowball/errors.hpp"
#include "snowball/rng.hpp"

namespace snowball {

std::string to_string(DatasetKind kind)
{
    switch (kind) {
    case DatasetKind::two_moons: return "two-moons";
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::rings: return "rings";
    case DatasetKind::csv: return "csv";
    }
    return "?";
}

DatasetKind parse_dataset_kind(const std::string& text)
{
    if (text == "two-moons" || text == "two_moons" || text == "moons") return DatasetKind::two_moons;
    if (text == "blobs") return DatasetKind::blobs;
    if (text == "rings") return DatasetKind::rings;
    if (text == "csv") return DatasetKind::csv;
    throw ConfigError("unknown dataset '" + text + "' (expected two-moons, blobs, rings or csv)");
}

namespace {

std::string format_double(double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text)
{
    T value{};
    const std::string t = trim(text);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size())
        throw ConfigError("setting '" + key + "': cannot parse '" + text + "'");
    return value;
}

double parse_real(const std::string& key, const std::string& text)
{
    const double v = parse_number<double>(key, text);
    if (!std::isfinite(v)) throw ConfigError("setting '" + key + "': value must be finite");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text)
{
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError("setting '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text)
{
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        if (trim(item).empty()) continue;
        out.push_back(parse_number<std::size_t>(key, item));
    }
    return out;
}

std::string join(const std::vector<std::size_t>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(values[i]);
    }
    return out;
}

std::string to_string(Divergence d) { return d == Divergence::cross_entropy ? "cross_entropy" : "squared_error"; }

Divergence parse_divergence(const std::string& text)
{
    if (text == "cross_entropy") return Divergence::cross_entropy;
    if (text == "squared_error" || text == "mse") return Divergence::squared_error;
    throw ConfigError("unknown consistency divergence '" + text + "' (expected cross_entropy or squared_error)");
}

struct Field {
    const char* key;
    std::function<std::string(const RunSpec&)> get;
    std::function<void(RunSpec&, const std::string&)> set;
};

#define SB_SIZE(name, expr)                                                                                       \
    Field { name, [](const RunSpec& s) { return std::to_string(s.expr); },                                       \
            [](RunSpec& s, const std::string& v) { s.expr = parse_number<std::size_t>(name, v); } }
#define SB_REAL(name, expr)                                                                                       \
    Field { name, [](const RunSpec& s) { return format_double(s.expr); },                                        \
            [](RunSpec& s, const std::string& v) { s.expr = parse_real(name, v); } }

const std::vector<Field>& schema()
{
    static const std::vector<Field> fields = {
        {"algorithm", [](const RunSpec& s) { return to_string(s.experiment.algorithm); },
         [](RunSpec& s, const std::string& v) { s.experiment.algorithm = parse_algorithm(v); }},
        {"seed", [](const RunSpec& s) { return std::to_string(s.experiment.seed); },
         [](RunSpec& s, const std::string& v) { s.experiment.seed = parse_number<std::uint64_t>("seed", v); }},
        {"dataset", [](const RunSpec& s) { return to_string(s.data.kind); },
         [](RunSpec& s, const std::string& v) { s.data.kind = parse_dataset_kind(v); }},
        SB_SIZE("n", data.n),
        SB_REAL("noise", data.noise),
        SB_SIZE("classes", data.classes),
        SB_SIZE("n_per_class", data.n_per_class),
        SB_REAL("separation", data.separation),
        SB_SIZE("dim", data.dim),
        {"csv_path", [](const RunSpec& s) { return s.data.csv_path; },
         [](RunSpec& s, const std::string& v) { s.data.csv_path = v; }},
        SB_SIZE("csv_classes", data.csv_classes),
        SB_SIZE("labels_per_class", data.labels_per_class),
        SB_REAL("test_fraction", data.test_fraction),
        SB_SIZE("test_size", data.test_size),
        {"hidden", [](const RunSpec& s) { return join(s.experiment.hidden); },
         [](RunSpec& s, const std::string& v) { s.experiment.hidden = parse_size_list("hidden", v); }},
        {"activation", [](const RunSpec& s) { return to_string(s.experiment.activation); },
         [](RunSpec& s, const std::string& v) { s.experiment.activation = parse_activation(v); }},
        {"generations", [](const RunSpec& s) { return std::to_string(s.experiment.generations); },
         [](RunSpec& s, const std::string& v) { s.experiment.generations = parse_number<int>("generations", v); }},
        {"iterations", [](const RunSpec& s) { return std::to_string(s.experiment.iterations); },
         [](RunSpec& s, const std::string& v) { s.experiment.iterations = parse_number<int>("iterations", v); }},
        {"discovery_schedule", [](const RunSpec& s) { return join(s.experiment.discovery_schedule); },
         [](RunSpec& s, const std::string& v) {
             s.experiment.discovery_schedule = parse_size_list("discovery_schedule", v);
         }},
        SB_REAL("alpha", experiment.alpha),
        SB_REAL("beta", experiment.beta),
        SB_REAL("lambda1", experiment.lambda1),
        SB_REAL("lambda2_max", experiment.lambda2_max),
        SB_SIZE("ramp_len", experiment.ramp_len),
        SB_SIZE("steps_per_iteration", experiment.steps_per_iteration),
        SB_SIZE("batch_labeled", experiment.batch_labeled),
        SB_SIZE("batch_unlabeled", experiment.batch_unlabeled),
        SB_REAL("learning_rate", experiment.learning_rate),
        SB_REAL("momentum", experiment.momentum),
        SB_REAL("weight_decay", experiment.weight_decay),
        SB_REAL("augment_sigma", experiment.augment_sigma),
        SB_SIZE("ema_every", experiment.ema_every),
        {"consistency", [](const RunSpec& s) { return to_string(s.experiment.consistency); },
         [](RunSpec& s, const std::string& v) { s.experiment.consistency = parse_divergence(v); }},
        SB_REAL("master_weight", experiment.master_weight),
        SB_REAL("master_extra_fraction", experiment.master_extra_fraction),
        SB_SIZE("master_refine_steps", experiment.master_refine_steps),
        {"strategy", [](const RunSpec& s) { return to_string(s.experiment.strategy); },
         [](RunSpec& s, const std::string& v) { s.experiment.strategy = parse_selection_strategy(v); }},
        {"fusion", [](const RunSpec& s) { return to_string(s.experiment.fusion); },
         [](RunSpec& s, const std::string& v) { s.experiment.fusion = parse_fusion(v); }},
        {"balance_classes", [](const RunSpec& s) { return std::string(s.experiment.balance_classes ? "true" : "false"); },
         [](RunSpec& s, const std::string& v) { s.experiment.balance_classes = parse_bool("balance_classes", v); }},
        SB_SIZE("eval_every", experiment.eval_every),
    };
    return fields;
}

#undef SB_SIZE
#undef SB_REAL

} // namespace

void apply_setting(RunSpec& spec, const std::string& key, const std::string& value)
{
    const std::string k = trim(key);
    for (const Field& f : schema()) {
        if (k == f.key) {
            f.set(spec, trim(value));
            return;
        }
    }
    throw ConfigError("unknown setting '" + k + "'");
}

std::vector<std::pair<std::string, std::string>> settings(const RunSpec& spec)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const Field& f : schema()) out.emplace_back(f.key, f.get(spec));
    return out;
}

RunSpec parse_config(std::istream& in, RunSpec base)
{
    std::string line;
    std::size_t line_no = 0;
    std::string section; // empty for plain config files
    bool sectioned = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line.substr(0, line.find('#')));
        if (t.empty()) continue;
        if (t.front() == '[') {
            sectioned = true;
            section = t;
            continue;
        }
        if (sectioned && section != "[config]") continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        try {
            apply_setting(base, t.substr(0, eq), t.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

RunSpec load_config(const std::filesystem::path& path, RunSpec base)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    return parse_config(in, std::move(base));
}

void write_config(std::ostream& out, const RunSpec& spec)
{
    for (const auto& [key, value] : settings(spec)) out << key << " = " << value << '\n';
}

DatasetSplit make_dataset(const RunSpec& spec)
{
    const DataConfig& d = spec.data;
    const std::uint64_t seed = spec.experiment.seed;
    RawDataset raw;
    switch (d.kind) {
    case DatasetKind::two_moons: raw = gen_two_moons(d.n, d.noise, derive_seed(seed, 100)); break;
    case DatasetKind::blobs:
        raw = gen_gaussian_blobs(d.classes, d.n_per_class, d.noise, d.separation, derive_seed(seed, 100), d.dim);
        break;
    case DatasetKind::rings: raw = gen_rings(d.classes, d.n_per_class, d.noise, derive_seed(seed, 100)); break;
    case DatasetKind::csv:
        if (d.csv_path.empty()) throw ConfigError("dataset csv needs csv_path");
        raw = load_csv(d.csv_path, d.csv_classes ? std::optional<std::size_t>(d.csv_classes) : std::nullopt);
        break;
    }
    SplitOptions options;
    options.labels_per_class = d.labels_per_class;
    options.test_fraction = d.test_fraction;
    if (d.test_size > 0) options.test_size = d.test_size;
    options.seed = derive_seed(seed, 101);
    return split(raw, options);
}

// --- rows and manifests ---------------------------------------------------

void write_rows_csv(std::ostream& out, std::span<const IterationRow> rows)
{
    out << kRowsHeader << '\n';
    for (const IterationRow& r : rows) {
        out << r.generation << ',' << r.iteration << ',' << format_double(r.train_err) << ','
            << format_double(r.test_err) << ',' << format_double(r.student_test_err) << ','
            << format_double(r.master_test_err) << ',' << format_double(r.noise_rate) << ',' << r.discovered << ','
            << r.labeled_set_size << ',' << format_double(r.wall_time) << '\n';
    }
}

namespace {

IterationRow parse_row(const std::string& line, std::size_t line_no)
{
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
    if (f.size() != 10) throw ParseError("expected 10 columns in metrics row", line_no);
    IterationRow r;
    try {
        r.generation = parse_number<int>("generation", f[0]);
        r.iteration = parse_number<int>("iteration", f[1]);
        r.train_err = parse_number<double>("train_err", f[2]);
        r.test_err = parse_number<double>("test_err", f[3]);
        r.student_test_err = parse_number<double>("student_test_err", f[4]);
        r.master_test_err = parse_number<double>("master_test_err", f[5]);
        r.noise_rate = parse_number<double>("noise_rate", f[6]);
        r.discovered = parse_number<std::size_t>("discovered", f[7]);
        r.labeled_set_size = parse_number<std::size_t>("labeled_set_size", f[8]);
        r.wall_time = parse_number<double>("wall_time", f[9]);
    } catch (const ConfigError& e) {
        throw ParseError(e.what(), line_no);
    }
    return r;
}

} // namespace

std::vector<IterationRow> read_rows_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || trim(line) != kRowsHeader) throw ParseError("unexpected metrics header", 1);
    std::vector<IterationRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        rows.push_back(parse_row(trim(line), line_no));
    }
    return rows;
}

void write_manifest(std::ostream& out, const Manifest& manifest)
{
    out << kManifestMagic << '\n';
    out << "[config]\n";
    write_config(out, manifest.spec);
    out << "[rows]\n";
    write_rows_csv(out, manifest.rows);
    out << "[checkpoints]\n";
    for (const auto& [name, path] : manifest.checkpoints) out << name << " = " << path << '\n';
}

void write_manifest(std::ostream& out, const RunSpec& spec, const RunRecord& record)
{
    Manifest m;
    m.spec = spec;
    m.rows = record.rows;
    const char* names[] = {"final_student", "final_teacher", "final_master"};
    for (std::size_t i = 0; i < record.checkpoint_paths.size() && i < 3; ++i)
        m.checkpoints.emplace_back(names[i], record.checkpoint_paths[i]);
    write_manifest(out, m);
}

Manifest read_manifest(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || trim(line) != kManifestMagic) throw ParseError("not a snowball run manifest", 1);
    Manifest m;
    std::string section;
    std::size_t line_no = 1;
    std::stringstream config_text;
    bool rows_header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            section = t;
            continue;
        }
        if (section == "[config]") {
            config_text << t << '\n';
        } else if (section == "[rows]") {
            if (!rows_header_seen) {
                if (t != kRowsHeader) throw ParseError("unexpected metrics header", line_no);
                rows_header_seen = true;
                continue;
            }
            m.rows.push_back(parse_row(t, line_no));
        } else if (section == "[checkpoints]") {
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw ParseError("expected name = path", line_no);
            m.checkpoints.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } else {
            throw ParseError("content outside a known section", line_no);
        }
    }
    m.spec = parse_config(config_text);
    return m;
}

Manifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read manifest " + path.string());
    return read_manifest(in);
}

bool same_metrics(const IterationRow& a, const IterationRow& b)
{
    auto same = [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); };
    return a.generation == b.generation && a.iteration == b.iteration && same(a.train_err, b.train_err) &&
           same(a.test_err, b.test_err) && same(a.student_test_err, b.student_test_err) &&
           same(a.master_test_err, b.master_test_err) && same(a.noise_rate, b.noise_rate) &&
           a.discovered == b.discovered && a.labeled_set_size == b.labeled_set_size;
}

// --- aggregation ------------------------------------------------------------

MeanStd mean_std(std::span<const double> values)
{
    MeanStd out;
    if (values.empty()) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

std::vector<AggregateRow> aggregate(std::span<const RunRecord> records)
{
    if (records.empty()) throw AggregationError("aggregate: no records");
    const RunRecord& first = records.front();
    ExperimentConfig reference = first.config;
    reference.seed = 0;
    for (const RunRecord& r : records) {
        ExperimentConfig c = r.config;
        c.seed = 0;
        if (!(c == reference)) throw AggregationError("aggregate: records come from different configurations");
        if (r.rows.size() != first.rows.size()) throw AggregationError("aggregate: records have different (m,k) grids");
        for (std::size_t i = 0; i < r.rows.size(); ++i)
            if (r.rows[i].generation != first.rows[i].generation || r.rows[i].iteration != first.rows[i].iteration)
                throw AggregationError("aggregate: records have different (m,k) grids");
    }

    std::vector<AggregateRow> out;
    for (std::size_t i = 0; i < first.rows.size(); ++i) {
        std::vector<double> train, test, student, noise, size;
        for (const RunRecord& r : records) {
            train.push_back(r.rows[i].train_err);
            test.push_back(r.rows[i].test_err);
            student.push_back(r.rows[i].student_test_err);
            noise.push_back(r.rows[i].noise_rate);
            size.push_back(static_cast<double>(r.rows[i].labeled_set_size));
        }
        AggregateRow row;
        row.generation = first.rows[i].generation;
        row.iteration = first.rows[i].iteration;
        row.runs = records.size();
        row.train_err = mean_std(train);
        row.test_err = mean_std(test);
        row.student_test_err = mean_std(student);
        row.noise_rate = mean_std(noise);
        row.labeled_set_size = mean_std(size);
        out.push_back(row);
    }
    return out;
}

void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows)
{
    out << "generation,iteration,runs,train_err_mean,train_err_std,test_err_mean,test_err_std,"
           "student_test_err_mean,student_test_err_std,noise_rate_mean,noise_rate_std,labeled_set_size_mean,"
           "labeled_set_size_std\n";
    for (const AggregateRow& r : rows) {
        out << r.generation << ',' << r.iteration << ',' << r.runs;
        for (const MeanStd& m : {r.train_err, r.test_err, r.student_test_err, r.noise_rate, r.labeled_set_size})
            out << ',' << format_double(m.mean) << ',' << format_double(m.std);
        out << '\n';
    }
}

// --- runs -------------------------------------------------------------------

RunRecord execute_run(const RunSpec& spec, const std::filesystem::path& dir)
{
    const DatasetSplit data = make_dataset(spec);
    RunRecord record = run_experiment(data, spec.experiment);

    std::filesystem::create_directories(dir);
    const auto student_path = dir / "final_student.ckpt";
    const auto teacher_path = dir / "final_teacher.ckpt";
    save_checkpoint(student_path, record.final_student);
    save_checkpoint(teacher_path, record.final_teacher);
    record.checkpoint_paths = {student_path.string(), teacher_path.string()};
    if (record.final_master) {
        const auto master_path = dir / "final_master.ckpt";
        save_checkpoint(master_path, *record.final_master);
        record.checkpoint_paths.push_back(master_path.string());
    }
    {
        std::ofstream steps(dir / "steps.csv");
        write_step_metrics_csv(steps, record.steps);
    }
    {
        std::ofstream rows(dir / "rows.csv");
        write_rows_csv(rows, record.rows);
    }
    std::ofstream manifest(dir / "manifest.txt");
    write_manifest(manifest, spec, record);
    if (!manifest) throw ConfigError("failed to write manifest in " + dir.string());
    return record;
}

std::vector<SelectionRow> selection_ablation(const DatasetSplit& data, const ExperimentConfig& config, std::size_t n)
{
    if (n == 0) throw ConfigError("selection_ablation: n must be positive");
    ExperimentConfig base_config = config;
    base_config.generations = 1;
    base_config.iterations = 1;
    base_config.discovery_schedule = {n};
    const RunRecord base = mean_teacher_run(data, base_config);

    std::vector<SelectionRow> rows;
    rows.push_back({"base", data.labeled.size(), base.final_row().test_err, 0.0});

    const DiscoveryReport unselected = assign_pseudo_labels(base.final_teacher, data.unlabeled, data.labeled);
    for (SelectionStrategy strategy : {SelectionStrategy::min, SelectionStrategy::random, SelectionStrategy::max}) {
        DiscoveryReport report = unselected;
        select_samples(report, n, strategy, derive_seed(config.seed, 40000));
        const double noise = noise_rate(report, data.unlabeled);

        // Retrain from scratch with the true labels of the selected samples.
        std::vector<Sample> labeled = data.labeled;
        std::vector<Sample> pool;
        for (const DiscoveryEntry& e : report.entries) {
            Sample s = data.unlabeled[e.pool_index];
            if (e.selected) {
                s.label = s.true_label;
                labeled.push_back(std::move(s));
            } else {
                pool.push_back(std::move(s));
            }
        }
        TrainConfig t;
        t.steps = base_config.steps_per_iteration;
        t.batch_labeled = config.batch_labeled;
        t.batch_unlabeled = config.batch_unlabeled;
        t.learning_rate = config.learning_rate;
        t.momentum = config.momentum;
        t.weight_decay = config.weight_decay;
        t.lambda1 = config.lambda1;
        t.lambda2_max = config.lambda2_max;
        t.ramp_len = config.ramp_len;
        t.ema_decay = config.alpha;
        t.ema_every = config.ema_every;
        t.augment_sigma = config.augment_sigma;
        t.consistency = config.consistency;
        t.seed = derive_seed(config.seed, 40001);
        const IterationResult res =
            train_iteration(initial_model(config, data.input_dim, data.class_count), labeled, pool, nullptr, t);
        rows.push_back({to_string(strategy), labeled.size(), error_rate(res.teacher, data.test), noise});
    }
    return rows;
}

std::vector<FusionRow> fusion_ablation(const DatasetSplit& data, const ExperimentConfig& config)
{
    std::vector<FusionRow> rows;
    for (Fusion fusion : {Fusion::single, Fusion::average_distance, Fusion::feature_cascade, Fusion::average_sorting_score}) {
        ExperimentConfig c = config;
        c.algorithm = Algorithm::snowball;
        c.fusion = fusion;
        const RunRecord record = snowball_run(data, c);
        double noise = 0.0;
        std::size_t counted = 0;
        for (const IterationRow& r : record.rows) {
            if (r.discovered == 0) continue;
            noise += r.noise_rate;
            ++counted;
        }
        rows.push_back({fusion, record.final_row().test_err, counted ? noise / static_cast<double>(counted) : 0.0});
    }
    return rows;
}

std::vector<GuidanceRow> guidance_ablation(const DatasetSplit& data, const ExperimentConfig& config)
{
    const RunRecord snow = snowball_run(data, config);
    const RunRecord self = self_learning_run(data, config);
    std::vector<GuidanceRow> rows;
    for (std::size_t i = 0; i < snow.rows.size(); ++i) {
        const IterationRow& a = snow.rows[i];
        const IterationRow& b = self.rows[i];
        rows.push_back({a.generation, a.iteration, a.test_err, b.test_err, a.noise_rate, b.noise_rate});
    }
    return rows;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text)
{
    const std::string t = trim(text);
    std::vector<std::uint64_t> seeds;
    if (const auto dots = t.find(".."); dots != std::string::npos) {
        const auto lo = parse_number<std::uint64_t>("seeds", t.substr(0, dots));
        const auto hi = parse_number<std::uint64_t>("seeds", t.substr(dots + 2));
        if (hi < lo) throw ConfigError("seeds: empty range '" + text + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::stringstream ss(t);
    for (std::string item; std::getline(ss, item, ',');)
        if (!trim(item).empty()) seeds.push_back(parse_number<std::uint64_t>("seeds", item));
    if (seeds.empty()) throw ConfigError("seeds: no seeds given");
    return seeds;
}

std::filesystem::path default_output_root()
{
    if (const char* env = std::getenv("SNOWBALL_OUTPUT_DIR"); env && *env) return env;
    return "runs";
}

} // namespace snowball
