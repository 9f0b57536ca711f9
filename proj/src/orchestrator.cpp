#include "snowball/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <unordered_set>

#include "snowball/errors.hpp"
#include "snowball/rng.hpp"

namespace snowball {

std::string to_string(Algorithm algorithm)
{
    switch (algorithm) {
    case Algorithm::snowball: return "snowball";
    case Algorithm::mean_teacher: return "mean-teacher";
    case Algorithm::self_learning: return "self-learning";
    case Algorithm::supervised: return "supervised";
    }
    return "?";
}

Algorithm parse_algorithm(const std::string& text)
{
    if (text == "snowball") return Algorithm::snowball;
    if (text == "mean-teacher" || text == "mean_teacher") return Algorithm::mean_teacher;
    if (text == "self-learning" || text == "self_learning") return Algorithm::self_learning;
    if (text == "supervised") return Algorithm::supervised;
    throw ConfigError("unknown algorithm '" + text + "' (expected snowball, mean-teacher, self-learning or supervised)");
}

void ExperimentConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(generations >= 1, "generations must be >= 1");
    require(iterations >= 1, "iterations must be >= 1");
    require(discovery_schedule.size() >= static_cast<std::size_t>(iterations),
            "discovery_schedule needs at least one entry per iteration");
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
    require(beta >= 0.0 && beta <= 1.0, "beta must be in [0, 1]");
    require(lambda1 >= 0.0 && lambda2_max >= 0.0, "lambda1 and lambda2_max must be >= 0");
    require(steps_per_iteration >= 1, "steps_per_iteration must be >= 1");
    require(batch_labeled >= 1, "batch_labeled must be >= 1");
    require(learning_rate > 0.0, "learning_rate must be > 0");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(augment_sigma >= 0.0, "augment_sigma must be >= 0");
    require(ema_every >= 1, "ema_every must be >= 1");
    require(master_weight >= 0.0, "master_weight must be >= 0");
    require(master_extra_fraction >= 0.0, "master_extra_fraction must be >= 0");
    for (std::size_t h : hidden) require(h >= 1, "hidden layer widths must be >= 1");
}

std::vector<std::size_t> doubling_schedule(std::size_t first, int iterations)
{
    std::vector<std::size_t> out;
    std::size_t n = first;
    for (int k = 0; k < iterations; ++k, n *= 2) out.push_back(n);
    return out;
}

// --- TrainingSet --------------------------------------------------------

TrainingSet::TrainingSet(std::span<const Sample> original) : original_count_(original.size())
{
    for (const Sample& s : original) {
        if (!s.label) throw OrchestrationError("original training sample " + std::to_string(s.id) + " has no label");
        entries_.push_back({s, Provenance::original, 0, 0});
        samples_.push_back(s);
    }
}

bool TrainingSet::contains(SampleId id) const
{
    return std::any_of(samples_.begin(), samples_.end(), [id](const Sample& s) { return s.id == id; });
}

void TrainingSet::add_discovered(std::span<const Sample> samples, std::span<const ClassId> labels, int generation,
                                 int iteration)
{
    if (samples.size() != labels.size()) throw OrchestrationError("add_discovered: samples and labels differ in length");
    std::unordered_set<SampleId> present;
    for (const Sample& s : samples_) present.insert(s.id);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Sample s = samples[i];
        if (!present.insert(s.id).second)
            throw OrchestrationError("sample " + std::to_string(s.id) + " discovered twice in one generation");
        s.label = labels[i];
        entries_.push_back({s, Provenance::discovered, generation, iteration});
        samples_.push_back(std::move(s));
    }
}

void TrainingSet::reset()
{
    entries_.resize(original_count_);
    samples_.resize(original_count_);
}

// --- master -------------------------------------------------------------

std::vector<std::size_t> augmented_discovery(const DiscoveryReport& report, double extra_fraction)
{
    if (!(extra_fraction >= 0.0)) throw ConfigError("augmented_discovery: fraction must be >= 0");
    const std::size_t selected = report.selected_count();
    const auto extra = static_cast<std::size_t>(std::ceil(extra_fraction * static_cast<double>(selected)));
    const std::size_t take = std::min(selected + extra, report.selection_order.size());
    return {report.selection_order.begin(), report.selection_order.begin() + static_cast<std::ptrdiff_t>(take)};
}

ModelParams build_master(const ModelParams& teacher, std::span<const Sample> training_set,
                         const DiscoveryReport& report, std::span<const Sample> pool, const ExperimentConfig& config,
                         const ModelParams* previous_master, std::uint64_t seed)
{
    if (report.entries.empty() || report.selected_count() == 0)
        throw OrchestrationError("build_master: discovery report has no selected samples");

    std::vector<Sample> refine_set(training_set.begin(), training_set.end());
    for (std::size_t idx : augmented_discovery(report, config.master_extra_fraction)) {
        const DiscoveryEntry& e = report.entries[idx];
        Sample s = pool[e.pool_index];
        s.label = e.assigned_label;
        refine_set.push_back(std::move(s));
    }

    ModelParams refined = teacher;
    EmaState master{config.beta, previous_master ? *previous_master : teacher, 0};
    require_same_shape(master.averaged, refined, "build_master");

    CyclingSampler sampler(refine_set.size(), derive_seed(seed, 1));
    std::mt19937_64 perturb(derive_seed(seed, 2));
    MomentumState momentum{config.momentum, {}};
    LossSpec spec{{{1.0, Divergence::cross_entropy}}};
    const std::size_t batch_size = config.batch_labeled + config.batch_unlabeled;
    std::vector<Example> batch(batch_size);
    for (std::size_t step = 0; step < config.refine_steps(); ++step) {
        for (Example& ex : batch) {
            const Sample& s = refine_set[sampler.next()];
            ex.x = augment(s.x, config.augment_sigma, perturb);
            Vector target(refined.class_count(), 0.0);
            target[static_cast<std::size_t>(*s.label)] = 1.0;
            ex.targets = {std::move(target)};
        }
        GradResult g;
        try {
            g = grad(refined, batch, spec);
        } catch (const NumericalError& e) {
            throw TrainingError(std::string("numerical failure while refining the master: ") + e.what(), step);
        }
        if (!std::isfinite(g.loss)) throw TrainingError("non-finite loss while refining the master", step);
        sgd_step(refined, g.gradient, config.learning_rate, momentum, config.weight_decay);
        ema_update(master, refined);
    }
    return std::move(master.averaged);
}

// --- runs ---------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

enum class Mode { snowball, self_learning };

std::uint64_t stream(std::uint64_t seed, std::uint64_t base, int m, int k)
{
    return derive_seed(seed, base + static_cast<std::uint64_t>(m) * 1000u + static_cast<std::uint64_t>(k));
}

TrainConfig train_config(const ExperimentConfig& c, std::size_t steps, std::size_t step_offset, std::uint64_t seed)
{
    TrainConfig t;
    t.steps = steps;
    t.batch_labeled = c.batch_labeled;
    t.batch_unlabeled = c.batch_unlabeled;
    t.learning_rate = c.learning_rate;
    t.momentum = c.momentum;
    t.weight_decay = c.weight_decay;
    t.lambda1 = c.lambda1;
    t.lambda2_max = c.lambda2_max;
    t.ramp_len = c.ramp_len;
    t.ema_decay = c.alpha;
    t.ema_every = c.ema_every;
    t.augment_sigma = c.augment_sigma;
    t.consistency = c.consistency;
    t.master_weight = c.master_weight;
    t.step_offset = step_offset;
    t.eval_every = c.eval_every;
    t.seed = seed;
    return t;
}

void check_data(const DatasetSplit& data)
{
    if (data.labeled.empty()) throw OrchestrationError("labeled set is empty");
    if (data.class_count == 0) throw OrchestrationError("dataset has no classes");
    std::vector<std::size_t> per_class(data.class_count, 0);
    for (const Sample& s : data.labeled) {
        if (!s.label || *s.label < 0 || static_cast<std::size_t>(*s.label) >= data.class_count)
            throw OrchestrationError("labeled sample " + std::to_string(s.id) + " has an invalid label");
        ++per_class[static_cast<std::size_t>(*s.label)];
    }
    if (std::adjacent_find(per_class.begin(), per_class.end(), std::not_equal_to<>()) != per_class.end())
        throw OrchestrationError("labeled set is not class-balanced");
}

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

RunRecord single_pass(const DatasetSplit& data, const ExperimentConfig& config, bool use_student)
{
    config.validate();
    check_data(data);
    const auto start = Clock::now();
    RunRecord record;
    record.config = config;
    const std::size_t steps =
        static_cast<std::size_t>(config.generations) * static_cast<std::size_t>(config.iterations) * config.steps_per_iteration;
    const ModelParams init = initial_model(config, data.input_dim, data.class_count);
    IterationResult res = train_iteration(init, data.labeled, data.unlabeled, nullptr,
                                          train_config(config, steps, 0, stream(config.seed, 10000, 1, 1)), data.test);

    const ModelParams& eval = use_student ? res.student : res.teacher;
    IterationRow row;
    row.train_err = error_rate(eval, data.labeled);
    row.test_err = error_rate(eval, data.test);
    row.student_test_err = error_rate(res.student, data.test);
    row.master_test_err = row.test_err;
    row.labeled_set_size = data.labeled.size();
    row.wall_time = seconds_since(start);
    record.rows.push_back(row);
    record.snapshots.push_back({1, 1, res.student, res.teacher, std::nullopt});
    record.steps = std::move(res.steps);
    record.final_student = std::move(res.student);
    record.final_teacher = std::move(res.teacher);
    return record;
}

RunRecord discovery_loop(const DatasetSplit& data, const ExperimentConfig& config, Mode mode)
{
    config.validate();
    check_data(data);
    const auto start = Clock::now();
    const bool guided = mode == Mode::snowball;

    ExperimentConfig effective = config;
    if (!guided) effective.lambda2_max = 0.0;

    RunRecord record;
    record.config = config;
    ModelParams student = initial_model(config, data.input_dim, data.class_count);
    ModelParams teacher = student;
    std::optional<ModelParams> master;
    std::deque<ModelParams> recent_masters; // newest last, at most 3
    std::size_t global_step = 0;

    TrainingSet training(data.labeled);
    for (int m = 1; m <= config.generations; ++m) {
        training.reset();
        std::vector<Sample> pool = data.unlabeled;

        for (int k = 1; k <= config.iterations; ++k) {
            try {
                const ModelParams* guide = guided && master ? &*master : nullptr;
                IterationResult res = train_iteration(
                    student, training.samples(), pool, guide,
                    train_config(effective, config.steps_per_iteration, global_step, stream(config.seed, 10000, m, k)),
                    data.test);
                global_step += config.steps_per_iteration;
                student = std::move(res.student);
                teacher = std::move(res.teacher);
                record.steps.insert(record.steps.end(), res.steps.begin(), res.steps.end());

                IterationRow row;
                row.generation = m;
                row.iteration = k;

                const std::size_t n = config.discovery_schedule[static_cast<std::size_t>(k - 1)];
                if (n > 0 && !pool.empty()) {
                    DiscoveryReport report;
                    if (!guided) {
                        report = assign_pseudo_labels(student, pool, training.samples());
                    } else if (config.fusion == Fusion::single || recent_masters.empty()) {
                        report = assign_pseudo_labels(master ? *master : teacher, pool, training.samples());
                    } else {
                        const std::vector<ModelParams> models(recent_masters.begin(), recent_masters.end());
                        const Fusion fusion = models.size() == 1 ? Fusion::single : config.fusion;
                        report = fuse_distances(models, pool, training.samples(), fusion);
                    }
                    const std::uint64_t select_seed = stream(config.seed, 20000, m, k);
                    if (config.balance_classes)
                        select_samples_balanced(report, n, config.strategy, data.class_count, select_seed);
                    else
                        select_samples(report, n, config.strategy, select_seed);
                    row.noise_rate = noise_rate(report, pool);

                    if (guided) {
                        master = build_master(teacher, training.samples(), report, pool, config, master ? &*master : nullptr,
                                              stream(config.seed, 30000, m, k));
                        recent_masters.push_back(*master);
                        if (recent_masters.size() > 3) recent_masters.pop_front();
                    }

                    std::vector<Sample> found;
                    std::vector<ClassId> labels;
                    std::vector<bool> taken(pool.size(), false);
                    for (std::size_t idx : report.selected_indices()) {
                        const DiscoveryEntry& e = report.entries[idx];
                        found.push_back(pool[e.pool_index]);
                        labels.push_back(e.assigned_label);
                        taken[e.pool_index] = true;
                    }
                    training.add_discovered(found, labels, m, k);
                    std::vector<Sample> remaining;
                    remaining.reserve(pool.size() - found.size());
                    for (std::size_t i = 0; i < pool.size(); ++i)
                        if (!taken[i]) remaining.push_back(std::move(pool[i]));
                    pool = std::move(remaining);
                    row.discovered = found.size();
                }

                const ModelParams& eval = guided ? teacher : student;
                row.train_err = error_rate(eval, data.labeled);
                row.test_err = error_rate(eval, data.test);
                row.student_test_err = error_rate(student, data.test);
                row.master_test_err = master ? error_rate(*master, data.test) : row.test_err;
                row.labeled_set_size = training.size();
                row.wall_time = seconds_since(start);
                record.rows.push_back(row);
                record.snapshots.push_back({m, k, student, teacher, master});
            } catch (const TrainingError& e) {
                throw e.located(m, k);
            } catch (const NumericalError& e) {
                throw TrainingError(std::string("numerical failure: ") + e.what(), global_step, m, k);
            }
        }
    }
    record.final_student = std::move(student);
    record.final_teacher = std::move(teacher);
    record.final_master = std::move(master);
    return record;
}

} // namespace

ModelParams initial_model(const ExperimentConfig& config, std::size_t input_dim, std::size_t class_count)
{
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
    dims.push_back(class_count);
    return ModelParams::glorot(std::move(dims), config.activation, derive_seed(config.seed, 7));
}

RunRecord snowball_run(const DatasetSplit& data, const ExperimentConfig& config)
{
    return discovery_loop(data, config, Mode::snowball);
}

RunRecord self_learning_run(const DatasetSplit& data, const ExperimentConfig& config)
{
    return discovery_loop(data, config, Mode::self_learning);
}

RunRecord mean_teacher_run(const DatasetSplit& data, const ExperimentConfig& config)
{
    return single_pass(data, config, false);
}

RunRecord supervised_run(const DatasetSplit& data, const ExperimentConfig& config)
{
    ExperimentConfig c = config;
    c.lambda2_max = 0.0;
    RunRecord record = single_pass(data, c, true);
    record.config = config;
    return record;
}

RunRecord run_experiment(const DatasetSplit& data, const ExperimentConfig& config)
{
    switch (config.algorithm) {
    case Algorithm::snowball: return snowball_run(data, config);
    case Algorithm::mean_teacher: return mean_teacher_run(data, config);
    case Algorithm::self_learning: return self_learning_run(data, config);
    case Algorithm::supervised: return supervised_run(data, config);
    }
    throw ConfigError("unknown algorithm");
}

} // namespace snowball
