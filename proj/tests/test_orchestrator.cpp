#include <cmath>
#include <set>

#include "doctest.h"
#include "snowball/errors.hpp"
#include "snowball/harness.hpp"
#include "snowball/orchestrator.hpp"

using namespace snowball;

namespace {

DatasetSplit moons(std::uint64_t seed)
{
    RunSpec spec;
    spec.experiment.seed = seed;
    return make_dataset(spec);
}

ExperimentConfig quick(std::uint64_t seed = 0)
{
    ExperimentConfig c;
    c.seed = seed;
    c.generations = 2;
    c.iterations = 2;
    c.discovery_schedule = {20, 40};
    c.steps_per_iteration = 60;
    c.ramp_len = 60;
    return c;
}

DiscoveryReport ranked_report(std::size_t n)
{
    DiscoveryReport r;
    for (std::size_t i = 0; i < n; ++i) {
        DiscoveryEntry e;
        e.sample_id = 100 + i;
        e.pool_index = i;
        e.distance = static_cast<double>((i * 7) % n); // a permutation of 0..n-1
        r.entries.push_back(e);
    }
    return r;
}

bool same_rows(const RunRecord& a, const RunRecord& b)
{
    if (a.rows.size() != b.rows.size()) return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i)
        if (!same_metrics(a.rows[i], b.rows[i])) return false;
    return true;
}

} // namespace

TEST_CASE("doubling schedule")
{
    CHECK(doubling_schedule(100, 3) == std::vector<std::size_t>{100, 200, 400});
    CHECK(doubling_schedule(250, 4) == std::vector<std::size_t>{250, 500, 1000, 2000});
}

TEST_CASE("augmented discovery set index arithmetic")
{
    auto r = ranked_report(20);
    select_samples(r, 10, SelectionStrategy::min, 0);
    const auto extended = augmented_discovery(r, 0.5);
    REQUIRE(extended.size() == 15);
    std::set<std::size_t> ranks;
    for (std::size_t idx : extended) ranks.insert(static_cast<std::size_t>(r.entries[idx].distance));
    CHECK(*ranks.begin() == 0);
    CHECK(*ranks.rbegin() == 14);
    CHECK(ranks.size() == 15);

    const auto exact = augmented_discovery(r, 0.0);
    CHECK(exact == r.selected_indices());

    CHECK(augmented_discovery(r, 5.0).size() == 20);
    select_samples(r, 3, SelectionStrategy::min, 0);
    CHECK(augmented_discovery(r, 0.5).size() == 5); // ceil(1.5)
}

TEST_CASE("training set bookkeeping")
{
    std::vector<Sample> original{{0, {0.0}, 0, 0}, {1, {1.0}, 1, 1}};
    TrainingSet set(original);
    std::vector<Sample> found{{5, {0.5}, std::nullopt, 1}};
    std::vector<ClassId> labels{0};
    set.add_discovered(found, labels, 1, 2);
    CHECK(set.size() == 3);
    CHECK(set.samples()[2].label == 0);
    CHECK(set.samples()[2].true_label == 1);
    CHECK(set.entries()[2].provenance == Provenance::discovered);
    CHECK(set.entries()[2].iteration == 2);
    CHECK(set.contains(5));
    CHECK_THROWS_AS(set.add_discovered(found, labels, 1, 3), OrchestrationError);
    set.reset();
    CHECK(set.size() == 2);
    CHECK_FALSE(set.contains(5));
}

TEST_CASE("master refinement")
{
    const auto data = moons(1);
    auto config = quick();
    const auto teacher = initial_model(config, data.input_dim, data.class_count);
    auto report = assign_pseudo_labels(teacher, data.unlabeled, data.labeled);
    CHECK_THROWS_AS(build_master(teacher, data.labeled, report, data.unlabeled, config, nullptr, 1),
                    OrchestrationError);

    select_samples(report, 10, SelectionStrategy::min, 0);
    const auto previous = ModelParams::glorot(teacher.dims(), teacher.activation(), 99);
    config.beta = 1.0;
    CHECK(build_master(teacher, data.labeled, report, data.unlabeled, config, &previous, 1) == previous);

    config.beta = 0.5;
    const auto a = build_master(teacher, data.labeled, report, data.unlabeled, config, &previous, 1);
    const auto b = build_master(teacher, data.labeled, report, data.unlabeled, config, &previous, 1);
    CHECK(a == b);
    CHECK_FALSE(a == previous);
}

TEST_CASE("degenerate snowball equals mean teacher, and both equal supervised without consistency")
{
    const auto data = moons(2);
    auto c = quick(2);
    c.generations = 1;
    c.iterations = 1;
    c.discovery_schedule = {0};
    const auto snow = snowball_run(data, c);
    const auto mt = mean_teacher_run(data, c);
    CHECK(snow.final_teacher == mt.final_teacher);
    CHECK(snow.final_student == mt.final_student);
    CHECK(same_rows(snow, mt));

    c.lambda2_max = 0.0;
    const auto sup = supervised_run(data, c);
    CHECK(mean_teacher_run(data, c).final_student == sup.final_student);
    CHECK(snowball_run(data, c).final_student == sup.final_student);
}

TEST_CASE("generations restart from the original labeled set")
{
    const auto data = moons(0);
    const auto c = quick();
    const auto record = snowball_run(data, c);
    REQUIRE(record.rows.size() == 4);
    for (const auto& row : record.rows) {
        CHECK(row.discovered == c.discovery_schedule[static_cast<std::size_t>(row.iteration - 1)]);
        const std::size_t expected = row.iteration == 1 ? 4 + 20 : 4 + 20 + 40;
        CHECK(row.labeled_set_size == expected);
        CHECK(row.noise_rate >= 0.0);
        CHECK(row.noise_rate <= 1.0);
    }
    CHECK(record.rows[2].generation == 2);
    CHECK(record.final_master.has_value());
    CHECK(record.steps.size() == 4 * c.steps_per_iteration);
    CHECK(record.steps.back().step == 4 * c.steps_per_iteration - 1);
    for (std::size_t i = 1; i < record.rows.size(); ++i) CHECK(record.rows[i].wall_time >= record.rows[i - 1].wall_time);
}

TEST_CASE("discovery never takes more than the pool holds")
{
    const auto data = moons(0);
    auto c = quick();
    c.generations = 1;
    c.discovery_schedule = {900, 900};
    const auto record = snowball_run(data, c);
    CHECK(record.rows[0].discovered == 900);
    CHECK(record.rows[1].discovered == 100);
    CHECK(record.rows[1].labeled_set_size == 1004);
}

TEST_CASE("self-learning without discovery is supervised training")
{
    const auto data = moons(3);
    auto c = quick(3);
    c.discovery_schedule = {0, 0};
    const auto record = self_learning_run(data, c);
    for (const auto& row : record.rows) {
        CHECK(row.discovered == 0);
        CHECK(row.labeled_set_size == 4);
    }
    for (const auto& step : record.steps) CHECK(step.lambda2 == 0.0);
    CHECK_FALSE(record.final_master.has_value());
}

TEST_CASE("runs are deterministic")
{
    const auto data = moons(4);
    for (Algorithm algo : {Algorithm::snowball, Algorithm::self_learning, Algorithm::mean_teacher}) {
        auto c = quick(4);
        c.algorithm = algo;
        const auto a = run_experiment(data, c);
        const auto b = run_experiment(data, c);
        CHECK(same_rows(a, b));
        CHECK(a.final_teacher == b.final_teacher);
        CHECK(a.final_master == b.final_master);
    }
}

TEST_CASE("snowball beats supervised on the two-moons fixture")
{
    const auto data = moons(0);
    ExperimentConfig c;
    c.seed = 0;
    c.generations = 2;
    c.iterations = 3;
    const auto snow = snowball_run(data, c);
    const auto sup = supervised_run(data, c);
    CHECK(snow.final_row().test_err < sup.final_row().test_err);
}

TEST_CASE("the averaged teacher is at least as good as the student in most seeds")
{
    int teacher_wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ExperimentConfig c;
        c.seed = seed;
        const auto record = mean_teacher_run(moons(seed), c);
        if (record.final_row().test_err <= record.final_row().student_test_err) ++teacher_wins;
    }
    CHECK(teacher_wins >= 3);
}

TEST_CASE("guidance lowers pseudo-label noise on overlapping blobs")
{
    int snowball_cleaner = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RunSpec spec;
        spec.experiment.seed = seed;
        spec.data.kind = DatasetKind::blobs;
        spec.data.classes = 4;
        spec.data.n_per_class = 300;
        spec.data.noise = 1.5;
        spec.data.separation = 3.0;
        const auto data = make_dataset(spec);
        const auto snow = snowball_run(data, spec.experiment);
        const auto self = self_learning_run(data, spec.experiment);
        if (self.final_row().noise_rate >= snow.final_row().noise_rate) ++snowball_cleaner;
    }
    CHECK(snowball_cleaner >= 4);
}

TEST_CASE("divergence is reported with generation, iteration and step")
{
    const auto data = moons(0);
    auto c = quick();
    c.learning_rate = 1e200;
    c.momentum = 0.0;
    try {
        snowball_run(data, c);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(e.generation() == 1);
        CHECK(e.iteration() == 1);
        CHECK(std::string(e.what()).find("generation 1, iteration 1") != std::string::npos);
    }
}

TEST_CASE("configuration and data checks")
{
    const auto data = moons(0);
    auto c = quick();
    c.discovery_schedule = {10};
    CHECK_THROWS_AS(snowball_run(data, c), ConfigError);
    c = quick();
    c.alpha = 1.5;
    CHECK_THROWS_AS(snowball_run(data, c), ConfigError);

    auto unbalanced = data;
    unbalanced.labeled.pop_back();
    CHECK_THROWS_AS(snowball_run(unbalanced, quick()), OrchestrationError);
    CHECK(parse_algorithm("mean-teacher") == Algorithm::mean_teacher);
    CHECK_THROWS_AS(parse_algorithm("pi-model"), ConfigError);
}
