// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snowball/discovery.hpp"
#include "snowball/harness.hpp"
#include "snowball/nn.hpp"
#include "snowball/orchestrator.hpp"
#include "snowball/training.hpp"

using namespace snowball;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

// --- 1. gradients -----------------------------------------------------------

double direct_loss(const ModelParams& p, const std::vector<Example>& batch, const LossSpec& spec)
{
    double total = 0.0;
    for (std::size_t t = 0; t < spec.terms.size(); ++t) {
        double sum = 0.0;
        int n = 0;
        for (const Example& ex : batch) {
            if (!ex.targets[t]) continue;
            const Vector q = forward(p, ex.x).probs;
            const Vector& y = *ex.targets[t];
            double v = 0.0;
            if (spec.terms[t].divergence == Divergence::cross_entropy)
                for (std::size_t i = 0; i < q.size(); ++i) v -= y[i] * std::log(std::max(q[i], 1e-12));
            else {
                for (std::size_t i = 0; i < q.size(); ++i) v += (q[i] - y[i]) * (q[i] - y[i]);
                v /= static_cast<double>(q.size());
            }
            sum += v;
            ++n;
        }
        if (n) total += spec.terms[t].weight * sum / n;
    }
    return total;
}

Outcome gradient_check()
{
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> width(1, 8);
    std::uniform_int_distribution<int> depth(2, 4);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.05, 1.0);
    const double h = 1e-5;
    double worst = 0.0;
    const int nets = 25;
    for (int k = 0; k < nets; ++k) {
        std::vector<std::size_t> dims;
        const int layers = depth(rng);
        for (int l = 0; l <= layers; ++l) dims.push_back(l == layers ? 2 + width(rng) % 3 : width(rng));
        auto params = ModelParams::glorot(dims, k % 2 ? Activation::tanh : Activation::relu, 500 + k);
        for (std::size_t l = 0; l < params.layer_count(); ++l)
            for (double& b : params.bias(l)) b = 0.1 * normal(rng);
        const LossSpec spec{{{1.0, Divergence::cross_entropy}, {0.5, Divergence::cross_entropy},
                             {3.0, Divergence::squared_error}}};
        std::vector<Example> batch(6);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            batch[i].x.resize(dims.front());
            for (double& v : batch[i].x) v = normal(rng);
            batch[i].targets.resize(3);
            Vector onehot(dims.back(), 0.0);
            onehot[i % dims.back()] = 1.0;
            if (i % 3 != 2) batch[i].targets[0] = onehot;
            for (int t = 1; t < 3; ++t) {
                Vector q(dims.back());
                double s = 0.0;
                for (double& v : q) s += (v = unit(rng));
                for (double& v : q) v /= s;
                batch[i].targets[t] = q;
            }
        }
        const auto g = grad(params, batch, spec);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto up = params, down = params;
            up.values()[i] += h;
            down.values()[i] -= h;
            const double numeric = (direct_loss(up, batch, spec) - direct_loss(down, batch, spec)) / (2 * h);
            const double analytic = g.gradient.values()[i];
            worst = std::max(worst, std::abs(numeric - analytic) /
                                        std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
        }
    }
    return {worst < 1e-4, fmt("%.0f networks, max relative error %.2e (limit 1e-4)", nets, worst)};
}

// --- 2. EMA -----------------------------------------------------------------

Outcome ema_algebra()
{
    const auto src = ModelParams::glorot({3, 5, 2}, Activation::relu, 1);
    const auto start = ModelParams::glorot({3, 5, 2}, Activation::relu, 2);
    EmaState copy{0.0, start, 0};
    ema_update(copy, src);
    EmaState frozen{1.0, start, 0};
    ema_update(frozen, src);
    ModelParams twos({3, 5, 2}, Activation::relu), fours({3, 5, 2}, Activation::relu);
    for (double& v : twos.values()) v = 2.0;
    for (double& v : fours.values()) v = 4.0;
    EmaState mid{0.5, twos, 0};
    ema_update(mid, fours);
    const bool mid_ok = std::all_of(mid.averaged.values().begin(), mid.averaged.values().end(),
                                    [](double v) { return v == 3.0; });
    const bool ok = copy.averaged == src && frozen.averaged == start && mid_ok;
    return {ok, std::string("decay 0 copies: ") + (copy.averaged == src ? "yes" : "no") +
                    ", decay 1 frozen: " + (frozen.averaged == start ? "yes" : "no") +
                    ", midpoint 2/4 -> 3: " + (mid_ok ? "yes" : "no")};
}

// --- 3. degenerate equivalence ------------------------------------------------

Outcome degenerate_equivalence()
{
    RunSpec spec;
    const DatasetSplit data = make_dataset(spec);
    ExperimentConfig c = spec.experiment;
    c.generations = 1;
    c.iterations = 1;
    c.discovery_schedule = {0};

    const RunRecord snow = snowball_run(data, c);
    const RunRecord mt = mean_teacher_run(data, c);
    const bool mt_equal = snow.final_teacher == mt.final_teacher && snow.final_student == mt.final_student;

    c.lambda2_max = 0.0;
    const RunRecord snow0 = snowball_run(data, c);
    const RunRecord mt0 = mean_teacher_run(data, c);
    const RunRecord sup = supervised_run(data, c);
    const bool sup_equal = snow0.final_student == sup.final_student && mt0.final_student == sup.final_student;
    return {mt_equal && sup_equal, std::string("snowball(M=K=1,N=0) == mean teacher: ") + (mt_equal ? "yes" : "no") +
                                       ", lambda2=0 == supervised: " + (sup_equal ? "yes" : "no")};
}

// --- 4. discovery oracle -------------------------------------------------------

std::vector<Sample> random_samples(std::size_t n, std::size_t classes, bool labeled, std::mt19937_64& rng,
                                   SampleId first)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Sample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].id = first + i;
        out[i].x = {normal(rng), normal(rng), normal(rng)};
        out[i].true_label = static_cast<ClassId>(i % classes);
        if (labeled) out[i].label = out[i].true_label;
    }
    return out;
}

struct Scan {
    std::vector<ClassId> label;
    std::vector<double> dist;
};

Scan scan(const std::vector<Vector>& pool, const std::vector<Vector>& train, const std::vector<Sample>& train_s,
          std::size_t classes)
{
    std::vector<Vector> centers(classes, Vector(train.front().size(), 0.0));
    std::vector<double> count(classes, 0.0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto c = static_cast<std::size_t>(*train_s[i].label);
        for (std::size_t d = 0; d < train[i].size(); ++d) centers[c][d] += train[i][d];
        count[c] += 1;
    }
    for (std::size_t c = 0; c < classes; ++c)
        for (double& v : centers[c]) v /= count[c];
    Scan s;
    for (const Vector& f : pool) {
        ClassId best = 0;
        double bd = -1;
        for (std::size_t c = 0; c < classes; ++c) {
            double sq = 0;
            for (std::size_t d = 0; d < f.size(); ++d) sq += (f[d] - centers[c][d]) * (f[d] - centers[c][d]);
            if (bd < 0 || std::sqrt(sq) < bd) {
                bd = std::sqrt(sq);
                best = static_cast<ClassId>(c);
            }
        }
        s.label.push_back(best);
        s.dist.push_back(bd);
    }
    return s;
}

std::vector<std::size_t> order_by(const std::vector<double>& score, const std::vector<Sample>& pool)
{
    std::vector<std::size_t> idx(score.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return score[a] != score[b] ? score[a] < score[b] : pool[a].id < pool[b].id;
    });
    return idx;
}

std::vector<Vector> feats(const ModelParams& m, const std::vector<Sample>& s)
{
    std::vector<Vector> out;
    for (const auto& x : s) out.push_back(forward(m, x.x).features);
    return out;
}

Outcome discovery_oracle()
{
    std::mt19937_64 rng(3);
    int mismatches = 0;
    int checks = 0;
    const std::size_t C = 3;
    for (int trial = 0; trial < 6; ++trial) {
        std::vector<ModelParams> models;
        for (int m = 0; m < 3; ++m)
            models.push_back(ModelParams::glorot({3, 6, 5, C}, trial % 2 ? Activation::tanh : Activation::relu,
                                                 1000 + 10 * trial + m));
        const auto train = random_samples(12, C, true, rng, 0);
        const auto pool = random_samples(40 + 12 * trial, C, false, rng, 100);
        std::vector<Scan> scans;
        for (const auto& m : models) scans.push_back(scan(feats(m, pool), feats(m, train), train, C));

        auto expect_ranking = [&](const DiscoveryReport& r, const std::vector<double>& score,
                                  const std::vector<ClassId>& labels) {
            const auto order = order_by(score, pool);
            for (std::size_t i = 0; i < pool.size(); ++i) {
                ++checks;
                if (r.entries[order[i]].rank != i || r.entries[i].assigned_label != labels[i]) ++mismatches;
            }
        };

        // Nearest center with one model.
        expect_ranking(assign_pseudo_labels(models[0], pool, train), scans[0].dist, scans[0].label);

        std::vector<ClassId> votes(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            std::map<ClassId, int> tally;
            for (const auto& s : scans) ++tally[s.label[i]];
            votes[i] = scans.back().label[i];
            for (const auto& [label, n] : tally)
                if (2 * n > 3) votes[i] = label;
        }
        // Scores are summed over models then divided, as the fused report does.
        std::vector<double> avg(pool.size(), 0.0), ranks(pool.size(), 0.0);
        for (const auto& s : scans) {
            const auto o = order_by(s.dist, pool);
            for (std::size_t r = 0; r < o.size(); ++r) ranks[o[r]] += static_cast<double>(r);
            for (std::size_t i = 0; i < pool.size(); ++i) avg[i] += s.dist[i];
        }
        for (std::size_t i = 0; i < pool.size(); ++i) {
            avg[i] /= 3.0;
            ranks[i] /= 3.0;
        }

        expect_ranking(fuse_distances(models, pool, train, Fusion::average_distance), avg, votes);
        expect_ranking(fuse_distances(models, pool, train, Fusion::average_sorting_score), ranks, votes);

        auto cat = [&](const std::vector<Sample>& s) {
            std::vector<Vector> out(s.size());
            for (const auto& m : models) {
                const auto f = feats(m, s);
                for (std::size_t i = 0; i < f.size(); ++i) out[i].insert(out[i].end(), f[i].begin(), f[i].end());
            }
            return out;
        };
        const Scan cascade = scan(cat(pool), cat(train), train, C);
        expect_ranking(fuse_distances(models, pool, train, Fusion::feature_cascade), cascade.dist, cascade.label);
    }
    return {mismatches == 0,
            fmt("%.0f label/rank checks over pools of 40-100, %.0f mismatches", checks, mismatches)};
}

// --- shared two-moons runs for 6, 7, 8 -------------------------------------------

struct SeedRuns {
    RunRecord snowball;
    RunRecord self_learning;
    RunRecord supervised;
};

const std::vector<SeedRuns>& two_moons_runs()
{
    static const std::vector<SeedRuns> runs = [] {
        std::vector<SeedRuns> out;
        for (std::uint64_t seed : kSeeds) {
            RunSpec spec;
            spec.experiment.seed = seed;
            const DatasetSplit data = make_dataset(spec);
            out.push_back({snowball_run(data, spec.experiment), self_learning_run(data, spec.experiment),
                           supervised_run(data, spec.experiment)});
        }
        return out;
    }();
    return runs;
}

// --- 5. selection ordering -----------------------------------------------------

Outcome selection_ordering()
{
    int ok = 0;
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
        RunSpec spec;
        spec.experiment.seed = seed;
        spec.data.kind = DatasetKind::blobs;
        spec.data.classes = 4;
        spec.data.n_per_class = 227; // 908 points: 500 test, 8 labeled, 400 unlabeled
        spec.data.noise = 1.0;
        spec.data.separation = 3.0;
        spec.data.labels_per_class = 2;
        const DatasetSplit data = make_dataset(spec);
        const auto rows = selection_ablation(data, spec.experiment, 100);
        const double mn = rows[1].sample_error_rate, rnd = rows[2].sample_error_rate, mx = rows[3].sample_error_rate;
        if (mn <= rnd && rnd <= mx) ++ok;
        detail += fmt(" [%.2f %.2f %.2f]", mn, rnd, mx);
    }
    return {ok >= 4, std::to_string(ok) + "/5 seeds ordered; min/random/max noise:" + detail};
}

// --- 6. guidance ----------------------------------------------------------------

Outcome guidance()
{
    int err_ok = 0, noise_ok = 0;
    std::string detail;
    for (const SeedRuns& r : two_moons_runs()) {
        const auto& a = r.snowball.final_row();
        const auto& b = r.self_learning.final_row();
        if (a.test_err <= b.test_err) ++err_ok;
        if (a.noise_rate <= b.noise_rate) ++noise_ok;
        detail += fmt(" [err %.3f/%.3f noise %.3f", a.test_err, b.test_err, a.noise_rate) + fmt("/%.3f]", b.noise_rate);
    }
    return {err_ok >= 4 && noise_ok >= 4, "error " + std::to_string(err_ok) + "/5, noise " + std::to_string(noise_ok) +
                                              "/5; snowball/self-learning:" + detail};
}

// --- 7. convergence across generations ---------------------------------------------

Outcome convergence()
{
    int ok = 0;
    std::string detail;
    for (const SeedRuns& r : two_moons_runs()) {
        std::vector<double> last;
        for (const IterationRow& row : r.snowball.rows)
            if (row.iteration == r.snowball.config.iterations) last.push_back(row.test_err);
        bool monotone = true;
        for (std::size_t g = 1; g < last.size(); ++g)
            if (last[g] > last[g - 1] + 0.01) monotone = false;
        if (monotone) ++ok;
        detail += " [";
        for (std::size_t g = 0; g < last.size(); ++g) detail += fmt(g ? " %.3f" : "%.3f", last[g]);
        detail += "]";
    }
    return {ok >= 4, std::to_string(ok) + "/5 seeds non-increasing within 1pp; per-generation error:" + detail};
}

// --- 8. semi-supervised gain ------------------------------------------------------

Outcome gain()
{
    int ok = 0;
    std::string detail;
    for (const SeedRuns& r : two_moons_runs()) {
        const double s = r.snowball.final_row().test_err;
        const double p = r.supervised.final_row().test_err;
        if (p - s >= 0.05) ++ok;
        detail += fmt(" [%.3f vs %.3f]", s, p);
    }
    return {ok >= 4, std::to_string(ok) + "/5 seeds with gain >= 5pp; snowball vs supervised:" + detail};
}

// --- 9. reproducibility ------------------------------------------------------------

Outcome reproducibility()
{
    const auto root = std::filesystem::temp_directory_path() / "snowball_acceptance";
    std::filesystem::remove_all(root);
    RunSpec spec;
    spec.experiment.seed = 3;
    const RunRecord first = execute_run(spec, root / "first");
    const Manifest manifest = load_manifest(root / "first" / "manifest.txt");
    const RunRecord again = execute_run(manifest.spec, root / "again");

    bool same = manifest.spec == spec && first.rows.size() == again.rows.size() &&
                manifest.rows.size() == first.rows.size();
    for (std::size_t i = 0; same && i < first.rows.size(); ++i)
        same = same_metrics(first.rows[i], again.rows[i]) && same_metrics(manifest.rows[i], first.rows[i]);
    same = same && first.final_teacher == again.final_teacher && first.final_student == again.final_student &&
           first.final_master == again.final_master;
    same = same && load_checkpoint(root / "first" / "final_teacher.ckpt") == again.final_teacher;
    std::filesystem::remove_all(root);
    return {same, fmt("%.0f rows and final checkpoints re-executed from the manifest, bit-identical: ",
                      static_cast<double>(first.rows.size())) +
                      (same ? "yes" : "no")};
}

// --- 10. checkpoint round trip ---------------------------------------------------------

Outcome checkpoint_round_trip()
{
    const auto path = std::filesystem::temp_directory_path() / "snowball_acceptance.ckpt";
    std::mt19937_64 rng(10);
    std::normal_distribution<double> normal(0.0, 1.0);
    int identical = 0;
    const int trials = 10;
    for (int t = 0; t < trials; ++t) {
        auto net = ModelParams::glorot({4, 9, 7, 3}, t % 2 ? Activation::tanh : Activation::relu, 70 + t);
        for (double& v : net.values()) v += 1e-3 * normal(rng);
        save_checkpoint(path, net);
        const auto loaded = load_checkpoint(path);
        bool same = loaded == net;
        for (int k = 0; k < 20 && same; ++k) {
            const Vector x{normal(rng), normal(rng), normal(rng), normal(rng)};
            const auto a = forward(net, x);
            const auto b = forward(loaded, x);
            same = a.logits == b.logits && a.probs == b.probs && a.features == b.features;
        }
        if (same) ++identical;
    }
    std::filesystem::remove(path);
    return {identical == trials, fmt("%.0f/%.0f networks bit-identical after save/load/forward", identical, trials)};
}

} // namespace

int main()
{
    struct Criterion {
        int id;
        const char* name;
        double limit_seconds; // 0 when the criterion sets no limit
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", 10, gradient_check},
        {2, "EMA algebra", 0, ema_algebra},
        {3, "degenerate equivalence", 60, degenerate_equivalence},
        {4, "discovery oracle", 0, discovery_oracle},
        {5, "selection ordering", 300, selection_ordering},
        {6, "guidance ablation", 600, guidance},
        {7, "convergence across generations", 900, convergence},
        {8, "semi-supervised gain", 0, gain},
        {9, "reproducibility", 0, reproducibility},
        {10, "checkpoint round trip", 0, checkpoint_round_trip},
    };
    int failed = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bool pass = out.pass;
        std::string timing = fmt("%.1fs", seconds);
        if (c.limit_seconds > 0) {
            timing += fmt(" of %.0fs", c.limit_seconds);
            if (seconds > c.limit_seconds) pass = false;
        }
        if (!pass) ++failed;
        std::printf("criterion %2d %-32s %s  %s (%s)\n", c.id, c.name, pass ? "PASS" : "FAIL", out.detail.c_str(),
                    timing.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
