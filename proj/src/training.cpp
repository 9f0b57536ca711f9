#include "snowball/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "snowball/errors.hpp"
#include "snowball/rng.hpp"

namespace snowball {

void ema_update(EmaState& state, const ModelParams& source)
{
    if (!(state.decay >= 0.0 && state.decay <= 1.0)) throw ConfigError("ema_update: decay must be in [0, 1]");
    require_same_shape(state.averaged, source, "ema_update");
    scale_add(state.averaged, state.decay, source, 1.0 - state.decay);
    ++state.step_count;
}

namespace {

enum TermIndex : std::size_t { kClassification = 0, kTeacher = 1, kMaster = 2 };

Vector one_hot(ClassId label, std::size_t classes)
{
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
        throw ConfigError("label " + std::to_string(label) + " outside the model's class range");
    Vector v(classes, 0.0);
    v[static_cast<std::size_t>(label)] = 1.0;
    return v;
}

// Builds the student's examples for one batch. Per sample the perturbation
// stream yields the student copy first, then the copy shared by the guides.
std::vector<Example> build_examples(const ModelParams& student, const ModelParams& teacher, const ModelParams* master,
                                    std::span<const Sample* const> batch, double sigma, std::mt19937_64& rng)
{
    std::vector<Example> examples;
    examples.reserve(batch.size());
    const std::size_t classes = student.class_count();
    for (const Sample* sample : batch) {
        Example ex;
        ex.x = augment(sample->x, sigma, rng);
        const Vector guide_x = augment(sample->x, sigma, rng);
        ex.targets.resize(3);
        if (sample->label) ex.targets[kClassification] = one_hot(*sample->label, classes);
        ex.targets[kTeacher] = forward(teacher, guide_x).probs;
        if (master) ex.targets[kMaster] = forward(*master, guide_x).probs;
        examples.push_back(std::move(ex));
    }
    return examples;
}

LossSpec make_spec(double lambda1, double lambda2, double master_weight, Divergence consistency)
{
    LossSpec spec;
    spec.terms = {
        {lambda1, Divergence::cross_entropy},
        {lambda2, consistency},
        {lambda2 * master_weight, consistency},
    };
    return spec;
}

LossBreakdown breakdown_from(const GradResult& result, double lambda1, double lambda2, double master_weight)
{
    LossBreakdown b;
    b.lambda1 = lambda1;
    b.lambda2 = lambda2;
    b.classification = result.term_values[kClassification];
    b.consistency_teacher = result.term_values[kTeacher];
    b.consistency_master = result.term_values[kMaster];
    b.total = lambda1 * b.classification + lambda2 * (b.consistency_teacher + master_weight * b.consistency_master);
    return b;
}

std::vector<const Sample*> pointers(std::span<const Sample> samples)
{
    std::vector<const Sample*> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(&s);
    return out;
}

} // namespace

double classification_loss(const ModelParams& student, std::span<const Sample> labeled)
{
    if (labeled.empty()) throw ConfigError("classification_loss: empty batch");
    double sum = 0.0;
    for (const Sample& s : labeled) {
        if (!s.label) throw ConfigError("classification_loss: sample " + std::to_string(s.id) + " has no label");
        const Vector target = one_hot(*s.label, student.class_count());
        sum += cross_entropy(target, forward(student, s.x).probs);
    }
    return sum / static_cast<double>(labeled.size());
}

double consistency_loss(const ModelParams& student, const ModelParams& guide, std::span<const Sample> batch,
                        double augment_sigma, std::uint64_t perturb_seed, Divergence kind)
{
    require_same_shape(student, guide, "consistency_loss");
    if (batch.empty()) throw ConfigError("consistency_loss: empty batch");
    std::mt19937_64 rng(perturb_seed);
    double sum = 0.0;
    for (const Sample& s : batch) {
        const Vector student_x = augment(s.x, augment_sigma, rng);
        const Vector guide_x = augment(s.x, augment_sigma, rng);
        sum += divergence(kind, forward(guide, guide_x).probs, forward(student, student_x).probs);
    }
    return sum / static_cast<double>(batch.size());
}

LossBreakdown student_loss(const ModelParams& student, const ModelParams& teacher, const ModelParams* master,
                           std::span<const Sample> batch, const LossOptions& options, std::uint64_t perturb_seed)
{
    if (!(options.lambda1 >= 0.0 && options.lambda2 >= 0.0)) throw ConfigError("student_loss: lambdas must be >= 0");
    require_same_shape(student, teacher, "student_loss");
    if (master) require_same_shape(student, *master, "student_loss");
    std::mt19937_64 rng(perturb_seed);
    const auto ptrs = pointers(batch);
    const auto examples = build_examples(student, teacher, master, ptrs, options.augment_sigma, rng);
    const auto spec = make_spec(options.lambda1, options.lambda2, options.master_weight, options.consistency);
    return breakdown_from(grad(student, examples, spec), options.lambda1, options.lambda2, options.master_weight);
}

double rampup(std::size_t step, std::size_t ramp_len)
{
    if (ramp_len == 0 || step >= ramp_len) return 1.0;
    if (step == 0) return 0.0;
    const double phase = 1.0 - static_cast<double>(step) / static_cast<double>(ramp_len);
    return std::exp(-5.0 * phase * phase);
}

CyclingSampler::CyclingSampler(std::size_t size, std::uint64_t seed) : order_(size), rng_(seed)
{
    for (std::size_t i = 0; i < size; ++i) order_[i] = i;
    std::shuffle(order_.begin(), order_.end(), rng_);
}

std::size_t CyclingSampler::next()
{
    if (order_.empty()) throw ConfigError("CyclingSampler: empty range");
    if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }
    return order_[cursor_++];
}

double error_rate(const ModelParams& model, std::span<const Sample> samples)
{
    if (samples.empty()) return 0.0;
    std::size_t wrong = 0;
    for (const Sample& s : samples)
        if (predict(model, s.x) != static_cast<std::size_t>(s.true_label)) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(samples.size());
}

IterationResult train_iteration(const ModelParams& student_init, std::span<const Sample> training_set,
                                std::span<const Sample> unlabeled_pool, const ModelParams* master,
                                const TrainConfig& config, std::span<const Sample> test)
{
    if (training_set.empty()) throw ConfigError("train_iteration: empty training set");
    if (config.batch_labeled == 0) throw ConfigError("train_iteration: batch_labeled must be positive");
    if (config.ema_every == 0) throw ConfigError("train_iteration: ema_every must be positive");
    if (!(config.lambda1 >= 0.0 && config.lambda2_max >= 0.0)) throw ConfigError("train_iteration: lambdas must be >= 0");
    if (master) require_same_shape(student_init, *master, "train_iteration (master)");
    for (const Sample& s : training_set)
        if (!s.label) throw ConfigError("train_iteration: training sample " + std::to_string(s.id) + " has no label");

    IterationResult result;
    result.student = student_init;
    EmaState teacher{config.ema_decay, student_init, 0};
    if (config.steps == 0) {
        result.teacher = std::move(teacher.averaged);
        return result;
    }

    CyclingSampler labeled_sampler(training_set.size(), derive_seed(config.seed, 1));
    CyclingSampler unlabeled_sampler(unlabeled_pool.size(), derive_seed(config.seed, 2));
    std::mt19937_64 perturb(derive_seed(config.seed, 3));
    MomentumState momentum{config.momentum, {}};
    const std::size_t unlabeled_per_batch = unlabeled_pool.empty() ? 0 : config.batch_unlabeled;

    std::vector<const Sample*> batch;
    std::vector<const Sample*> labeled_part;
    result.steps.reserve(config.steps);
    for (std::size_t local = 0; local < config.steps; ++local) {
        const std::size_t step = config.step_offset + local;
        batch.clear();
        labeled_part.clear();
        for (std::size_t i = 0; i < config.batch_labeled; ++i) {
            labeled_part.push_back(&training_set[labeled_sampler.next()]);
            batch.push_back(labeled_part.back());
        }
        for (std::size_t i = 0; i < unlabeled_per_batch; ++i) batch.push_back(&unlabeled_pool[unlabeled_sampler.next()]);

        const double lambda2 = config.lambda2_max * rampup(step, config.ramp_len);
        try {
            const auto examples =
                build_examples(result.student, teacher.averaged, master, batch, config.augment_sigma, perturb);
            const GradResult g =
                grad(result.student, examples, make_spec(config.lambda1, lambda2, config.master_weight, config.consistency));
            if (!std::isfinite(g.loss)) throw TrainingError("non-finite loss", step);

            sgd_step(result.student, g.gradient, config.learning_rate, momentum, config.weight_decay);
            if (!result.student.all_finite()) throw TrainingError("non-finite parameters after update", step);
            if ((local + 1) % config.ema_every == 0) ema_update(teacher, result.student);

            const LossBreakdown b = breakdown_from(g, config.lambda1, lambda2, config.master_weight);
            StepMetrics m;
            m.step = step;
            m.classification = b.classification;
            m.consistency_teacher = b.consistency_teacher;
            m.consistency_master = b.consistency_master;
            m.total = b.total;
            m.lambda2 = lambda2;
            std::size_t wrong = 0;
            for (const Sample* s : labeled_part)
                if (predict(result.student, s->x) != static_cast<std::size_t>(*s->label)) ++wrong;
            m.train_err = static_cast<double>(wrong) / static_cast<double>(labeled_part.size());
            const bool last = local + 1 == config.steps;
            if (!test.empty() && (last || (config.eval_every > 0 && (local + 1) % config.eval_every == 0)))
                m.test_err = error_rate(teacher.averaged, test);
            result.steps.push_back(m);
        } catch (const NumericalError& e) {
            throw TrainingError(std::string("numerical failure: ") + e.what(), step);
        }
    }
    result.teacher = std::move(teacher.averaged);
    return result;
}

namespace {

void put(std::ostream& out, double v)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, res.ptr - buf);
}

} // namespace

void write_step_metrics_csv(std::ostream& out, std::span<const StepMetrics> steps)
{
    out << kStepMetricsHeader << '\n';
    for (const StepMetrics& m : steps) {
        out << m.step;
        for (double v : {m.classification, m.consistency_teacher, m.consistency_master, m.total, m.lambda2,
                         m.train_err, m.test_err}) {
            out << ',';
            put(out, v);
        }
        out << '\n';
    }
}

std::vector<StepMetrics> read_step_metrics_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != kStepMetricsHeader) throw ParseError("unexpected step-metrics header", 1);
    std::vector<StepMetrics> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (fields.size() != 8) throw ParseError("expected 8 columns", line_no);
        StepMetrics m;
        auto parse = [&](const std::string& f, auto& value) {
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
            if (ec != std::errc{} || ptr != f.data() + f.size()) throw ParseError("bad number '" + f + "'", line_no);
        };
        parse(fields[0], m.step);
        parse(fields[1], m.classification);
        parse(fields[2], m.consistency_teacher);
        parse(fields[3], m.consistency_master);
        parse(fields[4], m.total);
        parse(fields[5], m.lambda2);
        parse(fields[6], m.train_err);
        parse(fields[7], m.test_err);
        rows.push_back(m);
    }
    return rows;
}

} // namespace snowball
