#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "snowball/data.hpp"
#include "snowball/loss.hpp"
#include "snowball/nn.hpp"

namespace snowball {

struct LossBreakdown {
    double classification = 0.0;      // J_C
    double consistency_teacher = 0.0; // teacher part of J_theta
    double consistency_master = 0.0;  // master part of J_theta, 0 without a master
    double total = 0.0;               // lambda1 * J_C + lambda2 * (teacher + master)
    double lambda1 = 1.0;
    double lambda2 = 0.0;
};

struct EmaState {
    double decay = 0.99;
    ModelParams averaged;
    std::size_t step_count = 0;
};

/// averaged <- decay * averaged + (1 - decay) * source
void ema_update(EmaState& state, const ModelParams& source);

/// Mean cross-entropy of the student against the one-hot labels of `labeled`.
/// Throws ConfigError if a sample carries no label.
double classification_loss(const ModelParams& student, std::span<const Sample> labeled);

/// Mean divergence between the guide's prediction on one perturbed copy of each
/// sample (the target) and the student's prediction on an independent copy.
/// Perturbations are drawn from `perturb_seed`: per sample, student copy first.
double consistency_loss(const ModelParams& student, const ModelParams& guide, std::span<const Sample> batch,
                        double augment_sigma, std::uint64_t perturb_seed,
                        Divergence kind = Divergence::cross_entropy);

struct LossOptions {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double master_weight = 1.0; // multiplies the master consistency term
    double augment_sigma = 0.0;
    Divergence consistency = Divergence::cross_entropy;
};

/// Student objective on one batch. Classification covers the labeled samples of
/// the batch, consistency covers every sample. Teacher and master see the same
/// perturbed copy. `master` may be null.
LossBreakdown student_loss(const ModelParams& student, const ModelParams& teacher, const ModelParams* master,
                           std::span<const Sample> batch, const LossOptions& options, std::uint64_t perturb_seed);

/// sigmoid ramp exp(-5 (1 - t)^2) with t = step / ramp_len clipped to [0, 1];
/// exactly 0 at step 0 and 1 from ramp_len on.
double rampup(std::size_t step, std::size_t ramp_len);

struct TrainConfig {
    std::size_t steps = 400;
    std::size_t batch_labeled = 8;
    std::size_t batch_unlabeled = 56;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double lambda1 = 1.0;
    double lambda2_max = 1.0;
    std::size_t ramp_len = 400;
    double ema_decay = 0.99; // alpha
    std::size_t ema_every = 1;
    double augment_sigma = 0.1;
    Divergence consistency = Divergence::cross_entropy;
    double master_weight = 1.0;
    std::size_t step_offset = 0; // global index of this call's first step, drives the ramp
    std::size_t eval_every = 0;  // test-error cadence; 0 evaluates the last step only
    std::uint64_t seed = 0;
};

struct StepMetrics {
    std::size_t step = 0; // global step index
    double classification = 0.0;
    double consistency_teacher = 0.0;
    double consistency_master = 0.0;
    double total = 0.0;
    double lambda2 = 0.0;
    double train_err = 0.0; // student error on the step's labeled minibatch
    double test_err = std::numeric_limits<double>::quiet_NaN(); // teacher test error when evaluated
};

struct IterationResult {
    ModelParams student;
    ModelParams teacher;
    std::vector<StepMetrics> steps;
};

/// Minibatch SGD on the student with an EMA teacher updated after every
/// `ema_every` steps. `master` may be null. Throws TrainingError on a
/// non-finite loss.
IterationResult train_iteration(const ModelParams& student_init, std::span<const Sample> training_set,
                                std::span<const Sample> unlabeled_pool, const ModelParams* master,
                                const TrainConfig& config, std::span<const Sample> test = {});

/// Fraction of samples whose predicted class differs from their ground truth.
double error_rate(const ModelParams& model, std::span<const Sample> samples);

inline constexpr const char* kStepMetricsHeader =
    "step,J_C,J_theta_teacher,J_theta_master,J_S,lambda2,train_err,test_err";

void write_step_metrics_csv(std::ostream& out, std::span<const StepMetrics> steps);
std::vector<StepMetrics> read_step_metrics_csv(std::istream& in);

/// Cycles through a shuffled index range, reshuffling on each pass.
class CyclingSampler {
public:
    CyclingSampler(std::size_t size, std::uint64_t seed);

    std::size_t next();
    std::size_t size() const noexcept { return order_.size(); }

private:
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::mt19937_64 rng_;
};

} // namespace snowball
