#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snowball/loss.hpp"

namespace snowball {

using Vector = std::vector<double>;

enum class Activation { relu, tanh };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& text);

/// Dense feed-forward network parameters stored as one flat buffer.
///
/// Layer i maps dims[i] -> dims[i+1]. Its weight matrix is stored row-major
/// (dims[i+1] rows, dims[i] columns) and is followed by its bias vector.
/// Hidden layers apply the activation; the last layer is linear and yields
/// the logits.
class ModelParams {
public:
    ModelParams() = default;

    /// All-zero parameters with the given layer dims (at least input and output).
    ModelParams(std::vector<std::size_t> dims, Activation activation);

    /// Glorot-uniform weights, U[-s, s] with s = sqrt(6 / (fan_in + fan_out)); zero biases.
    static ModelParams glorot(std::vector<std::size_t> dims, Activation activation, std::uint64_t seed);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    Activation activation() const noexcept { return activation_; }
    std::size_t layer_count() const noexcept { return dims_.empty() ? 0 : dims_.size() - 1; }
    std::size_t input_dim() const noexcept { return dims_.empty() ? 0 : dims_.front(); }
    std::size_t class_count() const noexcept { return dims_.empty() ? 0 : dims_.back(); }
    /// Width of the penultimate activations (the input of the final layer).
    std::size_t feature_dim() const noexcept { return dims_.size() < 2 ? 0 : dims_[dims_.size() - 2]; }

    std::span<double> weights(std::size_t layer);
    std::span<const double> weights(std::size_t layer) const;
    std::span<double> bias(std::size_t layer);
    std::span<const double> bias(std::size_t layer) const;

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }

    bool same_shape(const ModelParams& other) const noexcept;
    bool all_finite() const noexcept;

    /// A parameter set of the same shape filled with zeros.
    ModelParams zeros_like() const { return ModelParams(dims_, activation_); }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    std::vector<std::size_t> dims_;
    Activation activation_ = Activation::relu;
    std::vector<double> data_;
    std::vector<std::size_t> offsets_; // start of each layer's weights
};

using Gradient = ModelParams;

/// Throws ConfigError unless both have identical layer dims and activation.
void require_same_shape(const ModelParams& a, const ModelParams& b, const char* context);

/// y <- a * y + b * x, element-wise.
void scale_add(ModelParams& y, double a, const ModelParams& x, double b);

double max_abs_diff(const ModelParams& a, const ModelParams& b);

struct ForwardOutput {
    Vector features; // activations entering the final linear layer
    Vector logits;
    Vector probs;
};

/// Max-shifted softmax.
Vector softmax(std::span<const double> logits);

ForwardOutput forward(const ModelParams& params, std::span<const double> x);

/// Class index with the largest probability; ties go to the lower index.
std::size_t predict(const ModelParams& params, std::span<const double> x);

/// One loss term of a batch objective. Each Example carries (optionally) one
/// target distribution per term; the term's value is the mean divergence over
/// the examples that carry a target for it.
struct LossTerm {
    double weight = 1.0;
    Divergence divergence = Divergence::cross_entropy;
};

struct LossSpec {
    std::vector<LossTerm> terms;
};

struct Example {
    Vector x;
    std::vector<std::optional<Vector>> targets; // parallel to LossSpec::terms
};

struct GradResult {
    Gradient gradient;
    double loss = 0.0;               // sum_t weight_t * term_values[t]
    std::vector<double> term_values; // unweighted per-term means; 0 when no example carries the term
};

/// Loss and exact reverse-mode gradient of the batch objective.
///
/// Terms with zero weight are skipped entirely (value still reported).
/// Throws ConfigError on an empty batch or shape mismatches and
/// NumericalError when a forward pass goes non-finite.
GradResult grad(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec);

struct MomentumState {
    double momentum = 0.9;
    ModelParams velocity; // lazily shaped on first step
};

/// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
void sgd_step(ModelParams& params, const Gradient& gradient, double learning_rate, MomentumState& state,
              double weight_decay = 0.0);

// Checkpoints: text header "SNOWBALL-CKPT v1", a dims line, an activation
// line, then every parameter as a little-endian IEEE-754 double in layer order.
inline constexpr const char* kCheckpointMagic = "SNOWBALL-CKPT v1";

void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

} // namespace snowball
