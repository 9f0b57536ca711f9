#include "snowball/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "snowball/errors.hpp"

namespace snowball {

std::string to_string(Activation activation)
{
    return activation == Activation::relu ? "relu" : "tanh";
}

Activation parse_activation(const std::string& text)
{
    if (text == "relu") return Activation::relu;
    if (text == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + text + "' (expected relu or tanh)");
}

ModelParams::ModelParams(std::vector<std::size_t> dims, Activation activation)
    : dims_(std::move(dims)), activation_(activation)
{
    if (dims_.size() < 2) throw ConfigError("a network needs at least an input and an output dimension");
    std::size_t total = 0;
    for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
        if (dims_[i] == 0 || dims_[i + 1] == 0) throw ConfigError("layer dimensions must be positive");
        offsets_.push_back(total);
        total += dims_[i] * dims_[i + 1] + dims_[i + 1];
    }
    data_.assign(total, 0.0);
}

ModelParams ModelParams::glorot(std::vector<std::size_t> dims, Activation activation, std::uint64_t seed)
{
    ModelParams params(std::move(dims), activation);
    std::mt19937_64 rng(seed);
    for (std::size_t layer = 0; layer < params.layer_count(); ++layer) {
        const double fan_in = static_cast<double>(params.dims_[layer]);
        const double fan_out = static_cast<double>(params.dims_[layer + 1]);
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : params.weights(layer)) w = dist(rng);
    }
    return params;
}

std::span<double> ModelParams::weights(std::size_t layer)
{
    return {data_.data() + offsets_.at(layer), dims_[layer] * dims_[layer + 1]};
}

std::span<const double> ModelParams::weights(std::size_t layer) const
{
    return {data_.data() + offsets_.at(layer), dims_[layer] * dims_[layer + 1]};
}

std::span<double> ModelParams::bias(std::size_t layer)
{
    return {data_.data() + offsets_.at(layer) + dims_[layer] * dims_[layer + 1], dims_[layer + 1]};
}

std::span<const double> ModelParams::bias(std::size_t layer) const
{
    return {data_.data() + offsets_.at(layer) + dims_[layer] * dims_[layer + 1], dims_[layer + 1]};
}

bool ModelParams::same_shape(const ModelParams& other) const noexcept
{
    return dims_ == other.dims_ && activation_ == other.activation_;
}

bool ModelParams::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const ModelParams& a, const ModelParams& b, const char* context)
{
    if (!a.same_shape(b)) throw ConfigError(std::string(context) + ": parameter shapes differ");
}

void scale_add(ModelParams& y, double a, const ModelParams& x, double b)
{
    require_same_shape(y, x, "scale_add");
    auto dst = y.values();
    auto src = x.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * dst[i] + b * src[i];
}

double max_abs_diff(const ModelParams& a, const ModelParams& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
    return worst;
}

Vector softmax(std::span<const double> logits)
{
    Vector probs(logits.size());
    if (logits.empty()) return probs;
    const double shift = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - shift);
        total += probs[i];
    }
    for (double& p : probs) p /= total;
    return probs;
}

namespace {

// Pre-activations and activations of every layer, kept for the backward pass.
struct Trace {
    std::vector<Vector> inputs;         // inputs[l] feeds layer l; inputs[0] = x
    std::vector<Vector> pre_activation; // z_l for every layer
};

void affine(std::span<const double> weights, std::span<const double> bias, std::span<const double> in,
            Vector& out)
{
    const std::size_t rows = bias.size();
    const std::size_t cols = in.size();
    out.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = weights.data() + r * cols;
        double sum = bias[r];
        for (std::size_t c = 0; c < cols; ++c) sum += row[c] * in[c];
        out[r] = sum;
    }
}

void check_finite(const Vector& values, std::size_t layer)
{
    for (double v : values)
        if (!std::isfinite(v)) throw NumericalError("non-finite activation in forward pass", layer);
}

double activate(Activation activation, double z)
{
    return activation == Activation::relu ? std::max(z, 0.0) : std::tanh(z);
}

// Derivative expressed through the pre-activation z and activation h.
double activate_derivative(Activation activation, double z, double h)
{
    if (activation == Activation::relu) return z > 0.0 ? 1.0 : 0.0;
    return 1.0 - h * h;
}

Trace run_forward(const ModelParams& params, std::span<const double> x)
{
    if (x.size() != params.input_dim())
        throw ConfigError("input has " + std::to_string(x.size()) + " features, network expects " +
                          std::to_string(params.input_dim()));
    const std::size_t layers = params.layer_count();
    Trace trace;
    trace.inputs.reserve(layers);
    trace.pre_activation.resize(layers);
    trace.inputs.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        Vector& z = trace.pre_activation[l];
        affine(params.weights(l), params.bias(l), trace.inputs[l], z);
        check_finite(z, l);
        if (l + 1 < layers) {
            Vector h(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) h[i] = activate(params.activation(), z[i]);
            trace.inputs.push_back(std::move(h));
        }
    }
    return trace;
}

// d divergence(target, softmax(z)) / dz
void accumulate_logit_grad(Divergence kind, std::span<const double> target, std::span<const double> probs,
                           double scale, Vector& dz)
{
    const std::size_t n = probs.size();
    if (kind == Divergence::cross_entropy) {
        // Entries whose probability sits under the floor have a constant log term.
        double mass = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (probs[i] >= kProbFloor) mass += target[i];
        for (std::size_t j = 0; j < n; ++j) {
            const double own = probs[j] >= kProbFloor ? target[j] : 0.0;
            dz[j] += scale * (probs[j] * mass - own);
        }
        return;
    }
    Vector dp(n);
    double inner = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dp[i] = 2.0 * (probs[i] - target[i]) / static_cast<double>(n);
        inner += dp[i] * probs[i];
    }
    for (std::size_t j = 0; j < n; ++j) dz[j] += scale * probs[j] * (dp[j] - inner);
}

} // namespace

ForwardOutput forward(const ModelParams& params, std::span<const double> x)
{
    Trace trace = run_forward(params, x);
    ForwardOutput out;
    out.features = std::move(trace.inputs.back());
    out.logits = std::move(trace.pre_activation.back());
    out.probs = softmax(out.logits);
    return out;
}

std::size_t predict(const ModelParams& params, std::span<const double> x)
{
    const ForwardOutput out = forward(params, x);
    return static_cast<std::size_t>(std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin());
}

GradResult grad(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec)
{
    if (batch.empty()) throw ConfigError("grad: empty batch");
    const std::size_t term_count = spec.terms.size();
    const std::size_t classes = params.class_count();

    std::vector<std::size_t> counts(term_count, 0);
    for (const Example& ex : batch) {
        if (ex.targets.size() > term_count) throw ConfigError("grad: example has more targets than loss terms");
        for (std::size_t t = 0; t < ex.targets.size(); ++t) {
            if (!ex.targets[t]) continue;
            if (ex.targets[t]->size() != classes) throw ConfigError("grad: target length differs from class count");
            ++counts[t];
        }
    }

    GradResult result;
    result.gradient = params.zeros_like();
    result.term_values.assign(term_count, 0.0);
    const std::size_t layers = params.layer_count();

    Vector dz(classes);
    for (const Example& ex : batch) {
        Trace trace = run_forward(params, ex.x);
        const Vector probs = softmax(trace.pre_activation.back());

        std::fill(dz.begin(), dz.end(), 0.0);
        bool active = false;
        for (std::size_t t = 0; t < ex.targets.size(); ++t) {
            if (!ex.targets[t]) continue;
            const LossTerm& term = spec.terms[t];
            const double inv_count = 1.0 / static_cast<double>(counts[t]);
            result.term_values[t] += divergence(term.divergence, *ex.targets[t], probs) * inv_count;
            if (term.weight == 0.0) continue;
            accumulate_logit_grad(term.divergence, *ex.targets[t], probs, term.weight * inv_count, dz);
            active = true;
        }
        if (!active) continue;

        Vector delta = dz;
        for (std::size_t l = layers; l-- > 0;) {
            const Vector& in = trace.inputs[l];
            auto gw = result.gradient.weights(l);
            auto gb = result.gradient.bias(l);
            const std::size_t cols = in.size();
            for (std::size_t r = 0; r < delta.size(); ++r) {
                gb[r] += delta[r];
                double* row = gw.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) row[c] += delta[r] * in[c];
            }
            if (l == 0) break;
            const auto w = params.weights(l);
            const Vector& z_prev = trace.pre_activation[l - 1];
            Vector next(cols, 0.0);
            for (std::size_t r = 0; r < delta.size(); ++r) {
                const double* row = w.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) next[c] += row[c] * delta[r];
            }
            for (std::size_t c = 0; c < cols; ++c)
                next[c] *= activate_derivative(params.activation(), z_prev[c], in[c]);
            delta = std::move(next);
        }
    }

    for (std::size_t t = 0; t < term_count; ++t) result.loss += spec.terms[t].weight * result.term_values[t];
    return result;
}

void sgd_step(ModelParams& params, const Gradient& gradient, double learning_rate, MomentumState& state,
              double weight_decay)
{
    require_same_shape(params, gradient, "sgd_step");
    if (!(learning_rate > 0.0)) throw ConfigError("sgd_step: learning rate must be positive");
    if (!(state.momentum >= 0.0 && state.momentum < 1.0)) throw ConfigError("sgd_step: momentum must be in [0, 1)");
    if (state.velocity.size() == 0) state.velocity = params.zeros_like();
    require_same_shape(params, state.velocity, "sgd_step (momentum state)");

    auto p = params.values();
    auto g = gradient.values();
    auto v = state.velocity.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = state.momentum * v[i] + (g[i] + weight_decay * p[i]);
        p[i] -= learning_rate * v[i];
    }
}

// --- checkpoints ----------------------------------------------------------

namespace {

std::uint64_t to_little_endian(std::uint64_t bits)
{
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t swapped = 0;
        for (int i = 0; i < 8; ++i) swapped |= ((bits >> (8 * i)) & 0xffu) << (8 * (7 - i));
        return swapped;
    }
    return bits;
}

} // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params)
{
    out << kCheckpointMagic << '\n';
    out << "dims";
    for (std::size_t d : params.dims()) out << ' ' << d;
    out << '\n' << "activation " << to_string(params.activation()) << '\n';
    for (double v : params.values()) {
        const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
        char bytes[8];
        std::memcpy(bytes, &bits, 8);
        out.write(bytes, 8);
    }
    if (!out) throw ConfigError("failed to write checkpoint");
}

ModelParams read_checkpoint(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic)
        throw ConfigError("not a checkpoint (expected header '" + std::string(kCheckpointMagic) + "')");

    if (!std::getline(in, line)) throw ConfigError("checkpoint truncated before dims");
    std::istringstream dims_line(line);
    std::string keyword;
    dims_line >> keyword;
    if (keyword != "dims") throw ConfigError("checkpoint: expected dims line");
    std::vector<std::size_t> dims;
    for (std::size_t d; dims_line >> d;) dims.push_back(d);

    if (!std::getline(in, line) || line.rfind("activation ", 0) != 0)
        throw ConfigError("checkpoint: expected activation line");
    ModelParams params(std::move(dims), parse_activation(line.substr(11)));

    for (double& v : params.values()) {
        char bytes[8];
        if (!in.read(bytes, 8)) throw ConfigError("checkpoint truncated in parameter block");
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes, 8);
        v = std::bit_cast<double>(to_little_endian(bits));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ConfigError("checkpoint has trailing bytes");
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    return read_checkpoint(in);
}

} // namespace snowball
