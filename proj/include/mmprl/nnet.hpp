#pragma once

// Small fully-connected networks with explicit flat parameter vectors and
// exact reverse-mode gradients, plus an Adam optimizer.
//
// Parameter layout of an Mlp, layer by layer: the weight matrix in row-major
// (out x in) order followed by the bias vector (out).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"

namespace mmprl {

using Rng = std::mt19937_64;

enum class Activation : std::uint8_t { identity, relu, tanh };

namespace detail {

inline double activate(Activation a, double x) {
    switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: break;
    }
    return x;
}

// Derivative expressed through the post-activation value.
inline double activation_slope(Activation a, double y) {
    switch (a) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::identity: break;
    }
    return 1.0;
}

// Kernels with a summation order fixed by the code, not by where the
// operands happen to be aligned, so results are reproducible bit for bit.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline void check_size(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
        throw ShapeError(std::string(what) + ": expected length " + std::to_string(want) +
                         ", got " + std::to_string(got));
    }
}

} // namespace detail

/// Activations recorded by a forward pass; reused across calls to avoid
/// reallocating.
struct Tape {
    std::vector<std::vector<double>> activations; // [0] is the input
};

/// Topology of a multilayer perceptron. Holds no parameters.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<std::size_t> layer_sizes, Activation hidden, Activation output)
        : sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
        if (sizes_.size() < 2) throw ConfigError("an Mlp needs at least two layer sizes");
        for (auto s : sizes_) {
            if (s == 0) throw ConfigError("layer sizes must be positive");
        }
        offsets_.reserve(sizes_.size());
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            offsets_.push_back(off);
            off += (sizes_[l] + 1) * sizes_[l + 1];
        }
        offsets_.push_back(off);
    }

    static std::size_t param_count(std::span<const std::size_t> sizes) {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += (sizes[l] + 1) * sizes[l + 1];
        return n;
    }

    const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
    std::size_t num_layers() const noexcept { return sizes_.empty() ? 0 : sizes_.size() - 1; }
    std::size_t input_size() const noexcept { return sizes_.front(); }
    std::size_t output_size() const noexcept { return sizes_.back(); }
    std::size_t param_count() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }
    Activation hidden_activation() const noexcept { return hidden_; }
    Activation output_activation() const noexcept { return output_; }

    /// Uniform in +-1/sqrt(fan_in), weights and biases alike.
    void init_uniform(std::span<double> params, Rng& rng) const {
        detail::check_size(params.size(), param_count(), "parameter vector");
        for (std::size_t l = 0; l < num_layers(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (std::size_t k = offsets_[l]; k < offsets_[l + 1]; ++k) params[k] = dist(rng);
        }
    }

    void forward(std::span<const double> params, std::span<const double> input, Tape& tape) const {
        detail::check_size(params.size(), param_count(), "parameter vector");
        detail::check_size(input.size(), input_size(), "network input");
        tape.activations.resize(sizes_.size());
        tape.activations[0].assign(input.begin(), input.end());
        for (std::size_t l = 0; l < num_layers(); ++l) {
            const std::size_t n_in = sizes_[l];
            const std::size_t n_out = sizes_[l + 1];
            const double* w = params.data() + offsets_[l];
            const double* b = w + n_in * n_out;
            const auto& x = tape.activations[l];
            auto& y = tape.activations[l + 1];
            y.resize(n_out);
            const Activation act = (l + 1 == num_layers()) ? output_ : hidden_;
            for (std::size_t o = 0; o < n_out; ++o) {
                y[o] = detail::activate(act, b[o] + detail::dot(w + o * n_in, x.data(), n_in));
            }
        }
    }

    std::vector<double> forward(std::span<const double> params, std::span<const double> input) const {
        Tape tape;
        forward(params, input, tape);
        return std::move(tape.activations.back());
    }

    /// Gradients of <output, output_grad> given a tape from forward(). Either
    /// destination may be empty to skip that gradient; param_grad is
    /// overwritten, not accumulated.
    void backward(std::span<const double> params, const Tape& tape, std::span<const double> output_grad,
                  std::span<double> param_grad, std::span<double> input_grad) const {
        detail::check_size(params.size(), param_count(), "parameter vector");
        detail::check_size(output_grad.size(), output_size(), "output gradient");
        if (tape.activations.size() != sizes_.size()) throw ShapeError("tape does not match network");
        const bool want_params = !param_grad.empty();
        if (want_params) detail::check_size(param_grad.size(), param_count(), "parameter gradient");
        if (!input_grad.empty()) detail::check_size(input_grad.size(), input_size(), "input gradient");

        std::vector<double> delta(output_grad.begin(), output_grad.end());
        std::vector<double> prev;
        for (std::size_t l = num_layers(); l-- > 0;) {
            const std::size_t n_in = sizes_[l];
            const std::size_t n_out = sizes_[l + 1];
            const Activation act = (l + 1 == num_layers()) ? output_ : hidden_;
            const auto& y = tape.activations[l + 1];
            for (std::size_t o = 0; o < n_out; ++o) delta[o] *= detail::activation_slope(act, y[o]);

            const double* w = params.data() + offsets_[l];
            const auto& x = tape.activations[l];
            if (want_params) {
                double* gw = param_grad.data() + offsets_[l];
                for (std::size_t o = 0; o < n_out; ++o) {
                    double* row = gw + o * n_in;
                    for (std::size_t i = 0; i < n_in; ++i) row[i] = delta[o] * x[i];
                }
                std::copy(delta.begin(), delta.begin() + static_cast<std::ptrdiff_t>(n_out), gw + n_in * n_out);
            }
            if (l == 0 && input_grad.empty()) break;
            prev.assign(n_in, 0.0);
            for (std::size_t o = 0; o < n_out; ++o) detail::axpy(delta[o], w + o * n_in, prev.data(), n_in);
            if (l == 0) {
                std::copy(prev.begin(), prev.end(), input_grad.begin());
            } else {
                delta.swap(prev);
            }
        }
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
    Activation hidden_ = Activation::relu;
    Activation output_ = Activation::tanh;
};

struct Gradients {
    std::vector<double> params;
    std::vector<double> input;
};

/// An Mlp together with its parameter vector; used for the actor and for
/// policies stored in the archive.
class ParamNet {
public:
    ParamNet() = default;
    ParamNet(std::vector<std::size_t> layer_sizes, Activation hidden = Activation::relu,
             Activation output = Activation::tanh)
        : mlp_(std::move(layer_sizes), hidden, output), params_(mlp_.param_count(), 0.0) {}

    const Mlp& topology() const noexcept { return mlp_; }
    const std::vector<std::size_t>& layer_sizes() const noexcept { return mlp_.layer_sizes(); }
    std::size_t input_size() const noexcept { return mlp_.input_size(); }
    std::size_t output_size() const noexcept { return mlp_.output_size(); }

    std::span<double> params() noexcept { return params_; }
    std::span<const double> params() const noexcept { return params_; }
    void set_params(std::span<const double> p) {
        detail::check_size(p.size(), params_.size(), "parameter vector");
        std::copy(p.begin(), p.end(), params_.begin());
    }

    void init_uniform(Rng& rng) { mlp_.init_uniform(params_, rng); }

    std::vector<double> forward(std::span<const double> input) const { return mlp_.forward(params_, input); }
    void forward(std::span<const double> input, Tape& tape) const { mlp_.forward(params_, input, tape); }

    Gradients backward(std::span<const double> input, std::span<const double> output_grad) const {
        Tape tape;
        mlp_.forward(params_, input, tape);
        Gradients g{std::vector<double>(params_.size()), std::vector<double>(input.size())};
        mlp_.backward(params_, tape, output_grad, g.params, g.input);
        return g;
    }

private:
    Mlp mlp_;
    std::vector<double> params_;
};

/// Two-branch critic Q(s, a): observation and action each pass through one
/// rectified layer, the features are concatenated [obs, action] and fed to a
/// trunk with scalar identity output.
///
/// Its layer-size list, as written in payload headers, is
/// {obs_dim, action_dim, obs_branch, action_branch, trunk_hidden..., 1}.
class CriticNet {
public:
    struct Tape {
        mmprl::Tape obs;
        mmprl::Tape action;
        mmprl::Tape trunk;
        std::vector<double> joined;
    };

    CriticNet() = default;
    CriticNet(std::size_t obs_dim, std::size_t action_dim, std::size_t obs_branch, std::size_t action_branch,
              const std::vector<std::size_t>& trunk_hidden)
        : obs_(std::vector<std::size_t>{obs_dim, obs_branch}, Activation::relu, Activation::relu),
          action_(std::vector<std::size_t>{action_dim, action_branch}, Activation::relu, Activation::relu) {
        std::vector<std::size_t> trunk{obs_branch + action_branch};
        trunk.insert(trunk.end(), trunk_hidden.begin(), trunk_hidden.end());
        trunk.push_back(1);
        trunk_ = Mlp(std::move(trunk), Activation::relu, Activation::identity);
        params_.assign(obs_.param_count() + action_.param_count() + trunk_.param_count(), 0.0);
    }

    static CriticNet from_layer_sizes(std::span<const std::size_t> sizes) {
        if (sizes.size() < 5 || sizes.back() != 1) throw ConfigError("malformed critic layer-size list");
        std::vector<std::size_t> hidden(sizes.begin() + 4, sizes.end() - 1);
        return CriticNet(sizes[0], sizes[1], sizes[2], sizes[3], hidden);
    }

    std::vector<std::size_t> layer_sizes() const {
        std::vector<std::size_t> out{obs_.input_size(), action_.input_size(), obs_.output_size(),
                                     action_.output_size()};
        const auto& t = trunk_.layer_sizes();
        out.insert(out.end(), t.begin() + 1, t.end());
        return out;
    }

    std::size_t obs_size() const noexcept { return obs_.input_size(); }
    std::size_t action_size() const noexcept { return action_.input_size(); }
    std::size_t param_count() const noexcept { return params_.size(); }

    std::span<double> params() noexcept { return params_; }
    std::span<const double> params() const noexcept { return params_; }
    void set_params(std::span<const double> p) {
        detail::check_size(p.size(), params_.size(), "critic parameter vector");
        std::copy(p.begin(), p.end(), params_.begin());
    }

    void init_uniform(Rng& rng) {
        obs_.init_uniform(obs_params(params()), rng);
        action_.init_uniform(action_params(params()), rng);
        trunk_.init_uniform(trunk_params(params()), rng);
    }

    double value(std::span<const double> obs, std::span<const double> action, Tape& tape) const {
        obs_.forward(obs_params(params()), obs, tape.obs);
        action_.forward(action_params(params()), action, tape.action);
        const auto& fo = tape.obs.activations.back();
        const auto& fa = tape.action.activations.back();
        tape.joined.assign(fo.begin(), fo.end());
        tape.joined.insert(tape.joined.end(), fa.begin(), fa.end());
        trunk_.forward(trunk_params(params()), tape.joined, tape.trunk);
        return tape.trunk.activations.back()[0];
    }

    double value(std::span<const double> obs, std::span<const double> action) const {
        Tape tape;
        return value(obs, action, tape);
    }

    /// Gradients of out_grad * Q. Empty destinations are skipped.
    void backward(const Tape& tape, double out_grad, std::span<double> param_grad, std::span<double> obs_grad,
                  std::span<double> action_grad) const {
        const bool want_params = !param_grad.empty();
        if (want_params) detail::check_size(param_grad.size(), params_.size(), "critic parameter gradient");
        std::vector<double> joined_grad(tape.joined.size());
        const double og[1] = {out_grad};
        trunk_.backward(trunk_params(params()), tape.trunk, og,
                        want_params ? trunk_params(param_grad) : std::span<double>{}, joined_grad);
        const std::size_t n_obs = obs_.output_size();
        const std::span<const double> g_obs(joined_grad.data(), n_obs);
        const std::span<const double> g_act(joined_grad.data() + n_obs, action_.output_size());
        if (want_params || !obs_grad.empty()) {
            obs_.backward(obs_params(params()), tape.obs, g_obs,
                          want_params ? obs_params(param_grad) : std::span<double>{}, obs_grad);
        }
        if (want_params || !action_grad.empty()) {
            action_.backward(action_params(params()), tape.action, g_act,
                             want_params ? action_params(param_grad) : std::span<double>{}, action_grad);
        }
    }

private:
    template <typename T>
    std::span<T> obs_params(std::span<T> all) const {
        return all.subspan(0, obs_.param_count());
    }
    template <typename T>
    std::span<T> action_params(std::span<T> all) const {
        return all.subspan(obs_.param_count(), action_.param_count());
    }
    template <typename T>
    std::span<T> trunk_params(std::span<T> all) const {
        return all.subspan(obs_.param_count() + action_.param_count(), trunk_.param_count());
    }

    Mlp obs_;
    Mlp action_;
    Mlp trunk_;
    std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n, AdamConfig cfg = {}) : config(cfg), m(n, 0.0), v(n, 0.0) {}

    void reset() {
        std::fill(m.begin(), m.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        t = 0;
    }
};

/// One bias-corrected Adam descent step (params -= lr * m_hat / (sqrt(v_hat) + eps)).
inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state) {
    detail::check_size(grad.size(), params.size(), "gradient");
    detail::check_size(state.m.size(), params.size(), "Adam moment");
    for (double gi : grad) {
        if (!std::isfinite(gi)) throw NumericError("non-finite gradient passed to Adam");
    }
    const auto& c = state.config;
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double corr1 = 1.0 - std::pow(c.beta1, t);
    const double root_corr2 = std::sqrt(1.0 - std::pow(c.beta2, t));
    // lr * m_hat / (sqrt(v_hat) + eps) with both corrections folded into scalars.
    const double step = c.learning_rate * root_corr2 / corr1;
    const double eps = c.epsilon * root_corr2;
    const double b1 = c.beta1, b2 = c.beta2;
    double* m = state.m.data();
    double* v = state.v.data();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * (g * g);
        params[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
    }
}

// ---------------------------------------------------------------------------
// Parameter payload: u32 count, u32 layer sizes, then little-endian f64s.

inline void write_payload(std::ostream& os, std::span<const std::size_t> sizes, std::span<const double> params) {
    binary::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(sizes.size()));
    for (auto s : sizes) binary::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(s));
    binary::write_f64s(os, params);
}

struct Payload {
    std::vector<std::size_t> sizes;
    std::vector<double> params;
};

/// Reads a payload whose parameter count is implied by `expected_params`.
/// Returns false on truncation.
inline bool read_payload(std::istream& is, std::size_t expected_params, Payload& out) {
    std::uint32_t n = 0;
    if (!binary::read_uint(is, n)) return false;
    if (n > 4096) return false;
    out.sizes.resize(n);
    for (auto& s : out.sizes) {
        std::uint32_t v = 0;
        if (!binary::read_uint(is, v)) return false;
        s = v;
    }
    out.params.resize(expected_params);
    for (auto& p : out.params) {
        if (!binary::read_f64(is, p)) return false;
    }
    return true;
}

} // namespace mmprl
