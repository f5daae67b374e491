#pragma once

// Map-based Bayesian optimization for adaptation. The Gaussian process runs
// over the occupied cells of an archive with the stored performance as prior
// mean:
//
//   mu_t(x)      = P(x) + k^T K^-1 (P_obs - P(chi))
//   sigma_t^2(x) = k(x, x) - k^T K^-1 k,      K = [k(chi_i, chi_j)] + s^2 I
//
// and the next trial is the occupied cell maximizing mu_t + kappa sigma_t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "archive.hpp"
#include "errors.hpp"

namespace mmprl {

enum class MaternOrder : std::uint8_t { half, three_halves, five_halves };

struct GpConfig {
    double rho = 0.3;
    double noise_variance = 0.001;
    double kappa = 0.05;
    double alpha = 0.95;
    MaternOrder order = MaternOrder::five_halves;
    std::size_t jitter_retries = 3;

    void validate() const {
        if (!(rho > 0.0)) throw ConfigError("mboa.rho must be positive");
        if (!(noise_variance >= 0.0)) throw ConfigError("mboa.noise_variance must be non-negative");
        if (!(kappa >= 0.0)) throw ConfigError("mboa.kappa must be non-negative");
        if (!(alpha > 0.0)) throw ConfigError("mboa.alpha must be positive");
    }
};

/// Matern covariance as a function of distance, unit signal variance.
inline double matern(double d, double rho, MaternOrder order = MaternOrder::five_halves) {
    if (!(rho > 0.0)) throw ConfigError("Matern length-scale must be positive");
    const double r = d / rho;
    switch (order) {
    case MaternOrder::half: return std::exp(-r);
    case MaternOrder::three_halves: {
        const double a = std::sqrt(3.0) * r;
        return (1.0 + a) * std::exp(-a);
    }
    case MaternOrder::five_halves: break;
    }
    const double a = std::sqrt(5.0) * r;
    return (1.0 + a + 5.0 * r * r / 3.0) * std::exp(-a);
}

/// Euclidean distance between descriptors after mapping coordinates to [0, 1].
inline double normalized_distance(const Descriptor& x, const Descriptor& y, std::size_t bins) {
    if (x.size() != y.size()) throw ShapeError("descriptor dimensions differ");
    const double scale = bins > 1 ? 1.0 / static_cast<double>(bins - 1) : 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = (static_cast<double>(x.coords[i]) - static_cast<double>(y.coords[i])) * scale;
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

inline double matern_kernel(const Descriptor& x, const Descriptor& y, std::size_t bins, double rho,
                            MaternOrder order = MaternOrder::five_halves) {
    return matern(normalized_distance(x, y, bins), rho, order);
}

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

class GpPosterior {
public:
    struct Observation {
        std::size_t cell = 0; // index into cells()
        double performance = 0.0;
    };

    GpPosterior(const Archive& archive, GpConfig cfg) : cfg_(cfg), bins_(archive.dims().bins) {
        cfg_.validate();
        cells_ = archive.cells();
        if (cells_.empty()) throw EmptyArchiveError("adaptation needs a non-empty archive");
        std::sort(cells_.begin(), cells_.end(),
                  [](const ArchiveCell& a, const ArchiveCell& b) { return a.descriptor < b.descriptor; });
        const std::size_t n = cells_.size();
        const std::size_t d = archive.dims().dims;
        coords_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        prior_.resize(static_cast<Eigen::Index>(n));
        const double scale = bins_ > 1 ? 1.0 / static_cast<double>(bins_ - 1) : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                coords_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    static_cast<double>(cells_[i].descriptor.coords[j]) * scale;
            }
            prior_(static_cast<Eigen::Index>(i)) = cells_[i].performance;
        }
        cross_.resize(static_cast<Eigen::Index>(n), 0);
        refresh();
    }

    const GpConfig& config() const noexcept { return cfg_; }
    /// Occupied cells in lexicographic coordinate order.
    const std::vector<ArchiveCell>& cells() const noexcept { return cells_; }
    const std::vector<Observation>& observations() const noexcept { return obs_; }
    /// Noise variance actually used after any jitter escalation.
    double effective_noise() const noexcept { return effective_noise_; }

    std::optional<std::size_t> index_of(const Descriptor& x) const {
        auto it = std::lower_bound(cells_.begin(), cells_.end(), x,
                                   [](const ArchiveCell& c, const Descriptor& d) { return c.descriptor < d; });
        if (it == cells_.end() || it->descriptor != x) return std::nullopt;
        return static_cast<std::size_t>(it - cells_.begin());
    }

    void add_observation(std::size_t cell, double performance) {
        if (cell >= cells_.size()) throw DomainError("observation cell index out of range");
        if (!std::isfinite(performance)) throw NumericError("non-finite observation");
        obs_.push_back({cell, performance});
        const auto n = static_cast<Eigen::Index>(cells_.size());
        const auto t = cross_.cols();
        cross_.conservativeResize(n, t + 1);
        const auto ref = coords_.row(static_cast<Eigen::Index>(cell));
        for (Eigen::Index i = 0; i < n; ++i) {
            cross_(i, t) = matern((coords_.row(i) - ref).norm(), cfg_.rho, cfg_.order);
        }
        refresh();
    }

    void add_observation(const Descriptor& x, double performance) {
        auto idx = index_of(x);
        if (!idx) throw DomainError("observed coordinate " + x.to_string() + " is not occupied");
        add_observation(*idx, performance);
    }

    Moments posterior_at(std::size_t cell) const {
        const auto i = static_cast<Eigen::Index>(cell);
        Moments m{prior_(i), 1.0};
        if (obs_.empty()) return m;
        const Eigen::VectorXd k = cross_.row(i).transpose();
        m.mean += k.dot(weights_);
        const Eigen::VectorXd v = llt_.matrixL().solve(k);
        m.variance = std::max(0.0, 1.0 - v.squaredNorm());
        return m;
    }

    Moments posterior(const Descriptor& x) const {
        auto idx = index_of(x);
        if (!idx) throw DomainError("posterior requested at unoccupied coordinate " + x.to_string());
        return posterior_at(*idx);
    }

    /// Moments of every cell, in cells() order.
    std::vector<Moments> posterior_all() const {
        const auto n = static_cast<Eigen::Index>(cells_.size());
        std::vector<Moments> out(cells_.size());
        if (obs_.empty()) {
            for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {prior_(i), 1.0};
            return out;
        }
        const Eigen::VectorXd mean = prior_ + cross_ * weights_;
        const Eigen::MatrixXd v = llt_.matrixL().solve(cross_.transpose());
        const Eigen::VectorXd reduction = v.colwise().squaredNorm().transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(i)] = {mean(i), std::max(0.0, 1.0 - reduction(i))};
        }
        return out;
    }

    double ucb(const Moments& m) const { return m.mean + cfg_.kappa * std::sqrt(m.variance); }

    /// Argmax of the UCB over occupied cells not in `excluded`; ties go to
    /// the lexicographically smallest coordinate.
    std::optional<std::size_t> select_next_index(const std::set<std::size_t>& excluded = {}) const {
        const auto all = posterior_all();
        std::optional<std::size_t> best;
        double best_value = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (excluded.contains(i)) continue;
            const double u = ucb(all[i]);
            if (!best || u > best_value) {
                best = i;
                best_value = u;
            }
        }
        return best;
    }

    Descriptor select_next() const {
        auto idx = select_next_index();
        return cells_[*idx].descriptor;
    }

private:
    void refresh() {
        const auto t = static_cast<Eigen::Index>(obs_.size());
        effective_noise_ = cfg_.noise_variance;
        if (t == 0) {
            weights_.resize(0);
            return;
        }
        Eigen::MatrixXd gram(t, t);
        Eigen::VectorXd residual(t);
        for (Eigen::Index a = 0; a < t; ++a) {
            const auto ca = static_cast<Eigen::Index>(obs_[static_cast<std::size_t>(a)].cell);
            for (Eigen::Index b = 0; b < t; ++b) gram(a, b) = cross_(ca, b);
            residual(a) = obs_[static_cast<std::size_t>(a)].performance - prior_(ca);
        }
        gram = 0.5 * (gram + gram.transpose()).eval();
        double noise = cfg_.noise_variance;
        for (std::size_t attempt = 0;; ++attempt) {
            Eigen::MatrixXd k = gram;
            k.diagonal().array() += noise;
            llt_.compute(k);
            if (llt_.info() == Eigen::Success) break;
            if (attempt >= cfg_.jitter_retries) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
                const auto& ev = eig.eigenvalues();
                std::ostringstream msg;
                msg << "kernel matrix is not positive definite after " << attempt << " jitter escalations "
                    << "(condition number " << (ev.maxCoeff() / std::abs(ev.minCoeff())) << ")";
                throw NumericError(msg.str());
            }
            noise = noise > 0.0 ? noise * 10.0 : 1e-10;
        }
        effective_noise_ = noise;
        weights_ = llt_.solve(residual);
    }

    GpConfig cfg_;
    std::size_t bins_ = 5;
    std::vector<ArchiveCell> cells_;
    Eigen::MatrixXd coords_;
    Eigen::VectorXd prior_;
    Eigen::MatrixXd cross_; // k(cell_i, chi_j)
    std::vector<Observation> obs_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd weights_; // K^-1 (P_obs - P(chi))
    double effective_noise_ = 0.0;
};

inline Moments posterior(const GpPosterior& gp, const Descriptor& x) { return gp.posterior(x); }
inline Descriptor select_next(const GpPosterior& gp) { return gp.select_next(); }

/// Performance of a cell's policy under the changed conditions. May throw.
using Evaluator = std::function<double(const ArchiveCell&)>;

struct AdaptTraceRow {
    std::size_t trial = 0;
    Descriptor coords;
    double observed = 0.0; // -inf marks a failed evaluation
    double posterior_max = 0.0;
    double ucb_max = 0.0;
    bool stopped = false;
};

enum class StopReason : std::uint8_t { alpha_reached, max_trials, exhausted };

struct AdaptResult {
    std::optional<ArchiveCell> best; // best observed cell
    double best_performance = -std::numeric_limits<double>::infinity();
    std::size_t trials = 0;
    StopReason reason = StopReason::max_trials;
    std::vector<AdaptTraceRow> trace;
};

/// Trial loop: evaluate the UCB argmax, condition on it, and stop once the
/// best observation reaches alpha times the largest UCB over the map, or
/// after max_trials evaluations. A failed evaluation is logged with -inf,
/// kept out of the GP, and its cell is not proposed again.
inline AdaptResult adapt(const Archive& archive, const Evaluator& evaluate, const GpConfig& cfg,
                         std::size_t max_trials) {
    GpPosterior gp(archive, cfg);
    AdaptResult res;
    std::set<std::size_t> failed;
    for (std::size_t trial = 1; trial <= max_trials; ++trial) {
        const auto next = gp.select_next_index(failed);
        if (!next) {
            res.reason = StopReason::exhausted;
            break;
        }
        const ArchiveCell& cell = gp.cells()[*next];
        double observed = -std::numeric_limits<double>::infinity();
        try {
            observed = evaluate(cell);
        } catch (const std::exception&) {
            observed = -std::numeric_limits<double>::infinity();
        }
        if (std::isfinite(observed)) {
            gp.add_observation(*next, observed);
            if (!res.best || observed > res.best_performance) {
                res.best = cell;
                res.best_performance = observed;
            }
        } else {
            observed = -std::numeric_limits<double>::infinity();
            failed.insert(*next);
        }

        AdaptTraceRow row;
        row.trial = trial;
        row.coords = cell.descriptor;
        row.observed = observed;
        row.posterior_max = -std::numeric_limits<double>::infinity();
        row.ucb_max = -std::numeric_limits<double>::infinity();
        const auto all = gp.posterior_all();
        for (const auto& m : all) {
            row.posterior_max = std::max(row.posterior_max, m.mean);
            row.ucb_max = std::max(row.ucb_max, gp.ucb(m));
        }
        row.stopped = res.best.has_value() && res.best_performance >= cfg.alpha * row.ucb_max;
        res.trace.push_back(row);
        res.trials = trial;
        if (row.stopped) {
            res.reason = StopReason::alpha_reached;
            break;
        }
    }
    return res;
}

inline void write_adapt_trace_header(std::ostream& os) {
    os << "trial,coords,observed_perf,posterior_max,ucb_max,stopped\n";
}

inline void write_adapt_trace_rows(std::ostream& os, const AdaptResult& r) {
    std::ostringstream ss;
    ss.precision(12);
    for (const auto& row : r.trace) {
        ss.str({});
        ss << row.trial << ',' << row.coords.to_string(' ') << ',' << row.observed << ',' << row.posterior_max << ','
           << row.ucb_max << ',' << (row.stopped ? 1 : 0) << '\n';
        os << ss.str();
    }
}

} // namespace mmprl
