#pragma once

// Planar multi-legged crawler. Each leg receives a (lift, push) command in
// [-1, 1]; a leg is in stance iff lift <= 0 and stance legs convert positive
// push into forward progress. Damage scales individual legs' push gain,
// delays observations, makes terrain harder, or tilts the ground.
//
// Observation layout: [contacts (n_legs) | previous action (2 n_legs) |
// velocity / step_gain | terrain difficulty under the body].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace mmprl {

struct EnvSpec {
    std::size_t n_legs = 6;
    double step_gain = 0.05; // metres per step with every leg pushing fully
    std::size_t max_steps = 1000;
    std::size_t fall_min_stance = 2;
    std::size_t fall_patience = 3;
    double survival_reward = 0.1;
    double w_contact = 0.03;
    double w_torque = 0.0005; // kept for completeness; the kinematic model has no torques
    double w_action = 0.05;
    double control_low = -1.0;
    double control_high = 1.0;

    std::size_t action_dim() const noexcept { return 2 * n_legs; }
    std::size_t obs_dim() const noexcept { return 3 * n_legs + 2; }
    double control_range() const noexcept { return control_high - control_low; }

    void validate() const {
        if (n_legs < 2) throw ConfigError("env.n_legs must be at least 2");
        if (!(step_gain > 0.0)) throw ConfigError("env.step_gain must be positive");
        if (max_steps == 0) throw ConfigError("env.max_steps must be positive");
        if (fall_patience == 0) throw ConfigError("env.fall_patience must be positive");
        if (!(control_high > control_low)) throw ConfigError("env control range is empty");
    }
};

struct TerrainSegment {
    double start_x = 0.0;
    double difficulty = 0.0; // in [0, 1]; progress is multiplied by (1 - difficulty)
};

struct DamageConfig {
    std::map<std::size_t, double> leg_gain; // absent legs keep gain 1
    std::size_t obs_delay = 0;
    std::vector<TerrainSegment> terrain;
    // Seeded random terrain: when segment_length > 0 the segments are drawn
    // at reset with difficulty ~ U[0, max_difficulty].
    double random_segment_length = 0.0;
    double random_max_difficulty = 0.0;
    double gravity_slope = 0.0;

    double toe_loss_gain = 0.3; // gain of a leg listed without an explicit one

    bool intact() const noexcept {
        return leg_gain.empty() && obs_delay == 0 && terrain.empty() && random_segment_length <= 0.0 &&
               gravity_slope == 0.0;
    }

    void validate(const EnvSpec& spec) const {
        for (const auto& [leg, gain] : leg_gain) {
            if (leg >= spec.n_legs) {
                throw ConfigError("damage: leg index " + std::to_string(leg) + " out of range (n_legs = " +
                                  std::to_string(spec.n_legs) + ")");
            }
            if (gain < 0.0 || gain > 1.0) throw ConfigError("damage: leg gain must lie in [0, 1]");
        }
        if (obs_delay > spec.max_steps) throw ConfigError("damage: obs_delay exceeds the episode length");
        for (const auto& s : terrain) {
            if (s.difficulty < 0.0 || s.difficulty > 1.0) throw ConfigError("damage: terrain difficulty outside [0, 1]");
        }
        if (random_max_difficulty < 0.0 || random_max_difficulty > 1.0) {
            throw ConfigError("damage: random terrain difficulty outside [0, 1]");
        }
        if (gravity_slope < -1.0 || gravity_slope > 1.0) throw ConfigError("damage: gravity_slope outside [-1, 1]");
    }
};

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
    bool fell = false; // true terminal (as opposed to the step limit)
    double dx = 0.0;
    std::size_t stance_count = 0;
    double survival = 0.0;
    double action_sq_norm = 0.0;
    std::vector<bool> stance;
};

class Crawler {
public:
    Crawler(EnvSpec spec, DamageConfig damage) : spec_(std::move(spec)), damage_(std::move(damage)) {
        spec_.validate();
        damage_.validate(spec_);
        gains_.assign(spec_.n_legs, 1.0);
        for (const auto& [leg, gain] : damage_.leg_gain) gains_[leg] = gain;
    }

    const EnvSpec& spec() const noexcept { return spec_; }
    const DamageConfig& damage() const noexcept { return damage_; }
    std::size_t obs_dim() const noexcept { return spec_.obs_dim(); }
    std::size_t action_dim() const noexcept { return spec_.action_dim(); }
    std::size_t n_legs() const noexcept { return spec_.n_legs; }
    std::size_t max_steps() const noexcept { return spec_.max_steps; }

    double body_x() const noexcept { return body_x_; }
    std::size_t step_index() const noexcept { return step_; }
    const std::vector<bool>& stance() const noexcept { return stance_; }

    std::vector<double> reset(std::uint64_t seed) {
        body_x_ = 0.0;
        step_ = 0;
        low_stance_run_ = 0;
        last_dx_ = 0.0;
        stance_.assign(spec_.n_legs, true);
        last_action_.assign(spec_.action_dim(), 0.0);
        segments_ = damage_.terrain;
        if (damage_.random_segment_length > 0.0) {
            Rng rng(seed);
            std::uniform_real_distribution<double> dist(0.0, damage_.random_max_difficulty);
            const double reach = spec_.step_gain * static_cast<double>(spec_.max_steps) * 2.0;
            segments_.clear();
            for (double x = 0.0; x < reach; x += damage_.random_segment_length) segments_.push_back({x, dist(rng)});
        }
        std::stable_sort(segments_.begin(), segments_.end(),
                         [](const auto& a, const auto& b) { return a.start_x < b.start_x; });
        const auto obs = observe();
        delayed_.assign(damage_.obs_delay + 1, obs);
        return obs;
    }

    double difficulty_at(double x) const {
        double d = 0.0;
        for (const auto& s : segments_) {
            if (s.start_x <= x) d = s.difficulty;
            else break;
        }
        return d;
    }

    StepResult step(std::span<const double> action) {
        if (action.size() != spec_.action_dim()) {
            throw ShapeError("action: expected length " + std::to_string(spec_.action_dim()) + ", got " +
                             std::to_string(action.size()));
        }
        StepResult r;
        std::vector<double> a(action.begin(), action.end());
        for (double& v : a) {
            if (std::isnan(v)) throw NumericError("NaN action component");
            v = std::clamp(v, spec_.control_low, spec_.control_high);
        }

        const std::size_t n = spec_.n_legs;
        const double terrain_factor = 1.0 - difficulty_at(body_x_);
        double drive = 0.0;
        std::size_t stance_count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double lift = a[2 * i];
            const double push = a[2 * i + 1];
            stance_[i] = lift <= 0.0;
            if (stance_[i]) {
                ++stance_count;
                drive += std::max(0.0, push) * gains_[i];
            }
        }
        const double dx = spec_.step_gain / static_cast<double>(n) * drive * terrain_factor -
                          damage_.gravity_slope * spec_.step_gain;
        body_x_ += dx;
        last_dx_ = dx;
        last_action_ = a;
        ++step_;

        low_stance_run_ = stance_count < spec_.fall_min_stance ? low_stance_run_ + 1 : 0;
        const bool fell = low_stance_run_ >= spec_.fall_patience;

        double sq = 0.0;
        for (double v : a) sq += v * v;
        const double survival = fell ? 0.0 : spec_.survival_reward;

        r.dx = dx;
        r.stance_count = stance_count;
        r.survival = survival;
        r.action_sq_norm = sq;
        r.fell = fell;
        r.done = fell || step_ >= spec_.max_steps;
        r.reward = dx + survival + spec_.w_contact * static_cast<double>(stance_count) - spec_.w_action * sq;
        r.stance = stance_;

        delayed_.push_back(observe());
        delayed_.pop_front();
        r.observation = delayed_.front();
        return r;
    }

    /// Observation of the current state, ignoring the delay line.
    std::vector<double> observe() const {
        std::vector<double> obs;
        obs.reserve(spec_.obs_dim());
        for (bool s : stance_) obs.push_back(s ? 1.0 : 0.0);
        obs.insert(obs.end(), last_action_.begin(), last_action_.end());
        obs.push_back(last_dx_ / spec_.step_gain);
        obs.push_back(difficulty_at(body_x_));
        return obs;
    }

private:
    using Rng = std::mt19937_64;

    EnvSpec spec_;
    DamageConfig damage_;
    std::vector<double> gains_;
    std::vector<TerrainSegment> segments_;
    double body_x_ = 0.0;
    double last_dx_ = 0.0;
    std::size_t step_ = 0;
    std::size_t low_stance_run_ = 0;
    std::vector<bool> stance_;
    std::vector<double> last_action_;
    std::deque<std::vector<double>> delayed_;
};

/// Per-step record used for descriptors, CSV export and reward audits.
struct TraceStep {
    std::vector<double> action;
    std::vector<bool> stance;
    double dx = 0.0;
    double reward = 0.0;
    double survival = 0.0;
    std::size_t stance_count = 0;
    double action_sq_norm = 0.0;
};

using EpisodeTrace = std::vector<TraceStep>;

/// Fraction of steps each leg spent in stance.
inline std::vector<double> stance_fractions(const EpisodeTrace& trace, std::size_t n_legs) {
    if (trace.empty()) throw DomainError("stance fractions of an empty trace");
    std::vector<double> counts(n_legs, 0.0);
    for (const auto& s : trace) {
        if (s.stance.size() != n_legs) throw ShapeError("trace stance width does not match n_legs");
        for (std::size_t i = 0; i < n_legs; ++i) counts[i] += s.stance[i] ? 1.0 : 0.0;
    }
    for (double& c : counts) c /= static_cast<double>(trace.size());
    return counts;
}

inline void write_trace_csv(std::ostream& os, const EpisodeTrace& trace) {
    if (trace.empty()) {
        os << "step,dx,reward\n";
        return;
    }
    os << "step";
    for (std::size_t i = 0; i < trace.front().action.size(); ++i) os << ",a" << i;
    for (std::size_t i = 0; i < trace.front().stance.size(); ++i) os << ",stance" << i;
    os << ",dx,reward\n";
    for (std::size_t t = 0; t < trace.size(); ++t) {
        const auto& s = trace[t];
        os << t;
        for (double v : s.action) os << ',' << v;
        for (bool b : s.stance) os << ',' << (b ? 1 : 0);
        os << ',' << s.dx << ',' << s.reward << '\n';
    }
}

} // namespace mmprl
