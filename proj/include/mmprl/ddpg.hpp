#pragma once

// Deterministic actor-critic learner with a FIFO replay buffer, soft target
// networks and a staged exploration-noise schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "env.hpp"
#include "errors.hpp"
#include "nnet.hpp"

namespace mmprl {

struct Transition {
    std::vector<double> s;
    std::vector<double> a;
    double r = 0.0;
    std::vector<double> s_next;
    bool terminal = false;
    std::uint64_t episode_id = 0;
};

struct TransitionView {
    std::span<const double> s;
    std::span<const double> a;
    double r = 0.0;
    std::span<const double> s_next;
    bool terminal = false;
    std::uint64_t episode_id = 0;
};

/// Capacity-bounded FIFO of transitions stored in flat arrays. Logical index
/// 0 is the oldest retained transition.
class ReplayBuffer {
public:
    ReplayBuffer() = default;
    ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t action_dim)
        : capacity_(capacity), obs_dim_(obs_dim), action_dim_(action_dim) {
        if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
    }

    std::size_t size() const noexcept { return size_; }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return size_ == 0; }
    std::uint64_t newest_episode_id() const noexcept { return newest_id_; }
    /// Retained transitions belonging to the newest episode (always the tail).
    std::size_t newest_count() const noexcept { return newest_count_; }

    void push(std::span<const double> s, std::span<const double> a, double r, std::span<const double> s_next,
              bool terminal, std::uint64_t episode_id) {
        if (s.size() != obs_dim_ || s_next.size() != obs_dim_ || a.size() != action_dim_) {
            throw ShapeError("transition does not match the replay buffer dimensions");
        }
        if (!std::isfinite(r)) throw NumericError("non-finite reward in transition");
        std::size_t slot = 0;
        if (size_ < capacity_) {
            slot = size_;
            obs_.insert(obs_.end(), s.begin(), s.end());
            next_obs_.insert(next_obs_.end(), s_next.begin(), s_next.end());
            actions_.insert(actions_.end(), a.begin(), a.end());
            rewards_.push_back(r);
            terminal_.push_back(terminal ? 1 : 0);
            episode_.push_back(episode_id);
            ++size_;
        } else {
            slot = head_;
            head_ = (head_ + 1) % capacity_;
            std::copy(s.begin(), s.end(), obs_.begin() + static_cast<std::ptrdiff_t>(slot * obs_dim_));
            std::copy(s_next.begin(), s_next.end(), next_obs_.begin() + static_cast<std::ptrdiff_t>(slot * obs_dim_));
            std::copy(a.begin(), a.end(), actions_.begin() + static_cast<std::ptrdiff_t>(slot * action_dim_));
            rewards_[slot] = r;
            terminal_[slot] = terminal ? 1 : 0;
            episode_[slot] = episode_id;
        }
        if (newest_count_ > 0 && episode_id == newest_id_) {
            newest_count_ = std::min(newest_count_ + 1, size_);
        } else {
            newest_id_ = episode_id;
            newest_count_ = 1;
        }
    }

    void push(const Transition& t) { push(t.s, t.a, t.r, t.s_next, t.terminal, t.episode_id); }

    TransitionView at(std::size_t i) const {
        if (i >= size_) throw std::out_of_range("replay buffer index");
        const std::size_t slot = (head_ + i) % capacity_;
        return TransitionView{
            std::span<const double>(obs_.data() + slot * obs_dim_, obs_dim_),
            std::span<const double>(actions_.data() + slot * action_dim_, action_dim_),
            rewards_[slot],
            std::span<const double>(next_obs_.data() + slot * obs_dim_, obs_dim_),
            terminal_[slot] != 0,
            episode_[slot],
        };
    }

    /// Uniform draws, except that at least ceil(min_newest_fraction * n) of
    /// them come from the newest episode. Returned in shuffled order.
    std::vector<std::size_t> sample_indices(std::size_t n, double min_newest_fraction, Rng& rng) const {
        std::vector<std::size_t> out;
        if (size_ == 0 || n == 0) return out;
        out.reserve(n);
        std::size_t n_newest = 0;
        if (newest_count_ > 0 && min_newest_fraction > 0.0) {
            n_newest = static_cast<std::size_t>(std::ceil(min_newest_fraction * static_cast<double>(n) - 1e-9));
            n_newest = std::min(n_newest, n);
        }
        std::uniform_int_distribution<std::size_t> newest(size_ - newest_count_, size_ - 1);
        for (std::size_t k = 0; k < n_newest; ++k) out.push_back(newest(rng));
        std::uniform_int_distribution<std::size_t> any(0, size_ - 1);
        for (std::size_t k = n_newest; k < n; ++k) out.push_back(any(rng));
        std::shuffle(out.begin(), out.end(), rng);
        return out;
    }

private:
    std::size_t capacity_ = 1;
    std::size_t obs_dim_ = 0;
    std::size_t action_dim_ = 0;
    std::size_t size_ = 0;
    std::size_t head_ = 0;
    std::vector<double> obs_;
    std::vector<double> next_obs_;
    std::vector<double> actions_;
    std::vector<double> rewards_;
    std::vector<std::uint8_t> terminal_;
    std::vector<std::uint64_t> episode_;
    std::uint64_t newest_id_ = 0;
    std::size_t newest_count_ = 0;
};

/// Noise std (as a fraction of the control range) applies while the number
/// of completed training episodes is below `until_episode`.
struct NoiseStage {
    std::uint64_t until_episode = std::numeric_limits<std::uint64_t>::max();
    double std_fraction = 0.05;
};

struct DdpgConfig {
    std::vector<std::size_t> actor_hidden{40, 40, 20};
    std::size_t critic_obs_branch = 48;
    std::size_t critic_action_branch = 16;
    std::vector<std::size_t> critic_hidden{64, 32};
    double gamma = 0.99;
    double tau = 0.01;
    AdamConfig actor_adam{};
    AdamConfig critic_adam{};
    std::size_t buffer_capacity = 2'000'000;
    std::size_t updates_per_pass = 1000;
    std::size_t update_every = 1000;
    double min_newest_fraction = 0.05;
    std::vector<NoiseStage> noise_schedule{
        {50, 0.15}, {100, 0.10}, {std::numeric_limits<std::uint64_t>::max(), 0.05}};

    void validate() const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("ddpg.gamma must lie in [0, 1]");
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("ddpg.tau must lie in (0, 1]");
        if (buffer_capacity == 0) throw ConfigError("ddpg.buffer_capacity must be positive");
        if (update_every == 0) throw ConfigError("ddpg.update_every must be positive");
        if (min_newest_fraction < 0.0 || min_newest_fraction > 1.0) {
            throw ConfigError("ddpg.min_newest_fraction must lie in [0, 1]");
        }
        if (noise_schedule.empty()) throw ConfigError("ddpg.noise_schedule must not be empty");
        for (std::size_t i = 1; i < noise_schedule.size(); ++i) {
            if (noise_schedule[i].until_episode <= noise_schedule[i - 1].until_episode) {
                throw ConfigError("ddpg.noise_schedule thresholds must increase");
            }
        }
    }
};

struct UpdateDiagnostics {
    std::size_t samples = 0;
    double critic_loss = 0.0;     // mean squared TD error before each step
    double actor_objective = 0.0; // mean Q(s, mu(s)) before each step
    std::optional<std::string> warning;
};

/// One Adam ascent step of the actor along dQ/da * dmu/dtheta. `action_grad`
/// fills dQ/da at the given action.
template <typename ActionGrad>
void actor_ascent_step(const Mlp& actor, std::span<double> params, AdamState& opt, std::span<const double> s,
                       ActionGrad&& action_grad, Tape& tape, std::vector<double>& grad_buf) {
    actor.forward(params, s, tape);
    const auto& a = tape.activations.back();
    std::vector<double> dq_da(a.size());
    action_grad(std::span<const double>(a), std::span<double>(dq_da));
    for (double& g : dq_da) g = -g; // Adam descends; negate for ascent
    grad_buf.resize(params.size());
    actor.backward(params, tape, dq_da, grad_buf, {});
    adam_step(params, grad_buf, opt);
}

/// target <- (1 - tau) target + tau live
inline void soft_update(std::span<double> target, std::span<const double> live, double tau) {
    detail::check_size(target.size(), live.size(), "target network");
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = (1.0 - tau) * target[i] + tau * live[i];
}

class DdpgAgent {
public:
    DdpgAgent(std::size_t obs_dim, std::size_t action_dim, double control_low, double control_high, DdpgConfig cfg,
              Rng& init_rng)
        : cfg_(std::move(cfg)), control_low_(control_low), control_high_(control_high) {
        cfg_.validate();
        std::vector<std::size_t> sizes{obs_dim};
        sizes.insert(sizes.end(), cfg_.actor_hidden.begin(), cfg_.actor_hidden.end());
        sizes.push_back(action_dim);
        actor_ = ParamNet(sizes, Activation::relu, Activation::tanh);
        critic_ = CriticNet(obs_dim, action_dim, cfg_.critic_obs_branch, cfg_.critic_action_branch, cfg_.critic_hidden);
        actor_.init_uniform(init_rng);
        critic_.init_uniform(init_rng);
        target_actor_ = actor_;
        target_critic_ = critic_;
        actor_opt_ = AdamState(actor_.params().size(), cfg_.actor_adam);
        critic_opt_ = AdamState(critic_.param_count(), cfg_.critic_adam);
        // Grow lazily; a 2M-transition buffer is only paid for when filled.
        buffer_ = ReplayBuffer(cfg_.buffer_capacity, obs_dim, action_dim);
    }

    const DdpgConfig& config() const noexcept { return cfg_; }
    ParamNet& actor() noexcept { return actor_; }
    const ParamNet& actor() const noexcept { return actor_; }
    CriticNet& critic() noexcept { return critic_; }
    const CriticNet& critic() const noexcept { return critic_; }
    ParamNet& target_actor() noexcept { return target_actor_; }
    const ParamNet& target_actor() const noexcept { return target_actor_; }
    CriticNet& target_critic() noexcept { return target_critic_; }
    const CriticNet& target_critic() const noexcept { return target_critic_; }
    ReplayBuffer& buffer() noexcept { return buffer_; }
    const ReplayBuffer& buffer() const noexcept { return buffer_; }
    AdamState& actor_optimizer() noexcept { return actor_opt_; }
    AdamState& critic_optimizer() noexcept { return critic_opt_; }

    std::uint64_t episodes() const noexcept { return episodes_; }
    void set_episodes(std::uint64_t n) noexcept { episodes_ = n; }
    std::uint64_t total_steps() const noexcept { return total_steps_; }
    double gamma() const noexcept { return cfg_.gamma; }
    void set_gamma(double g) {
        cfg_.gamma = g;
        cfg_.validate();
    }
    void set_tau(double t) {
        cfg_.tau = t;
        cfg_.validate();
    }

    double noise_fraction() const noexcept {
        for (const auto& stage : cfg_.noise_schedule) {
            if (episodes_ < stage.until_episode) return stage.std_fraction;
        }
        return cfg_.noise_schedule.back().std_fraction;
    }
    double noise_std() const noexcept { return noise_fraction() * (control_high_ - control_low_); }

    std::vector<double> act(std::span<const double> s, bool explore, Rng& rng) const {
        auto a = actor_.forward(s);
        if (explore) {
            std::normal_distribution<double> noise(0.0, noise_std());
            for (double& v : a) v = std::clamp(v + noise(rng), control_low_, control_high_);
        }
        return a;
    }

    /// r + gamma Q'(s', mu'(s')), bootstrap dropped on terminal transitions.
    double critic_target(const TransitionView& t) const {
        if (t.terminal || cfg_.gamma == 0.0) return t.r;
        const auto a_next = target_actor_.forward(t.s_next);
        return t.r + cfg_.gamma * target_critic_.value(t.s_next, a_next);
    }

    std::vector<double> critic_targets(std::span<const TransitionView> batch) const {
        std::vector<double> y;
        y.reserve(batch.size());
        for (const auto& t : batch) y.push_back(critic_target(t));
        return y;
    }

    /// One squared-TD-error descent step on a single transition. Returns the
    /// loss before the step.
    double critic_step(const TransitionView& t) {
        const double y = critic_target(t);
        const double q = critic_.value(t.s, t.a, critic_tape_);
        const double err = q - y;
        critic_grad_.resize(critic_.param_count());
        critic_.backward(critic_tape_, 2.0 * err, critic_grad_, {}, {});
        adam_step(critic_.params(), critic_grad_, critic_opt_);
        return err * err;
    }

    /// One ascent step of the actor through the live critic. Returns
    /// Q(s, mu(s)) before the step.
    double actor_step(std::span<const double> s) {
        double q = 0.0;
        actor_ascent_step(
            actor_.topology(), actor_.params(), actor_opt_, s,
            [&](std::span<const double> a, std::span<double> dq_da) {
                q = critic_.value(s, a, actor_critic_tape_);
                critic_.backward(actor_critic_tape_, 1.0, {}, {}, dq_da);
            },
            actor_tape_, actor_grad_);
        return q;
    }

    void soft_update_targets() {
        soft_update(target_actor_.params(), actor_.params(), cfg_.tau);
        soft_update(target_critic_.params(), critic_.params(), cfg_.tau);
    }

    UpdateDiagnostics update(Rng& rng) { return update(cfg_.updates_per_pass, cfg_.min_newest_fraction, rng); }

    /// n_samples single-transition critic and actor steps, then one soft
    /// target update.
    UpdateDiagnostics update(std::size_t n_samples, double min_newest_fraction, Rng& rng) {
        UpdateDiagnostics d;
        if (buffer_.empty()) {
            d.warning = "replay buffer is empty; update skipped";
            return d;
        }
        const auto idx = buffer_.sample_indices(n_samples, min_newest_fraction, rng);
        for (auto i : idx) {
            const auto t = buffer_.at(i);
            d.critic_loss += critic_step(t);
            d.actor_objective += actor_step(t.s);
        }
        d.samples = idx.size();
        if (d.samples > 0) {
            d.critic_loss /= static_cast<double>(d.samples);
            d.actor_objective /= static_cast<double>(d.samples);
        }
        soft_update_targets();
        return d;
    }

    /// Replace the live networks (e.g. with an archived policy). Targets are
    /// re-synchronized and optimizer moments cleared; the replay buffer and
    /// episode counter are kept.
    void adopt(std::span<const double> actor_params, std::span<const double> critic_params) {
        actor_.set_params(actor_params);
        critic_.set_params(critic_params);
        target_actor_ = actor_;
        target_critic_ = critic_;
        actor_opt_.reset();
        critic_opt_.reset();
    }

    /// Bookkeeping hooks used by run_episode.
    std::uint64_t begin_training_episode() noexcept { return next_episode_id_++; }
    void end_training_episode() noexcept { ++episodes_; }
    bool count_step() noexcept { return ++total_steps_ % cfg_.update_every == 0; }

private:
    DdpgConfig cfg_;
    double control_low_ = -1.0;
    double control_high_ = 1.0;
    ParamNet actor_;
    CriticNet critic_;
    ParamNet target_actor_;
    CriticNet target_critic_;
    AdamState actor_opt_;
    AdamState critic_opt_;
    ReplayBuffer buffer_;
    std::uint64_t episodes_ = 0;
    std::uint64_t next_episode_id_ = 0;
    std::uint64_t total_steps_ = 0;

    CriticNet::Tape critic_tape_;
    CriticNet::Tape actor_critic_tape_;
    Tape actor_tape_;
    std::vector<double> critic_grad_;
    std::vector<double> actor_grad_;
};

struct EpisodeResult {
    double episode_return = 0.0;
    std::vector<double> stance_fractions; // zeros for an empty episode
    double distance = 0.0;
    std::size_t steps = 0;
    bool fell = false;
    std::optional<UpdateDiagnostics> last_update;
};

namespace detail {

template <typename Env, typename Policy, typename OnStep>
EpisodeResult drive_episode(Env& env, std::uint64_t env_seed, std::size_t max_steps, EpisodeTrace* trace,
                            Policy&& policy, OnStep&& on_step) {
    EpisodeResult res;
    std::vector<double> stance_steps(env.n_legs(), 0.0);
    auto obs = env.reset(env_seed);
    if (trace) trace->clear();
    const double x0 = env.body_x();
    for (std::size_t t = 0; t < max_steps; ++t) {
        const auto a = policy(std::span<const double>(obs));
        auto sr = env.step(a);
        res.episode_return += sr.reward;
        for (std::size_t i = 0; i < stance_steps.size(); ++i) stance_steps[i] += sr.stance[i] ? 1.0 : 0.0;
        ++res.steps;
        if (trace) {
            trace->push_back(TraceStep{a, sr.stance, sr.dx, sr.reward, sr.survival, sr.stance_count, sr.action_sq_norm});
        }
        on_step(obs, a, sr);
        obs = std::move(sr.observation);
        if (sr.done) {
            res.fell = sr.fell;
            break;
        }
    }
    res.distance = env.body_x() - x0;
    if (res.steps > 0) {
        for (double& c : stance_steps) c /= static_cast<double>(res.steps);
    }
    res.stance_fractions = std::move(stance_steps);
    return res;
}

} // namespace detail

/// Deterministic rollout of a fixed actor.
template <typename Env>
EpisodeResult rollout_policy(const ParamNet& actor, Env& env, std::uint64_t env_seed, std::size_t max_steps,
                             EpisodeTrace* trace = nullptr) {
    Tape tape;
    return detail::drive_episode(
        env, env_seed, std::min(max_steps, env.max_steps()), trace,
        [&](std::span<const double> s) {
            actor.forward(s, tape);
            return tape.activations.back();
        },
        [](const auto&, const auto&, const auto&) {});
}

/// Resets `env` with `env_seed` and plays one episode with the agent's
/// actor. With explore=true, every transition enters the replay buffer and
/// an update pass runs every `update_every` environment steps.
template <typename Env>
EpisodeResult run_episode(DdpgAgent& agent, Env& env, bool explore, Rng& rng, std::uint64_t env_seed,
                          std::size_t max_steps = 1000, EpisodeTrace* trace = nullptr) {
    std::optional<UpdateDiagnostics> last;
    const std::uint64_t episode_id = explore ? agent.begin_training_episode() : 0;
    auto res = detail::drive_episode(
        env, env_seed, std::min(max_steps, env.max_steps()), trace,
        [&](std::span<const double> s) { return agent.act(s, explore, rng); },
        [&](const std::vector<double>& s, const std::vector<double>& a, const StepResult& sr) {
            if (!explore) return;
            agent.buffer().push(s, a, sr.reward, sr.observation, sr.fell, episode_id);
            if (agent.count_step()) last = agent.update(rng);
        });
    if (explore) agent.end_training_episode();
    res.last_update = std::move(last);
    return res;
}

} // namespace mmprl
