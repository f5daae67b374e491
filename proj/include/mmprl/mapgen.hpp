#pragma once

// Map creation. MMPRL: several DDPG agents train their own actor/critic and
// insert the evaluated policy into one shared archive after every training
// episode; past I_init iterations, every FREQ-th iteration restarts an agent
// from a random archived (actor, critic) pair. MAP-Elites baseline: random
// actor parameters first, then Gaussian mutation of random archived actors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "archive.hpp"
#include "ddpg.hpp"
#include "env.hpp"
#include "errors.hpp"
#include "nnet.hpp"

namespace mmprl {

struct MmprlConfig {
    std::size_t n_agents = 8;
    std::vector<std::uint64_t> i_init; // one entry, or one per agent; empty = half 10000, half 20000
    std::uint64_t freq = 10;
    std::uint64_t budget = 61000; // total map updates across agents
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    bool free_running = false;    // true: no per-round barrier, not reproducible with workers > 1
    std::uint64_t snapshot_every = 100;
    std::uint64_t eval_seed = 0;  // env seed of the noise-free evaluation rollout
    std::size_t bins = 5;

    std::uint64_t i_init_for(std::size_t agent) const {
        if (i_init.empty()) return agent < (n_agents + 1) / 2 ? 10000 : 20000;
        if (i_init.size() == 1) return i_init.front();
        return i_init.at(agent);
    }

    void validate() const {
        if (n_agents == 0) throw ConfigError("mapgen.n_agents must be at least 1");
        if (freq == 0) throw ConfigError("mapgen.freq must be at least 1");
        if (!i_init.empty() && i_init.size() != 1 && i_init.size() != n_agents) {
            throw ConfigError("mapgen.i_init must list one value or one per agent");
        }
        for (auto v : i_init) {
            if (v == 0) throw ConfigError("mapgen.i_init must be at least 1");
        }
        if (bins == 0 || bins > 256) throw ConfigError("mapgen.bins must lie in [1, 256]");
    }
};

struct MapElitesConfig {
    std::uint64_t init_iterations = 4000; // policies drawn uniformly before mutation starts
    double init_low = -5.0;
    double init_high = 5.0;
    double mutation_std = 0.1;
    std::size_t episodes_per_policy = 10;
    std::uint64_t budget = 0;
    std::uint64_t seed = 0;
    std::uint64_t snapshot_every = 100;
    std::size_t bins = 5;

    void validate() const {
        if (!(init_high > init_low)) throw ConfigError("baseline init range is empty");
        if (mutation_std < 0.0) throw ConfigError("baseline.mutation_std must be non-negative");
        if (episodes_per_policy == 0) throw ConfigError("baseline.episodes_per_policy must be positive");
        if (bins == 0 || bins > 256) throw ConfigError("mapgen.bins must lie in [1, 256]");
    }
};

/// Optional outputs of a map-creation run. Streams are written only from
/// within the archive lock (stats) or the diagnostics lock.
struct RunSinks {
    std::ostream* stats = nullptr;
    std::ostream* diagnostics = nullptr;
    std::function<void(const std::string&)> log;
};

inline void write_diagnostics_header(std::ostream& os) {
    os << "agent_id,iteration,critic_loss,episode_return,distance\n";
}

enum class Branch : std::uint8_t { own, random_cell, fallback_own };

/// Loop branch: continue with the agent's own networks unless past
/// I_init on a multiple of FREQ.
inline Branch choose_branch(std::uint64_t iter, std::uint64_t i_init, std::uint64_t freq) {
    return (iter < i_init || iter % freq != 0) ? Branch::own : Branch::random_cell;
}

struct MmprlAgent {
    std::size_t id = 0;
    std::uint64_t i_init = 10000;
    Rng rng;
    DdpgAgent ddpg;
    Crawler train_env;
    Crawler eval_env;
    std::uint64_t iteration = 0;
    bool failed = false;
};

inline std::uint64_t agent_seed(std::uint64_t base, std::size_t agent) {
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(agent), 0x4D4D5052u};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline MmprlAgent make_mmprl_agent(std::size_t id, const MmprlConfig& cfg, const EnvSpec& spec,
                                   const DamageConfig& damage, const DdpgConfig& ddpg) {
    Rng rng(agent_seed(cfg.seed, id));
    DdpgAgent agent(spec.obs_dim(), spec.action_dim(), spec.control_low, spec.control_high, ddpg, rng);
    return MmprlAgent{id, cfg.i_init_for(id), std::move(rng), std::move(agent), Crawler(spec, damage),
                      Crawler(spec, damage), 0, false};
}

struct MapUpdateRecord {
    std::size_t agent_id = 0;
    std::uint64_t iteration = 0;
    Branch branch = Branch::own;
    InsertOutcome outcome = InsertOutcome::rejected;
    Descriptor descriptor;
    double performance = 0.0;
    double episode_return = 0.0;
    double train_distance = 0.0;
    std::optional<double> critic_loss;
};

/// Evaluate a fixed actor: descriptor from stance fractions, performance =
/// forward distance.
inline std::pair<Descriptor, double> evaluate_actor(const ParamNet& actor, Crawler& env, std::uint64_t env_seed,
                                                    std::size_t bins) {
    const auto r = rollout_policy(actor, env, env_seed, env.max_steps());
    return {quantize_stance(r.stance_fractions, bins), r.distance};
}

/// Everything an iteration produced before it touches the archive.
struct Proposal {
    MapUpdateRecord record;
    std::vector<double> actor_params;
    std::vector<double> critic_params;
};

/// Training half of one iteration: pick the networks, train one episode,
/// evaluate deterministically. Reads the archive only through random_cell.
inline Proposal mmprl_propose(MmprlAgent& agent, const Archive& archive, const MmprlConfig& cfg) {
    Proposal p;
    auto& rec = p.record;
    rec.agent_id = agent.id;
    rec.iteration = ++agent.iteration;
    rec.branch = choose_branch(rec.iteration, agent.i_init, cfg.freq);
    if (rec.branch == Branch::random_cell) {
        try {
            const auto cell = archive.random_cell(agent.rng);
            agent.ddpg.adopt(cell.actor_params, cell.critic_params);
        } catch (const EmptyArchiveError&) {
            rec.branch = Branch::fallback_own;
        }
    }
    const std::uint64_t env_seed = agent.rng();
    const auto ep = run_episode(agent.ddpg, agent.train_env, true, agent.rng, env_seed, agent.train_env.max_steps());
    rec.episode_return = ep.episode_return;
    rec.train_distance = ep.distance;
    if (ep.last_update && !ep.last_update->warning) rec.critic_loss = ep.last_update->critic_loss;

    auto [desc, perf] = evaluate_actor(agent.ddpg.actor(), agent.eval_env, cfg.eval_seed, cfg.bins);
    rec.descriptor = std::move(desc);
    rec.performance = perf;
    const auto actor = agent.ddpg.actor().params();
    const auto critic = agent.ddpg.critic().params();
    p.actor_params.assign(actor.begin(), actor.end());
    p.critic_params.assign(critic.begin(), critic.end());
    return p;
}

inline MapUpdateRecord mmprl_commit(Proposal& p, Archive& archive) {
    p.record.outcome = archive.try_insert(p.record.descriptor, p.record.performance, p.actor_params, p.critic_params);
    return p.record;
}

/// One iteration of the per-agent loop.
inline MapUpdateRecord mmprl_agent_step(MmprlAgent& agent, Archive& archive, const MmprlConfig& cfg) {
    auto p = mmprl_propose(agent, archive, cfg);
    return mmprl_commit(p, archive);
}

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream ss;
    ss.precision(10);
    ss << v;
    return ss.str();
}

inline void install_stats_hook(Archive& archive, std::uint64_t every, std::ostream* stats,
                               std::uint64_t& last_snapshot) {
    if (!stats) return;
    write_stats_header(*stats);
    archive.set_snapshot_hook(every, [stats, &last_snapshot](const ArchiveStats& s) {
        write_stats_row(*stats, s);
        last_snapshot = s.update_counter;
    });
}

inline void finish_stats(Archive& archive, std::ostream* stats, std::uint64_t last_snapshot) {
    archive.set_snapshot_hook(0, nullptr);
    if (!stats) return;
    const auto s = archive.stats();
    if (s.update_counter != last_snapshot) write_stats_row(*stats, s);
}

} // namespace detail

inline std::vector<std::size_t> actor_layer_sizes(const EnvSpec& spec, const DdpgConfig& ddpg) {
    std::vector<std::size_t> sizes{spec.obs_dim()};
    sizes.insert(sizes.end(), ddpg.actor_hidden.begin(), ddpg.actor_hidden.end());
    sizes.push_back(spec.action_dim());
    return sizes;
}

inline std::vector<std::size_t> critic_layer_sizes(const EnvSpec& spec, const DdpgConfig& ddpg) {
    return CriticNet(spec.obs_dim(), spec.action_dim(), ddpg.critic_obs_branch, ddpg.critic_action_branch,
                     ddpg.critic_hidden)
        .layer_sizes();
}

/// Runs agents against one shared archive until `budget` insertion attempts
/// have been made.
///
/// Default schedule is in rounds: every live agent trains against the archive
/// as it stood at the start of the round (in parallel when workers > 1), then
/// the round's results are inserted in agent-id order. The outcome depends on
/// the seed only, never on the worker count. `free_running` drops the barrier;
/// agents then insert whenever they finish.
inline Archive run_mmprl(const MmprlConfig& cfg, const EnvSpec& spec, const DamageConfig& damage,
                         const DdpgConfig& ddpg, const RunSinks& sinks = {}) {
    cfg.validate();
    spec.validate();
    damage.validate(spec);
    ddpg.validate();
    Archive archive(ArchiveDims{spec.n_legs, cfg.bins}, actor_layer_sizes(spec, ddpg), critic_layer_sizes(spec, ddpg));
    std::uint64_t last_snapshot = 0;
    detail::install_stats_hook(archive, cfg.snapshot_every, sinks.stats, last_snapshot);
    if (sinks.diagnostics) write_diagnostics_header(*sinks.diagnostics);
    if (cfg.budget == 0) {
        detail::finish_stats(archive, sinks.stats, last_snapshot);
        return archive;
    }

    std::vector<MmprlAgent> agents;
    agents.reserve(cfg.n_agents);
    for (std::size_t i = 0; i < cfg.n_agents; ++i) agents.push_back(make_mmprl_agent(i, cfg, spec, damage, ddpg));

    std::mutex diag_mutex;
    auto record = [&](const MapUpdateRecord& r) {
        if (!sinks.diagnostics) return;
        std::lock_guard lock(diag_mutex);
        *sinks.diagnostics << r.agent_id << ',' << r.iteration << ','
                           << (r.critic_loss ? detail::fmt_double(*r.critic_loss) : std::string("nan")) << ','
                           << detail::fmt_double(r.episode_return) << ',' << detail::fmt_double(r.performance)
                           << '\n';
    };
    std::mutex log_mutex;
    auto fail = [&](MmprlAgent& a, const std::exception& e) {
        a.failed = true;
        if (!sinks.log) return;
        std::lock_guard lock(log_mutex);
        sinks.log("agent " + std::to_string(a.id) + " failed: " + e.what());
    };
    auto alive = [&] {
        return std::any_of(agents.begin(), agents.end(), [](const MmprlAgent& a) { return !a.failed; });
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.workers, agents.size()));

    if (!cfg.free_running) {
        std::uint64_t used = 0;
        std::vector<std::optional<Proposal>> round(agents.size());
        while (used < cfg.budget && alive()) {
            // Agents beyond the remaining budget sit this round out.
            std::vector<std::size_t> active;
            for (std::size_t i = 0; i < agents.size() && used + active.size() < cfg.budget; ++i) {
                if (!agents[i].failed) active.push_back(i);
            }
            auto work = [&](std::size_t w) {
                for (std::size_t k = w; k < active.size(); k += n_workers) {
                    auto& a = agents[active[k]];
                    try {
                        round[a.id] = mmprl_propose(a, archive, cfg);
                    } catch (const std::exception& e) {
                        round[a.id].reset();
                        fail(a, e);
                    }
                }
            };
            if (n_workers == 1) {
                work(0);
            } else {
                std::vector<std::jthread> pool;
                for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work, w);
            }
            for (auto i : active) {
                if (!round[i]) continue;
                try {
                    record(mmprl_commit(*round[i], archive));
                    ++used;
                } catch (const std::exception& e) {
                    fail(agents[i], e);
                }
                round[i].reset();
            }
        }
    } else {
        std::mutex ticket_mutex;
        std::uint64_t reserved = 0;
        auto reserve = [&] {
            std::lock_guard lock(ticket_mutex);
            if (reserved >= cfg.budget) return false;
            ++reserved;
            return true;
        };
        auto give_back = [&] {
            std::lock_guard lock(ticket_mutex);
            --reserved;
        };
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back([&, w] {
                for (;;) {
                    bool any = false;
                    for (std::size_t i = w; i < agents.size(); i += n_workers) {
                        if (agents[i].failed) continue;
                        if (!reserve()) return;
                        any = true;
                        try {
                            record(mmprl_agent_step(agents[i], archive, cfg));
                        } catch (const std::exception& e) {
                            give_back();
                            fail(agents[i], e);
                        }
                    }
                    if (!any) return;
                }
            });
        }
    }
    if (!alive()) throw Error("map creation aborted: every agent failed");
    detail::finish_stats(archive, sinks.stats, last_snapshot);
    return archive;
}

/// Random-perturbation baseline on the same actor topology. Every episode is
/// one insertion attempt; a policy plays episodes_per_policy episodes.
inline Archive run_mapelites(const MapElitesConfig& cfg, const EnvSpec& spec, const DamageConfig& damage,
                             const std::vector<std::size_t>& actor_sizes, const RunSinks& sinks = {}) {
    cfg.validate();
    spec.validate();
    damage.validate(spec);
    Archive archive(ArchiveDims{spec.n_legs, cfg.bins}, actor_sizes, {});
    std::uint64_t last_snapshot = 0;
    detail::install_stats_hook(archive, cfg.snapshot_every, sinks.stats, last_snapshot);
    if (sinks.diagnostics) write_diagnostics_header(*sinks.diagnostics);

    Rng rng(agent_seed(cfg.seed, 0x4D45));
    ParamNet policy(actor_sizes, Activation::relu, Activation::tanh);
    Crawler env(spec, damage);
    std::uniform_real_distribution<double> init(cfg.init_low, cfg.init_high);
    std::normal_distribution<double> mutation(0.0, 1.0);
    std::uint64_t updates = 0;
    for (std::uint64_t p = 0; updates < cfg.budget; ++p) {
        auto params = policy.params();
        if (p < cfg.init_iterations || archive.empty()) {
            for (double& v : params) v = init(rng);
        } else {
            const auto parent = archive.random_cell(rng);
            for (std::size_t i = 0; i < params.size(); ++i) {
                params[i] = parent.actor_params[i] + cfg.mutation_std * mutation(rng);
            }
        }
        for (std::size_t e = 0; e < cfg.episodes_per_policy && updates < cfg.budget; ++e) {
            const auto r = rollout_policy(policy, env, rng(), env.max_steps());
            const auto desc = quantize_stance(r.stance_fractions, cfg.bins);
            archive.try_insert(desc, r.distance, policy.params(), {});
            ++updates;
            if (sinks.diagnostics) {
                *sinks.diagnostics << 0 << ',' << p << ",nan," << detail::fmt_double(r.episode_return) << ','
                                   << detail::fmt_double(r.distance) << '\n';
            }
        }
    }
    detail::finish_stats(archive, sinks.stats, last_snapshot);
    return archive;
}

} // namespace mmprl
