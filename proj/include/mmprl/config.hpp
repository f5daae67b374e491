#pragma once

// Experiment configuration: an INI-style text file with sections env, ddpg,
// mapgen, baseline, mboa and damage. Every diagnostic carries the source name
// and line so a bad run can be traced to the exact setting.
//
//   # comment            ; comment
//   [section]
//   key = value          lists are comma separated

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ddpg.hpp"
#include "env.hpp"
#include "errors.hpp"
#include "mapgen.hpp"
#include "mboa.hpp"

namespace mmprl {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

} // namespace detail

class Ini {
public:
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };

    static Ini parse(std::istream& is, std::string source = "<config>") {
        Ini ini;
        ini.source_ = std::move(source);
        std::string raw;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(is, raw)) {
            ++lineno;
            auto line = detail::trim(raw);
            if (line.empty() || line.front() == '#' || line.front() == ';') continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ini.error(lineno, "unterminated section header");
                section = std::string(detail::trim(line.substr(1, line.size() - 2)));
                if (section.empty()) throw ini.error(lineno, "empty section name");
                if (!ini.sections_.emplace(section, std::map<std::string, Entry>{}).second) {
                    throw ini.error(lineno, "duplicate section [" + section + "]");
                }
                ini.section_lines_[section] = lineno;
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) throw ini.error(lineno, "expected 'key = value'");
            if (section.empty()) throw ini.error(lineno, "setting outside of any section");
            const std::string key(detail::trim(line.substr(0, eq)));
            auto value = detail::trim(line.substr(eq + 1));
            if (const auto hash = value.find(" #"); hash != std::string_view::npos) value = detail::trim(value.substr(0, hash));
            if (key.empty()) throw ini.error(lineno, "empty key");
            auto& sec = ini.sections_[section];
            if (sec.count(key)) throw ini.error(lineno, "duplicate key '" + section + "." + key + "'");
            sec.emplace(key, Entry{std::string(value), lineno});
        }
        return ini;
    }

    static Ini parse_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError(path.string() + ": cannot open config file");
        return parse(is, path.string());
    }

    const std::string& source() const { return source_; }

    bool has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

    /// Unknown sections and keys are rejected so that a typo cannot silently
    /// fall back to a default.
    void reject_unknown(const std::map<std::string, std::set<std::string>>& allowed) const {
        for (const auto& [name, entries] : sections_) {
            const auto sec = allowed.find(name);
            if (sec == allowed.end()) throw error(section_lines_.at(name), "unknown section [" + name + "]");
            for (const auto& [key, e] : entries) {
                if (!sec->second.count(key)) throw error(e.line, "unknown key '" + name + "." + key + "'");
            }
        }
    }

    template <class T>
    void get(const std::string& section, const std::string& key, T& out) const {
        if (const auto* e = find(section, key)) out = convert<T>(*e, section + "." + key);
    }

    template <class T>
    T require(const std::string& section, const std::string& key) const {
        const auto* e = find(section, key);
        if (!e) throw ConfigError(source_ + ": missing required key '" + section + "." + key + "'");
        return convert<T>(*e, section + "." + key);
    }

    template <class T>
    void get_list(const std::string& section, const std::string& key, std::vector<T>& out) const {
        const auto* e = find(section, key);
        if (!e) return;
        out.clear();
        for (auto item : detail::split(e->value, ',')) out.push_back(scalar<T>(item, *e, section + "." + key));
    }

    /// Raw text plus its line, for values with their own grammar.
    const Entry* find(const std::string& section, const std::string& key) const {
        const auto s = sections_.find(section);
        if (s == sections_.end()) return nullptr;
        const auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        return &k->second;
    }

    ConfigError error(std::size_t line, const std::string& msg) const {
        return ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
    }

    template <class T>
    T scalar(std::string_view text, const Entry& e, const std::string& key) const {
        auto fail = [&](const std::string& what) {
            return error(e.line, key + ": " + what + " '" + std::string(text) + "'");
        };
        if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1" || text == "yes") return true;
            if (text == "false" || text == "0" || text == "no") return false;
            throw fail("expected a boolean, got");
        } else if constexpr (std::is_same_v<T, std::string>) {
            return std::string(text);
        } else if constexpr (std::is_floating_point_v<T>) {
            T v{};
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(v)) {
                throw fail("expected a finite number, got");
            }
            return v;
        } else {
            static_assert(std::is_integral_v<T>);
            if (text.empty() || (std::is_unsigned_v<T> && text.front() == '-')) {
                throw fail("expected a non-negative integer, got");
            }
            T v{};
            const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || ptr != text.data() + text.size()) throw fail("expected an integer, got");
            return v;
        }
    }

private:
    template <class T>
    T convert(const Entry& e, const std::string& key) const {
        return scalar<T>(e.value, e, key);
    }

    std::string source_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::map<std::string, std::size_t> section_lines_;
};

/// Everything a subcommand needs besides the seed and worker count.
struct ExperimentConfig {
    EnvSpec env;
    DamageConfig damage;
    DdpgConfig ddpg;
    MmprlConfig mapgen;
    MapElitesConfig baseline;
    GpConfig mboa;
    std::size_t max_trials = 20;
    // Adaptation scenarios: with random_leg set, every adaptation seed picks
    // one leg uniformly and sets its push gain to random_leg_gain on top of
    // the fixed damage.
    bool random_leg = false;
    double random_leg_gain = 0.0;
    std::string source;
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema{
        {"env",
         {"n_legs", "step_gain", "max_steps", "fall_min_stance", "fall_patience", "survival_reward", "w_contact",
          "w_torque", "w_action", "eval_seed"}},
        {"ddpg",
         {"actor_hidden", "critic_obs_branch", "critic_action_branch", "critic_hidden", "gamma", "tau", "actor_lr",
          "critic_lr", "adam_beta1", "adam_beta2", "adam_epsilon", "buffer_capacity", "updates_per_pass",
          "update_every", "min_newest_fraction", "noise_schedule"}},
        {"mapgen", {"n_agents", "i_init", "freq", "budget", "bins", "snapshot_every", "free_running"}},
        {"baseline",
         {"init_iterations", "init_low", "init_high", "mutation_std", "episodes_per_policy", "budget"}},
        {"mboa", {"rho", "noise_variance", "kappa", "alpha", "matern_nu", "max_trials", "jitter_retries"}},
        {"damage",
         {"disabled_legs", "obs_delay", "terrain", "random_terrain_segment", "random_terrain_max", "gravity_slope",
          "toe_loss_gain", "random_leg", "random_leg_gain"}},
    };
    return schema;
}

// "episodes:fraction, ..." with "inf" allowed as the last bound.
inline std::vector<NoiseStage> parse_noise_schedule(const Ini& ini, const Ini::Entry& e) {
    std::vector<NoiseStage> out;
    for (auto item : split(e.value, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw ini.error(e.line, "ddpg.noise_schedule: expected 'episodes:fraction'");
        const auto bound = trim(item.substr(0, colon));
        NoiseStage st;
        st.until_episode = bound == "inf" ? std::numeric_limits<std::uint64_t>::max()
                                          : ini.scalar<std::uint64_t>(bound, e, "ddpg.noise_schedule");
        st.std_fraction = ini.scalar<double>(trim(item.substr(colon + 1)), e, "ddpg.noise_schedule");
        out.push_back(st);
    }
    if (out.empty()) throw ini.error(e.line, "ddpg.noise_schedule is empty");
    return out;
}

// "leg[:gain], ..." ; a bare index uses the toe-loss gain.
inline void parse_disabled_legs(const Ini& ini, const Ini::Entry& e, DamageConfig& d) {
    d.leg_gain.clear();
    for (auto item : split(e.value, ',')) {
        const auto colon = item.find(':');
        const auto leg = ini.scalar<std::size_t>(trim(item.substr(0, colon)), e, "damage.disabled_legs");
        const double gain = colon == std::string_view::npos
                                ? d.toe_loss_gain
                                : ini.scalar<double>(trim(item.substr(colon + 1)), e, "damage.disabled_legs");
        d.leg_gain[leg] = gain;
    }
}

// "start_x:difficulty, ..."
inline std::vector<TerrainSegment> parse_terrain(const Ini& ini, const Ini::Entry& e) {
    std::vector<TerrainSegment> out;
    for (auto item : split(e.value, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw ini.error(e.line, "damage.terrain: expected 'start_x:difficulty'");
        out.push_back({ini.scalar<double>(trim(item.substr(0, colon)), e, "damage.terrain"),
                       ini.scalar<double>(trim(item.substr(colon + 1)), e, "damage.terrain")});
    }
    return out;
}

template <class Fn>
void with_line(const Ini& ini, const std::string& section, const std::string& key, Fn&& fn) {
    const auto* e = ini.find(section, key);
    try {
        fn();
    } catch (const ConfigError& err) {
        if (e) throw ini.error(e->line, err.what());
        throw ConfigError(ini.source() + ": " + err.what());
    }
}

} // namespace detail

/// `required` lists "section.key" names the caller cannot run without.
inline ExperimentConfig load_config(const Ini& ini, const std::vector<std::string>& required = {}) {
    ini.reject_unknown(detail::config_schema());
    for (const auto& name : required) {
        const auto dot = name.find('.');
        if (!ini.has(name.substr(0, dot), name.substr(dot + 1))) {
            throw ConfigError(ini.source() + ": missing required key '" + name + "'");
        }
    }

    ExperimentConfig c;
    c.source = ini.source();

    auto& env = c.env;
    ini.get("env", "n_legs", env.n_legs);
    ini.get("env", "step_gain", env.step_gain);
    ini.get("env", "max_steps", env.max_steps);
    ini.get("env", "fall_min_stance", env.fall_min_stance);
    ini.get("env", "fall_patience", env.fall_patience);
    ini.get("env", "survival_reward", env.survival_reward);
    ini.get("env", "w_contact", env.w_contact);
    ini.get("env", "w_torque", env.w_torque);
    ini.get("env", "w_action", env.w_action);
    ini.get("env", "eval_seed", c.mapgen.eval_seed);
    detail::with_line(ini, "env", "n_legs", [&] { env.validate(); });

    auto& dd = c.ddpg;
    ini.get_list("ddpg", "actor_hidden", dd.actor_hidden);
    ini.get("ddpg", "critic_obs_branch", dd.critic_obs_branch);
    ini.get("ddpg", "critic_action_branch", dd.critic_action_branch);
    ini.get_list("ddpg", "critic_hidden", dd.critic_hidden);
    ini.get("ddpg", "gamma", dd.gamma);
    ini.get("ddpg", "tau", dd.tau);
    ini.get("ddpg", "actor_lr", dd.actor_adam.learning_rate);
    ini.get("ddpg", "critic_lr", dd.critic_adam.learning_rate);
    for (auto* a : {&dd.actor_adam, &dd.critic_adam}) {
        ini.get("ddpg", "adam_beta1", a->beta1);
        ini.get("ddpg", "adam_beta2", a->beta2);
        ini.get("ddpg", "adam_epsilon", a->epsilon);
    }
    ini.get("ddpg", "buffer_capacity", dd.buffer_capacity);
    ini.get("ddpg", "updates_per_pass", dd.updates_per_pass);
    ini.get("ddpg", "update_every", dd.update_every);
    ini.get("ddpg", "min_newest_fraction", dd.min_newest_fraction);
    if (const auto* e = ini.find("ddpg", "noise_schedule")) dd.noise_schedule = detail::parse_noise_schedule(ini, *e);
    detail::with_line(ini, "ddpg", "gamma", [&] { dd.validate(); });

    auto& mg = c.mapgen;
    ini.get("mapgen", "n_agents", mg.n_agents);
    ini.get_list("mapgen", "i_init", mg.i_init);
    ini.get("mapgen", "freq", mg.freq);
    ini.get("mapgen", "budget", mg.budget);
    ini.get("mapgen", "bins", mg.bins);
    ini.get("mapgen", "snapshot_every", mg.snapshot_every);
    ini.get("mapgen", "free_running", mg.free_running);
    detail::with_line(ini, "mapgen", "n_agents", [&] { mg.validate(); });

    auto& be = c.baseline;
    ini.get("baseline", "init_iterations", be.init_iterations);
    ini.get("baseline", "init_low", be.init_low);
    ini.get("baseline", "init_high", be.init_high);
    ini.get("baseline", "mutation_std", be.mutation_std);
    ini.get("baseline", "episodes_per_policy", be.episodes_per_policy);
    ini.get("baseline", "budget", be.budget);
    be.bins = mg.bins;
    be.snapshot_every = mg.snapshot_every;
    detail::with_line(ini, "baseline", "init_low", [&] { be.validate(); });

    auto& gp = c.mboa;
    ini.get("mboa", "rho", gp.rho);
    ini.get("mboa", "noise_variance", gp.noise_variance);
    ini.get("mboa", "kappa", gp.kappa);
    ini.get("mboa", "alpha", gp.alpha);
    ini.get("mboa", "jitter_retries", gp.jitter_retries);
    ini.get("mboa", "max_trials", c.max_trials);
    if (const auto* e = ini.find("mboa", "matern_nu")) {
        const auto nu = ini.scalar<double>(e->value, *e, "mboa.matern_nu");
        if (nu == 0.5) gp.order = MaternOrder::half;
        else if (nu == 1.5) gp.order = MaternOrder::three_halves;
        else if (nu == 2.5) gp.order = MaternOrder::five_halves;
        else throw ini.error(e->line, "mboa.matern_nu must be 0.5, 1.5 or 2.5");
    }
    detail::with_line(ini, "mboa", "rho", [&] { gp.validate(); });
    if (c.max_trials == 0) throw ConfigError(ini.source() + ": mboa.max_trials must be at least 1");

    auto& dm = c.damage;
    ini.get("damage", "toe_loss_gain", dm.toe_loss_gain);
    if (const auto* e = ini.find("damage", "disabled_legs")) detail::parse_disabled_legs(ini, *e, dm);
    ini.get("damage", "obs_delay", dm.obs_delay);
    if (const auto* e = ini.find("damage", "terrain")) dm.terrain = detail::parse_terrain(ini, *e);
    ini.get("damage", "random_terrain_segment", dm.random_segment_length);
    ini.get("damage", "random_terrain_max", dm.random_max_difficulty);
    ini.get("damage", "gravity_slope", dm.gravity_slope);
    ini.get("damage", "random_leg", c.random_leg);
    ini.get("damage", "random_leg_gain", c.random_leg_gain);
    detail::with_line(ini, "damage", "disabled_legs", [&] { dm.validate(env); });
    if (c.random_leg_gain < 0.0) throw ConfigError(ini.source() + ": damage.random_leg_gain must be non-negative");
    return c;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path, const std::vector<std::string>& required = {}) {
    return load_config(Ini::parse_file(path), required);
}

} // namespace mmprl
