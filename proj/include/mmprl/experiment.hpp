#pragma once

// Subcommand drivers shared by the command-line tool and the tests. Each run
// writes its outputs into one directory together with manifest.txt, which
// records the inputs (with SHA-256 digests), seeds, timing and the digest of
// every file produced.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "archive.hpp"
#include "config.hpp"
#include "ddpg.hpp"
#include "env.hpp"
#include "errors.hpp"
#include "mapgen.hpp"
#include "mboa.hpp"

namespace mmprl {

inline constexpr const char* version_string = "1.0.0";

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path.string() + " for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("SHA-256 initialisation failed");
    }
    std::vector<char> buf(1 << 16);
    while (is) {
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return hex.str();
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now()) {
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

/// One manifest per run, written last so that output digests are final.
class RunManifest {
public:
    RunManifest(std::string command, std::filesystem::path out_dir)
        : command_(std::move(command)), out_dir_(std::move(out_dir)), start_(utc_timestamp()) {}

    void input(const std::string& name, const std::filesystem::path& path) { inputs_.emplace_back(name, path); }
    void output(const std::string& name, const std::filesystem::path& path) { outputs_.emplace_back(name, path); }
    void set(const std::string& key, const std::string& value) { fields_.emplace_back(key, value); }

    std::filesystem::path write() const {
        const auto path = out_dir_ / "manifest.txt";
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw Error("cannot write " + path.string());
        os << "command = " << command_ << '\n' << "version = " << version_string << '\n';
        for (const auto& [k, v] : fields_) os << k << " = " << v << '\n';
        for (const auto& [name, p] : inputs_) {
            os << "input." << name << " = " << p.string() << '\n';
            os << "input." << name << ".sha256 = " << sha256_file(p) << '\n';
        }
        for (const auto& [name, p] : outputs_) {
            os << "output." << name << " = " << p.string() << '\n';
            os << "output." << name << ".sha256 = " << sha256_file(p) << '\n';
        }
        os << "start = " << start_ << '\n' << "end = " << utc_timestamp() << '\n';
        return path;
    }

private:
    std::string command_;
    std::filesystem::path out_dir_;
    std::string start_;
    std::vector<std::pair<std::string, std::string>> fields_;
    std::vector<std::pair<std::string, std::filesystem::path>> inputs_;
    std::vector<std::pair<std::string, std::filesystem::path>> outputs_;
};

struct RunOptions {
    std::filesystem::path config;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;
    std::size_t workers = 0; // 0 = one per agent
    std::function<void(const std::string&)> log;
};

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path.string());
    return os;
}

inline void prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

inline std::string fmt(double v, int precision = 12) {
    std::ostringstream ss;
    ss.precision(precision);
    ss << v;
    return ss.str();
}

} // namespace detail

struct MapRunResult {
    Archive archive;
    std::filesystem::path archive_path;
    std::filesystem::path stats_path;
    std::filesystem::path manifest_path;
};

inline MapRunResult cmd_create_map(const RunOptions& opt) {
    auto cfg = load_config_file(opt.config, {"mapgen.budget"});
    cfg.mapgen.seed = opt.seed;
    cfg.mapgen.workers = opt.workers == 0 ? cfg.mapgen.n_agents : opt.workers;
    detail::prepare_dir(opt.out_dir);
    RunManifest manifest("create-map", opt.out_dir);
    manifest.input("config", opt.config);
    manifest.set("seed", std::to_string(opt.seed));
    manifest.set("workers", std::to_string(cfg.mapgen.workers));

    MapRunResult res;
    res.stats_path = opt.out_dir / "stats.csv";
    const auto diag_path = opt.out_dir / "diagnostics.csv";
    {
        auto stats = detail::open_out(res.stats_path);
        auto diag = detail::open_out(diag_path);
        res.archive = run_mmprl(cfg.mapgen, cfg.env, cfg.damage, cfg.ddpg, RunSinks{&stats, &diag, opt.log});
    }
    res.archive_path = opt.out_dir / "archive.qdmap";
    res.archive.save(res.archive_path);
    manifest.output("archive", res.archive_path);
    manifest.output("stats", res.stats_path);
    manifest.output("diagnostics", diag_path);
    res.manifest_path = manifest.write();
    return res;
}

inline MapRunResult cmd_baseline(const RunOptions& opt) {
    auto cfg = load_config_file(opt.config, {"baseline.budget"});
    cfg.baseline.seed = opt.seed;
    detail::prepare_dir(opt.out_dir);
    RunManifest manifest("baseline-mapelites", opt.out_dir);
    manifest.input("config", opt.config);
    manifest.set("seed", std::to_string(opt.seed));

    MapRunResult res;
    res.stats_path = opt.out_dir / "stats.csv";
    const auto diag_path = opt.out_dir / "diagnostics.csv";
    {
        auto stats = detail::open_out(res.stats_path);
        auto diag = detail::open_out(diag_path);
        res.archive = run_mapelites(cfg.baseline, cfg.env, cfg.damage, actor_layer_sizes(cfg.env, cfg.ddpg),
                                    RunSinks{&stats, &diag, opt.log});
    }
    res.archive_path = opt.out_dir / "archive.qdmap";
    res.archive.save(res.archive_path);
    manifest.output("archive", res.archive_path);
    manifest.output("stats", res.stats_path);
    manifest.output("diagnostics", diag_path);
    res.manifest_path = manifest.write();
    return res;
}

/// Rebuilds the stored actor of a cell.
inline ParamNet actor_of(const Archive& archive, const ArchiveCell& cell) {
    ParamNet net(archive.actor_layer_sizes(), Activation::relu, Activation::tanh);
    net.set_params(cell.actor_params);
    return net;
}

/// Distance covered by a cell's actor in the given (possibly damaged) crawler.
inline double evaluate_cell(const Archive& archive, const ArchiveCell& cell, const EnvSpec& spec,
                            const DamageConfig& damage, std::uint64_t env_seed) {
    const auto actor = actor_of(archive, cell);
    if (actor.layer_sizes().front() != spec.obs_dim() || actor.layer_sizes().back() != spec.action_dim()) {
        throw ShapeError("archive actor does not match the configured crawler (n_legs = " +
                         std::to_string(spec.n_legs) + ")");
    }
    Crawler env(spec, damage);
    return rollout_policy(actor, env, env_seed, spec.max_steps).distance;
}

/// Damage realised for one adaptation seed: the configured damage plus, if
/// requested, one uniformly chosen leg set to random_leg_gain.
inline DamageConfig damage_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    DamageConfig d = cfg.damage;
    if (cfg.random_leg) {
        Rng rng(agent_seed(seed, 0xDA3A6E));
        std::uniform_int_distribution<std::size_t> leg(0, cfg.env.n_legs - 1);
        d.leg_gain[leg(rng)] = cfg.random_leg_gain;
    }
    return d;
}

inline std::string describe_damage(const DamageConfig& d) {
    std::ostringstream ss;
    bool first = true;
    for (const auto& [leg, gain] : d.leg_gain) {
        ss << (first ? "" : " ") << leg << ':' << gain;
        first = false;
    }
    if (first) ss << "none";
    return ss.str();
}

inline const char* to_string(StopReason r) {
    switch (r) {
    case StopReason::alpha_reached: return "alpha_reached";
    case StopReason::max_trials: return "max_trials";
    case StopReason::exhausted: return "exhausted";
    }
    return "unknown";
}

struct AdaptSeedResult {
    std::uint64_t seed = 0;
    std::string damage;
    AdaptResult result;
    double prior_best = 0.0;
    std::filesystem::path trace_path;
};

struct AdaptRunResult {
    std::vector<AdaptSeedResult> seeds;
    std::filesystem::path summary_path;
    std::filesystem::path manifest_path;
    double median_trials = 0.0;
    double median_best = 0.0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void write_adapt_summary_header(std::ostream& os) {
    os << "seed,damage,trials,best_performance,best_coords,stop_reason,prior_best\n";
}

/// Runs M-BOA once per seed (seed, seed+1, ...). A single seed writes
/// adapt_trace.csv; a batch writes one trace per seed. The summary lists
/// every seed and, for batches, a final median row.
inline AdaptRunResult cmd_adapt(const RunOptions& opt, const std::filesystem::path& archive_path,
                                std::size_t n_seeds = 1) {
    const auto cfg = load_config_file(opt.config);
    if (n_seeds == 0) throw ConfigError("adapt: --seeds must be at least 1");
    const Archive archive = Archive::load(archive_path);
    if (archive.empty()) throw EmptyArchiveError("adapt: archive " + archive_path.string() + " has no cells");
    detail::prepare_dir(opt.out_dir);
    RunManifest manifest("adapt", opt.out_dir);
    manifest.input("config", opt.config);
    manifest.input("archive", archive_path);
    manifest.set("seed", std::to_string(opt.seed));
    manifest.set("seeds", std::to_string(n_seeds));
    manifest.set("max_trials", std::to_string(cfg.max_trials));

    const double prior_best = archive.best()->performance;
    AdaptRunResult out;
    for (std::size_t k = 0; k < n_seeds; ++k) {
        AdaptSeedResult s;
        s.seed = opt.seed + k;
        const auto damage = damage_for_seed(cfg, s.seed);
        s.damage = describe_damage(damage);
        s.prior_best = prior_best;
        const Evaluator eval = [&](const ArchiveCell& cell) {
            return evaluate_cell(archive, cell, cfg.env, damage, s.seed);
        };
        s.result = adapt(archive, eval, cfg.mboa, cfg.max_trials);
        s.trace_path = opt.out_dir /
                       (n_seeds == 1 ? std::string("adapt_trace.csv") : "adapt_trace_seed" + std::to_string(s.seed) + ".csv");
        {
            auto os = detail::open_out(s.trace_path);
            write_adapt_trace_header(os);
            write_adapt_trace_rows(os, s.result);
        }
        manifest.output("trace." + std::to_string(s.seed), s.trace_path);
        if (opt.log) {
            opt.log("seed " + std::to_string(s.seed) + " damage " + s.damage + ": " +
                    std::to_string(s.result.trials) + " trials, best " + detail::fmt(s.result.best_performance, 6));
        }
        out.seeds.push_back(std::move(s));
    }

    std::vector<double> trials, best;
    for (const auto& s : out.seeds) {
        trials.push_back(static_cast<double>(s.result.trials));
        best.push_back(s.result.best_performance);
    }
    out.median_trials = median(trials);
    out.median_best = median(best);

    out.summary_path = opt.out_dir / "adapt_summary.csv";
    {
        auto os = detail::open_out(out.summary_path);
        write_adapt_summary_header(os);
        for (const auto& s : out.seeds) {
            os << s.seed << ',' << s.damage << ',' << s.result.trials << ',' << detail::fmt(s.result.best_performance)
               << ',' << (s.result.best ? s.result.best->descriptor.to_string(' ') : std::string()) << ','
               << to_string(s.result.reason) << ',' << detail::fmt(s.prior_best) << '\n';
        }
        if (n_seeds > 1) {
            os << "median,," << detail::fmt(out.median_trials) << ',' << detail::fmt(out.median_best) << ",,,"
               << detail::fmt(prior_best) << '\n';
        }
    }
    manifest.output("summary", out.summary_path);
    out.manifest_path = manifest.write();
    return out;
}

/// "best" or D coordinates separated by spaces or commas.
inline std::optional<Descriptor> parse_cell_spec(const std::string& text, std::size_t dims, std::size_t bins) {
    if (text == "best") return std::nullopt;
    Descriptor d;
    std::string norm = text;
    std::replace(norm.begin(), norm.end(), ',', ' ');
    std::istringstream ss(norm);
    long v = 0;
    while (ss >> v) {
        if (v < 0 || v >= static_cast<long>(bins)) {
            throw DomainError("cell coordinate " + std::to_string(v) + " outside [0, " + std::to_string(bins - 1) + "]");
        }
        d.coords.push_back(static_cast<std::uint8_t>(v));
    }
    if (!ss.eof()) throw DomainError("cell coordinates must be integers: '" + text + "'");
    if (d.size() != dims) {
        throw DomainError("expected " + std::to_string(dims) + " cell coordinates, got " + std::to_string(d.size()));
    }
    return d;
}

/// Occupied cells closest (Manhattan) to `d`, ties in coordinate order.
inline std::vector<Descriptor> nearest_occupied(const Archive& archive, const Descriptor& d, std::size_t k) {
    std::vector<std::pair<int, Descriptor>> all;
    for (const auto& c : archive.cells()) {
        int dist = 0;
        for (std::size_t i = 0; i < d.size(); ++i) dist += std::abs(int(c.descriptor.coords[i]) - int(d.coords[i]));
        all.emplace_back(dist, c.descriptor);
    }
    std::sort(all.begin(), all.end());
    std::vector<Descriptor> out;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back(all[i].second);
    return out;
}

struct EvalResult {
    Descriptor descriptor;
    double stored = 0.0;
    double distance = 0.0;
    std::filesystem::path csv_path;
};

/// Deterministic rollout of one archived policy. The env seed is
/// env.eval_seed, the seed used when the map was built, so an intact
/// evaluation reproduces the stored performance.
inline EvalResult cmd_eval(const RunOptions& opt, const std::filesystem::path& archive_path, const std::string& cell_spec) {
    const auto cfg = load_config_file(opt.config);
    const Archive archive = Archive::load(archive_path);
    if (archive.empty()) throw EmptyArchiveError("eval: archive " + archive_path.string() + " has no cells");
    const auto want = parse_cell_spec(cell_spec, archive.dims().dims, archive.dims().bins);
    std::optional<ArchiveCell> cell = want ? archive.find(*want) : archive.best();
    if (!cell) {
        std::string msg = "eval: cell " + want->to_string(' ') + " is not occupied; nearest occupied:";
        for (const auto& d : nearest_occupied(archive, *want, 5)) msg += " [" + d.to_string(' ') + "]";
        throw DomainError(msg);
    }
    detail::prepare_dir(opt.out_dir);
    RunManifest manifest("eval", opt.out_dir);
    manifest.input("config", opt.config);
    manifest.input("archive", archive_path);
    manifest.set("cell", cell_spec);

    EvalResult r;
    r.descriptor = cell->descriptor;
    r.stored = cell->performance;
    r.distance = evaluate_cell(archive, *cell, cfg.env, cfg.damage, cfg.mapgen.eval_seed);
    r.csv_path = opt.out_dir / "eval.csv";
    {
        auto os = detail::open_out(r.csv_path);
        os << "coords,stored_performance,distance\n"
           << r.descriptor.to_string(' ') << ',' << detail::fmt(r.stored, 17) << ',' << detail::fmt(r.distance, 17)
           << '\n';
    }
    manifest.output("eval", r.csv_path);
    manifest.write();
    return r;
}

struct ExportResult {
    std::filesystem::path cells_path;
    std::filesystem::path stats_path;
};

/// Cell table and one summary stats row of an archive file.
inline ExportResult cmd_export(const std::filesystem::path& archive_path, const std::filesystem::path& out_dir) {
    const Archive archive = Archive::load(archive_path);
    detail::prepare_dir(out_dir);
    RunManifest manifest("export", out_dir);
    manifest.input("archive", archive_path);
    ExportResult r{out_dir / "cells.csv", out_dir / "summary.csv"};
    {
        auto os = detail::open_out(r.cells_path);
        write_cells_csv(os, archive);
    }
    {
        auto os = detail::open_out(r.stats_path);
        write_stats_header(os);
        write_stats_row(os, archive.stats());
    }
    manifest.output("cells", r.cells_path);
    manifest.output("summary", r.stats_path);
    manifest.write();
    return r;
}

} // namespace mmprl
