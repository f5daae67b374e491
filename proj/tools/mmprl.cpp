// Command-line driver: map creation, the MAP-Elites baseline, adaptation,
// single-policy evaluation and archive export.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 data/format
// error, 4 numeric failure, 1 anything else.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmprl/experiment.hpp"

namespace {

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

void print_archive_summary(const mmprl::MapRunResult& r) {
    const auto s = r.archive.stats();
    std::cout << "cells " << s.occupied << " / updates " << s.update_counter;
    if (s.max) std::cout << " / best " << *s.max;
    std::cout << "\narchive " << r.archive_path.string() << "\nmanifest " << r.manifest_path.string() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMPRL behaviour-performance maps: create, compare, adapt"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mmprl::version_string);

    mmprl::RunOptions opt;
    opt.log = log_line;
    std::string archive_path;
    std::string cell = "best";
    std::size_t n_seeds = 1;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("-c,--config", opt.config, "experiment config file");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        sub->add_option("-o,--out", opt.out_dir, "output directory")->required();
        sub->add_option("--seed", opt.seed, "base random seed")->capture_default_str();
    };

    auto* create = app.add_subcommand("create-map", "build a map with several DDPG agents");
    add_common(create, true);
    create->add_option("--workers", opt.workers, "worker threads (default: one per agent)");

    auto* baseline = app.add_subcommand("baseline-mapelites", "build a map by random perturbation");
    add_common(baseline, true);

    auto* adapt = app.add_subcommand("adapt", "search a map for a policy that works after a change");
    add_common(adapt, true);
    adapt->add_option("-a,--archive", archive_path, "archive file")->required()->check(CLI::ExistingFile);
    adapt->add_option("--seeds", n_seeds, "number of seeds starting at --seed (batch mode when > 1)")
        ->capture_default_str();

    auto* eval = app.add_subcommand("eval", "roll out one archived policy");
    add_common(eval, true);
    eval->add_option("-a,--archive", archive_path, "archive file")->required()->check(CLI::ExistingFile);
    eval->add_option("--cell", cell, "'best' or space/comma separated coordinates")->capture_default_str();

    auto* exp = app.add_subcommand("export", "write an archive as CSV");
    exp->add_option("-a,--archive", archive_path, "archive file")->required()->check(CLI::ExistingFile);
    exp->add_option("-o,--out", opt.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(mmprl::ExitCode::config);
    }

    try {
        if (*create) {
            print_archive_summary(mmprl::cmd_create_map(opt));
        } else if (*baseline) {
            print_archive_summary(mmprl::cmd_baseline(opt));
        } else if (*adapt) {
            const auto r = mmprl::cmd_adapt(opt, archive_path, n_seeds);
            if (r.seeds.size() == 1) {
                const auto& s = r.seeds.front();
                std::cout << "trials " << s.result.trials << "\nbest_performance " << s.result.best_performance
                          << "\nbest_coords " << (s.result.best ? s.result.best->descriptor.to_string(' ') : "")
                          << "\nstop " << mmprl::to_string(s.result.reason) << '\n';
            } else {
                std::cout << "seeds " << r.seeds.size() << "\nmedian_trials " << r.median_trials
                          << "\nmedian_best_performance " << r.median_best << '\n';
            }
            std::cout << "summary " << r.summary_path.string() << '\n';
        } else if (*eval) {
            const auto r = mmprl::cmd_eval(opt, archive_path, cell);
            std::cout.precision(17);
            std::cout << "coords " << r.descriptor.to_string(' ') << "\nstored " << r.stored << "\ndistance "
                      << r.distance << '\n';
        } else if (*exp) {
            const auto r = mmprl::cmd_export(archive_path, opt.out_dir);
            std::cout << "cells " << r.cells_path.string() << "\nsummary " << r.stats_path.string() << '\n';
        }
    } catch (const mmprl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(mmprl::ExitCode::failure);
    }
    return 0;
}
