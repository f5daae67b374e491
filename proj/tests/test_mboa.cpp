#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "mmprl/mboa.hpp"
#include "mmprl/synthetic.hpp"
#include "oracles.hpp"

using namespace mmprl;

namespace {

Descriptor cell(std::initializer_list<int> c) {
    Descriptor d;
    for (int v : c) d.coords.push_back(static_cast<std::uint8_t>(v));
    return d;
}

const std::vector<double> none;

// Every cell of a dims x bins grid, with a smooth-ish random landscape.
Archive full_grid(std::size_t dims, std::size_t bins, std::uint64_t seed) {
    Archive a(ArchiveDims{dims, bins}, {});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = ArchiveDims{dims, bins}.capacity();
    for (std::size_t k = 0; k < n; ++k) {
        Descriptor d;
        std::size_t r = k;
        for (std::size_t i = 0; i < dims; ++i) {
            d.coords.push_back(static_cast<std::uint8_t>(r % bins));
            r /= bins;
        }
        a.try_insert(d, 1.0 + u(rng), none, none);
    }
    return a;
}

std::vector<std::vector<int>> as_ints(const std::vector<ArchiveCell>& cells) {
    std::vector<std::vector<int>> out;
    for (const auto& c : cells) out.emplace_back(c.descriptor.coords.begin(), c.descriptor.coords.end());
    return out;
}

} // namespace

TEST(Matern, KnownValues) {
    EXPECT_EQ(matern(0.0, 0.3), 1.0);
    const double at_rho = (1.0 + std::sqrt(5.0) + 5.0 / 3.0) * std::exp(-std::sqrt(5.0));
    EXPECT_NEAR(matern(0.3, 0.3), at_rho, 1e-15);
    EXPECT_NEAR(matern(0.7, 1.0, MaternOrder::half), std::exp(-0.7), 1e-15);
    EXPECT_NEAR(matern(0.7, 1.0, MaternOrder::three_halves), (1 + std::sqrt(3.0) * 0.7) * std::exp(-std::sqrt(3.0) * 0.7),
                1e-15);
    EXPECT_THROW(matern(0.1, 0.0), ConfigError);
}

TEST(Matern, KernelIsSymmetricAndDecreasing) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> c(0, 4);
    for (int i = 0; i < 200; ++i) {
        const auto x = cell({c(rng), c(rng), c(rng)}), y = cell({c(rng), c(rng), c(rng)});
        EXPECT_EQ(matern_kernel(x, y, 5, 0.3), matern_kernel(y, x, 5, 0.3));
        EXPECT_EQ(matern_kernel(x, x, 5, 0.3), 1.0);
    }
    double prev = 1.0;
    for (double d = 0.01; d < 3.0; d += 0.01) {
        const double k = matern(d, 0.3);
        EXPECT_LT(k, prev);
        prev = k;
    }
}

TEST(GpPosterior, NoObservationsGivesPrior) {
    const auto a = full_grid(2, 5, 1);
    GpPosterior gp(a, GpConfig{});
    for (std::size_t i = 0; i < gp.cells().size(); ++i) {
        const auto m = gp.posterior_at(i);
        EXPECT_EQ(m.mean, gp.cells()[i].performance);
        EXPECT_EQ(m.variance, 1.0);
    }
}

TEST(GpPosterior, ObservingThePriorLeavesMeanAndShrinksVariance) {
    const auto a = full_grid(2, 5, 1);
    GpConfig cfg;
    GpPosterior gp(a, cfg);
    const std::size_t i = 7;
    gp.add_observation(i, gp.cells()[i].performance);
    const auto all = gp.posterior_all();
    for (std::size_t j = 0; j < all.size(); ++j) EXPECT_NEAR(all[j].mean, gp.cells()[j].performance, 1e-15);
    EXPECT_NEAR(all[i].variance, 1.0 - 1.0 / (1.0 + cfg.noise_variance), 1e-12);
}

TEST(GpPosterior, MatchesEliminationOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto a = full_grid(2, 5, seed);
        GpConfig cfg;
        GpPosterior gp(a, cfg);
        std::mt19937_64 rng(seed + 100);
        std::uniform_int_distribution<std::size_t> pick(0, gp.cells().size() - 1);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<std::size_t> obs_cell;
        std::vector<double> obs_perf;
        std::vector<double> prior;
        for (const auto& c : gp.cells()) prior.push_back(c.performance);
        for (int t = 0; t < 6; ++t) {
            std::size_t k = pick(rng);
            while (std::find(obs_cell.begin(), obs_cell.end(), k) != obs_cell.end()) k = pick(rng);
            obs_cell.push_back(k);
            obs_perf.push_back(n(rng));
            gp.add_observation(k, obs_perf.back());
        }
        const auto want = oracle::gp(as_ints(gp.cells()), prior, obs_cell, obs_perf, 5, cfg.rho, cfg.noise_variance);
        const auto got = gp.posterior_all();
        for (std::size_t j = 0; j < got.size(); ++j) {
            EXPECT_NEAR(got[j].mean, want.mean[j], 1e-8) << "seed " << seed << " cell " << j;
            EXPECT_NEAR(got[j].variance, want.var[j], 1e-8) << "seed " << seed << " cell " << j;
            const auto single = gp.posterior_at(j);
            EXPECT_NEAR(single.mean, got[j].mean, 1e-12);
            EXPECT_NEAR(single.variance, got[j].variance, 1e-12);
        }
    }
}

TEST(GpPosterior, InterpolatesWithTinyNoise) {
    const auto a = full_grid(2, 5, 3);
    GpConfig cfg;
    cfg.noise_variance = 1e-12;
    GpPosterior gp(a, cfg);
    const std::vector<std::pair<std::size_t, double>> obs{{0, 4.0}, {12, -1.0}, {24, 2.5}};
    for (auto [i, v] : obs) gp.add_observation(i, v);
    for (auto [i, v] : obs) {
        EXPECT_NEAR(gp.posterior_at(i).mean, v, 1e-6);
        EXPECT_NEAR(gp.posterior_at(i).variance, 0.0, 1e-6);
    }
}

TEST(GpPosterior, VarianceNeverGrowsWithData) {
    const auto a = full_grid(3, 4, 5);
    GpPosterior gp(a, GpConfig{});
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> pick(0, gp.cells().size() - 1);
    auto prev = gp.posterior_all();
    for (int t = 0; t < 15; ++t) {
        gp.add_observation(pick(rng), 1.0);
        const auto cur = gp.posterior_all();
        for (std::size_t j = 0; j < cur.size(); ++j) ASSERT_LE(cur[j].variance, prev[j].variance + 1e-9);
        prev = cur;
    }
}

TEST(GpPosterior, ShiftingPriorAndObservationsShiftsMean) {
    const auto a = full_grid(2, 5, 4);
    Archive shifted(ArchiveDims{2, 5}, {});
    for (const auto& c : a.cells()) shifted.try_insert(c.descriptor, c.performance + 10.0, none, none);
    GpPosterior g1(a, GpConfig{}), g2(shifted, GpConfig{});
    for (std::size_t i : {3u, 9u, 17u}) {
        g1.add_observation(i, 0.5 * static_cast<double>(i));
        g2.add_observation(i, 0.5 * static_cast<double>(i) + 10.0);
    }
    const auto m1 = g1.posterior_all(), m2 = g2.posterior_all();
    for (std::size_t j = 0; j < m1.size(); ++j) {
        EXPECT_NEAR(m2[j].mean, m1[j].mean + 10.0, 1e-9);
        EXPECT_NEAR(m2[j].variance, m1[j].variance, 1e-12);
    }
}

TEST(GpPosterior, RejectsUnoccupiedAndNonFinite) {
    Archive a(ArchiveDims{2, 5}, {});
    a.try_insert(cell({1, 1}), 1.0, none, none);
    GpPosterior gp(a, GpConfig{});
    EXPECT_THROW(gp.posterior(cell({0, 0})), DomainError);
    EXPECT_THROW(gp.add_observation(cell({0, 0}), 1.0), DomainError);
    EXPECT_THROW(gp.add_observation(0, std::nan("")), NumericError);
    EXPECT_THROW(GpPosterior(Archive(ArchiveDims{2, 5}, {}), GpConfig{}), EmptyArchiveError);
}

TEST(GpPosterior, RepeatedObservationsNeedNoJitterWithNoise) {
    Archive a(ArchiveDims{1, 5}, {});
    a.try_insert(cell({2}), 1.0, none, none);
    GpPosterior gp(a, GpConfig{});
    for (int i = 0; i < 20; ++i) gp.add_observation(0, 1.0 + 0.01 * i);
    EXPECT_EQ(gp.effective_noise(), GpConfig{}.noise_variance);
}

TEST(GpPosterior, JitterEscalatesOnSingularGram) {
    Archive a(ArchiveDims{1, 5}, {});
    a.try_insert(cell({2}), 1.0, none, none);
    GpConfig cfg;
    cfg.noise_variance = 0.0;
    GpPosterior gp(a, cfg);
    gp.add_observation(0, 1.0);
    gp.add_observation(0, 1.2);
    EXPECT_GT(gp.effective_noise(), 0.0);
    EXPECT_TRUE(std::isfinite(gp.posterior_at(0).mean));
}

TEST(SelectNext, KappaZeroPicksMaxMean) {
    Archive a(ArchiveDims{2, 5}, {});
    a.try_insert(cell({0, 0}), 1.0, none, none);
    a.try_insert(cell({4, 4}), 3.0, none, none);
    a.try_insert(cell({2, 0}), 2.0, none, none);
    GpConfig cfg;
    cfg.kappa = 0.0;
    EXPECT_EQ(GpPosterior(a, cfg).select_next(), cell({4, 4}));
}

TEST(SelectNext, TiesGoToSmallestCoordinate) {
    Archive a(ArchiveDims{2, 5}, {});
    a.try_insert(cell({3, 0}), 2.0, none, none);
    a.try_insert(cell({1, 4}), 2.0, none, none);
    a.try_insert(cell({1, 2}), 2.0, none, none);
    EXPECT_EQ(GpPosterior(a, GpConfig{}).select_next(), cell({1, 2}));
}

TEST(SelectNext, MatchesExhaustiveUcbOnThreeCells) {
    Archive a(ArchiveDims{2, 5}, {});
    a.try_insert(cell({0, 0}), 1.0, none, none);
    a.try_insert(cell({0, 1}), 1.2, none, none);
    a.try_insert(cell({4, 4}), 0.9, none, none);
    GpConfig cfg;
    cfg.kappa = 2.0;
    GpPosterior gp(a, cfg);
    gp.add_observation(cell({0, 1}), 0.2);
    const auto prior = std::vector<double>{1.0, 1.2, 0.9};
    const auto want = oracle::gp({{0, 0}, {0, 1}, {4, 4}}, prior, {1}, {0.2}, 5, cfg.rho, cfg.noise_variance);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < 3; ++j) {
        if (want.mean[j] + 2.0 * std::sqrt(want.var[j]) > want.mean[arg] + 2.0 * std::sqrt(want.var[arg])) arg = j;
    }
    EXPECT_EQ(gp.select_next(), gp.cells()[arg].descriptor);
}

TEST(Adapt, UnchangedConditionsStopAtFirstTrial) {
    const auto a = full_grid(2, 5, 6);
    const auto r = adapt(a, synthetic_perturbation_env(a, perturb::identity()), GpConfig{}, 20);
    EXPECT_EQ(r.trials, 1u);
    EXPECT_EQ(r.reason, StopReason::alpha_reached);
    EXPECT_EQ(r.best->descriptor, a.best()->descriptor);
    EXPECT_TRUE(r.trace.back().stopped);
}

TEST(Adapt, MaxTrialsCapsEvaluations) {
    const auto a = full_grid(2, 5, 6);
    std::size_t calls = 0;
    Evaluator eval = [&](const ArchiveCell&) {
        ++calls;
        return -5.0;
    };
    const auto r = adapt(a, eval, GpConfig{}, 1);
    EXPECT_EQ(calls, 1u);
    EXPECT_EQ(r.trials, 1u);
    EXPECT_EQ(r.reason, StopReason::max_trials);
    calls = 0;
    adapt(a, eval, GpConfig{}, 7);
    EXPECT_LE(calls, 7u);
}

TEST(Adapt, FailedEvaluationIsLoggedAndSkipped) {
    const auto a = full_grid(2, 5, 6);
    const auto first = a.best()->descriptor;
    Evaluator eval = [&](const ArchiveCell& c) -> double {
        if (c.descriptor == first) throw std::runtime_error("simulator blew up");
        return c.performance;
    };
    const auto r = adapt(a, eval, GpConfig{}, 20);
    ASSERT_GE(r.trace.size(), 2u);
    EXPECT_EQ(r.trace[0].coords, first);
    EXPECT_TRUE(std::isinf(r.trace[0].observed) && r.trace[0].observed < 0);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_NE(r.trace[i].coords, first);
    EXPECT_TRUE(r.best.has_value());
}

TEST(Adapt, AllCellsFailingExhaustsTheMap) {
    Archive a(ArchiveDims{1, 5}, {});
    a.try_insert(cell({0}), 1.0, none, none);
    a.try_insert(cell({3}), 2.0, none, none);
    Evaluator eval = [](const ArchiveCell&) -> double { throw std::runtime_error("down"); };
    const auto r = adapt(a, eval, GpConfig{}, 20);
    EXPECT_EQ(r.reason, StopReason::exhausted);
    EXPECT_EQ(r.trials, 2u);
    EXPECT_FALSE(r.best.has_value());
}

TEST(Adapt, ZeroEverywhereStillTerminates) {
    const auto a = full_grid(2, 5, 8);
    const auto r = adapt(a, synthetic_perturbation_env(a, perturb::zero_all()), GpConfig{}, 20);
    EXPECT_LE(r.trials, 20u);
    EXPECT_EQ(r.best_performance, 0.0);
}

TEST(Adapt, FindsOptimumOutsideZeroedRegion) {
    const auto a = full_grid(3, 5, 10);
    const auto pert = perturb::zero_where([](const Descriptor& d) { return d.coords[0] >= 2; });
    const auto truth = true_optimum(a, pert);
    const auto r = adapt(a, synthetic_perturbation_env(a, pert), GpConfig{}, 60);
    EXPECT_GE(r.best_performance, 0.95 * truth.performance);
    EXPECT_LT(r.best->descriptor.coords[0], 2);
}

TEST(Adapt, TraceCsvHasHeaderAndRows) {
    const auto a = full_grid(2, 5, 6);
    const auto r = adapt(a, synthetic_perturbation_env(a, perturb::zero_all()), GpConfig{}, 4);
    std::ostringstream os;
    write_adapt_trace_header(os);
    write_adapt_trace_rows(os, r);
    const auto text = os.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), r.trace.size() + 1);
    EXPECT_EQ(text.rfind("trial,coords,observed_perf,posterior_max,ucb_max,stopped\n", 0), 0u);
}
