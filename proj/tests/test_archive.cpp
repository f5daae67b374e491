#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "mmprl/archive.hpp"

using namespace mmprl;

namespace {

Descriptor cell(std::initializer_list<int> c) {
    Descriptor d;
    for (int v : c) d.coords.push_back(static_cast<std::uint8_t>(v));
    return d;
}

const std::vector<double> none;

} // namespace

TEST(Quantize, EvenlySpacedLevelsWithTiesDown) {
    const std::vector<double> f{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    EXPECT_EQ(quantize_stance(f).coords, (std::vector<std::uint8_t>{0, 1, 2, 2, 3, 4}));
    // 0.125 is exactly half-way between levels 0 and 1.
    EXPECT_EQ(quantize_stance(std::vector<double>{0.125, 0.375, 0.625, 0.875}).coords,
              (std::vector<std::uint8_t>{0, 1, 2, 3}));
}

TEST(Quantize, BinCentresAreFixedPoints) {
    for (std::size_t bins : {1u, 2u, 5u, 7u}) {
        for (std::size_t k = 0; k < bins; ++k) {
            const Descriptor d{{static_cast<std::uint8_t>(k)}};
            EXPECT_EQ(quantize_stance(dequantize(d, bins), bins), d);
        }
    }
}

TEST(Quantize, RejectsOutOfRangeFractions) {
    EXPECT_THROW(quantize_stance(std::vector<double>{1.01}), DomainError);
    EXPECT_THROW(quantize_stance(std::vector<double>{-0.01}), DomainError);
    EXPECT_THROW(quantize_stance(std::vector<double>{std::nan("")}), DomainError);
}

TEST(JointSignature, DifferenceAndSumPerPair) {
    // Two joints, 10 steps: difference sums to 0.5, sum to 0.5.
    std::vector<std::vector<double>> angles(10, {0.0, 0.05});
    const std::vector<JointPair> pairs{{0, 1}};
    const auto d = joint_signature_descriptor(angles, pairs, {0.0, 1.0}, {0.0, 1.0});
    EXPECT_EQ(d.coords, (std::vector<std::uint8_t>{2, 2}));
}

TEST(JointSignature, SymmetricMotionHasZeroDifference) {
    std::vector<std::vector<double>> angles;
    for (int t = 0; t < 20; ++t) angles.push_back({std::sin(t * 0.3), std::sin(t * 0.3)});
    const std::vector<JointPair> pairs{{0, 1}};
    const auto d = joint_signature_descriptor(angles, pairs, {0.0, 4.0}, {0.0, 40.0});
    EXPECT_EQ(d.coords[0], 0);
    EXPECT_GT(d.coords[1], 0);
}

TEST(JointSignature, OppositeMotionHasZeroSum) {
    std::vector<std::vector<double>> angles;
    for (int t = 0; t < 20; ++t) angles.push_back({std::sin(t * 0.3), -std::sin(t * 0.3)});
    const std::vector<JointPair> pairs{{0, 1}};
    const auto d = joint_signature_descriptor(angles, pairs, {0.0, 40.0}, {0.0, 4.0});
    EXPECT_GT(d.coords[0], 0);
    EXPECT_EQ(d.coords[1], 0);
}

TEST(JointSignature, InvalidBoundsAndIndices) {
    std::vector<std::vector<double>> angles(3, {0.0, 0.0});
    const std::vector<JointPair> pairs{{0, 1}}, bad{{0, 2}};
    EXPECT_THROW(joint_signature_descriptor(angles, pairs, {1.0, 1.0}, {0.0, 1.0}), ConfigError);
    EXPECT_THROW(joint_signature_descriptor(angles, pairs, {0.0, 1.0}, {2.0, 1.0}), ConfigError);
    EXPECT_THROW(joint_signature_descriptor(angles, bad, {0.0, 1.0}, {0.0, 1.0}), DomainError);
}

TEST(Archive, InsertOutcomes) {
    Archive a(ArchiveDims{2, 5}, {});
    const auto c = cell({1, 3});
    EXPECT_EQ(a.try_insert(c, 3.0, none, none), InsertOutcome::new_cell);
    EXPECT_EQ(a.try_insert(c, 3.0, none, none), InsertOutcome::rejected); // equal is not better
    EXPECT_EQ(a.try_insert(c, 6.0, none, none), InsertOutcome::improved);
    EXPECT_EQ(a.try_insert(c, 4.0, none, none), InsertOutcome::rejected);
    EXPECT_EQ(a.find(c)->performance, 6.0);
    EXPECT_EQ(a.update_counter(), 4u);
    EXPECT_EQ(a.try_insert(cell({0, 0}), std::nan(""), none, none), InsertOutcome::rejected);
    EXPECT_EQ(a.size(), 1u);
}

TEST(Archive, InsertValidation) {
    Archive a(ArchiveDims{2, 5}, {2, 1});
    const std::vector<double> p(3, 0.0);
    EXPECT_THROW(a.try_insert(cell({5, 0}), 1.0, p, none), DomainError);
    EXPECT_THROW(a.try_insert(cell({0, 0, 0}), 1.0, p, none), DomainError);
    EXPECT_THROW(a.try_insert(cell({0, 0}), 1.0, std::vector<double>(2), none), ShapeError);
}

TEST(Archive, ElitismUnderRandomInserts) {
    std::mt19937_64 rng(12);
    Archive a(ArchiveDims{3, 4}, {});
    std::map<Descriptor, double> best;
    std::uniform_int_distribution<int> coord(0, 3);
    std::normal_distribution<double> perf(0.0, 1.0);
    for (int i = 0; i < 10'000; ++i) {
        const auto d = cell({coord(rng), coord(rng), coord(rng)});
        const double before = a.find(d) ? a.find(d)->performance : -INFINITY;
        const double p = perf(rng);
        a.try_insert(d, p, none, none);
        const double after = a.find(d)->performance;
        ASSERT_GE(after, before);
        best[d] = std::max(best.contains(d) ? best[d] : -INFINITY, p);
    }
    EXPECT_EQ(a.size(), best.size());
    for (const auto& [d, p] : best) EXPECT_EQ(a.find(d)->performance, p);
}

TEST(Archive, ConcurrentInsertsKeepMaxAndCount) {
    Archive a(ArchiveDims{2, 3}, {});
    constexpr int threads = 8, per = 2000;
    std::vector<std::vector<std::pair<Descriptor, double>>> plan(threads);
    std::map<Descriptor, double> best;
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> coord(0, 2);
    std::uniform_real_distribution<double> perf(0.0, 100.0);
    for (auto& p : plan) {
        for (int i = 0; i < per; ++i) {
            const auto d = cell({coord(rng), coord(rng)});
            const double v = perf(rng);
            p.emplace_back(d, v);
            best[d] = std::max(best.contains(d) ? best[d] : -1.0, v);
        }
    }
    {
        std::vector<std::jthread> pool;
        for (auto& p : plan) {
            pool.emplace_back([&a, &p] {
                for (const auto& [d, v] : p) a.try_insert(d, v, none, none);
            });
        }
    }
    EXPECT_EQ(a.update_counter(), static_cast<std::uint64_t>(threads * per));
    for (const auto& [d, v] : best) EXPECT_EQ(a.find(d)->performance, v);
}

TEST(Archive, RandomCellIsUniform) {
    Archive one(ArchiveDims{1, 3}, {});
    one.try_insert(cell({2}), 1.0, none, none);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(one.random_cell(rng).descriptor, cell({2}));

    Archive a(ArchiveDims{1, 5}, {});
    for (int i = 0; i < 4; ++i) a.try_insert(cell({i}), 1.0, none, none);
    std::map<Descriptor, int> counts;
    constexpr int n = 40'000;
    for (int i = 0; i < n; ++i) ++counts[a.random_cell(rng).descriptor];
    ASSERT_EQ(counts.size(), 4u);
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (const auto& [d, c] : counts) EXPECT_LT(std::abs(c - n * 0.25), 5 * sd) << d.to_string();

    EXPECT_THROW(Archive(ArchiveDims{1, 5}, {}).random_cell(rng), EmptyArchiveError);
}

TEST(Archive, Stats) {
    Archive a(ArchiveDims{6, 5}, {});
    auto s = a.stats();
    EXPECT_EQ(s.occupied, 0u);
    EXPECT_FALSE(s.mean.has_value());
    EXPECT_FALSE(s.max.has_value());

    a.try_insert(cell({0, 0, 0, 0, 0, 0}), 2.0, none, none);
    s = a.stats();
    EXPECT_EQ(s.occupied, 1u);
    EXPECT_DOUBLE_EQ(s.occupancy_ratio, 1.0 / 15625.0);
    EXPECT_EQ(*s.mean, 2.0);
    EXPECT_EQ(*s.stddev, 0.0);
    EXPECT_EQ(*s.max, 2.0);

    a.try_insert(cell({0, 0, 0, 0, 0, 1}), 1.0, none, none);
    a.try_insert(cell({0, 0, 0, 0, 0, 2}), 3.0, none, none);
    a.try_insert(cell({0, 0, 0, 0, 0, 0}), 1.0, none, none); // rejected, counted
    s = a.stats();
    EXPECT_EQ(s.update_counter, 4u);
    EXPECT_DOUBLE_EQ(*s.mean, 2.0);
    EXPECT_NEAR(*s.stddev, std::sqrt(2.0 / 3.0), 1e-15);
    EXPECT_DOUBLE_EQ(*s.p25, 1.5);
    EXPECT_DOUBLE_EQ(*s.p75, 2.5);
}

TEST(Archive, BestBreaksTiesLexicographically) {
    Archive a(ArchiveDims{2, 5}, {});
    EXPECT_FALSE(a.best().has_value());
    a.try_insert(cell({3, 1}), 5.0, none, none);
    a.try_insert(cell({1, 4}), 5.0, none, none);
    a.try_insert(cell({2, 2}), 4.0, none, none);
    EXPECT_EQ(a.best()->descriptor, cell({1, 4}));
}

TEST(Archive, SnapshotHookFiresEveryN) {
    Archive a(ArchiveDims{1, 5}, {});
    std::vector<std::uint64_t> seen;
    a.set_snapshot_hook(3, [&](const ArchiveStats& s) { seen.push_back(s.update_counter); });
    for (int i = 0; i < 10; ++i) a.try_insert(cell({i % 5}), i, none, none);
    EXPECT_EQ(seen, (std::vector<std::uint64_t>{3, 6, 9}));
}

TEST(ArchiveIo, EmptyRoundTrip) {
    Archive a(ArchiveDims{6, 5}, {20, 8, 12}, {20, 12, 4, 4, 6, 1});
    std::stringstream ss;
    a.save(ss);
    EXPECT_EQ(Archive::load(ss), a);
}

TEST(ArchiveIo, HundredCellRoundTripIsExact) {
    const std::vector<std::size_t> sizes{4, 3, 2};
    Archive a(ArchiveDims{4, 5}, sizes);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    std::uniform_int_distribution<int> coord(0, 4);
    std::vector<double> p(Mlp::param_count(sizes));
    while (a.size() < 100) {
        for (auto& v : p) v = n(rng);
        a.try_insert(cell({coord(rng), coord(rng), coord(rng), coord(rng)}), n(rng), p, none);
    }
    std::stringstream ss;
    a.save(ss);
    const auto bytes = ss.str();
    const auto b = Archive::load(ss);
    EXPECT_EQ(b, a);
    std::stringstream again;
    b.save(again);
    EXPECT_EQ(again.str(), bytes);
}

TEST(ArchiveIo, CorruptionIsDetected) {
    const std::vector<std::size_t> sizes{2, 2};
    Archive a(ArchiveDims{2, 5}, sizes);
    const std::vector<double> p(6, 0.5);
    a.try_insert(cell({0, 1}), 1.0, p, none);
    a.try_insert(cell({2, 3}), 2.0, p, none);
    std::stringstream ss;
    a.save(ss);
    const auto bytes = ss.str();

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    std::istringstream m(bad_magic);
    EXPECT_THROW(Archive::load(m), FormatError);

    std::istringstream cut(bytes.substr(0, bytes.size() - 5));
    try {
        Archive::load(cut);
        FAIL() << "truncated archive loaded";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("cell 1"), std::string::npos) << e.what();
    }
}
