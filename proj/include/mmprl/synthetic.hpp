#pragma once

// Synthetic "changed conditions" for adaptation experiments: the post-change
// performance of a cell is a pure function of its coordinate and stored
// performance, so the true optimum is known by exhaustive scan.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <utility>

#include "archive.hpp"
#include "mboa.hpp"

namespace mmprl {

using Perturbation = std::function<double(const Descriptor&, double stored)>;
using CellPredicate = std::function<bool(const Descriptor&)>;

namespace perturb {

inline Perturbation identity() {
    return [](const Descriptor&, double p) { return p; };
}

inline Perturbation zero_all() {
    return [](const Descriptor&, double) { return 0.0; };
}

inline Perturbation zero_where(CellPredicate pred) {
    return [pred = std::move(pred)](const Descriptor& d, double p) { return pred(d) ? 0.0 : p; };
}

inline Perturbation scale_where(CellPredicate pred, double factor) {
    return [pred = std::move(pred), factor](const Descriptor& d, double p) { return pred(d) ? p * factor : p; };
}

/// Gaussian noise that is a fixed function of (seed, coordinate).
inline Perturbation additive_noise(double stddev, std::uint64_t seed) {
    return [stddev, seed](const Descriptor& d, double p) {
        std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ULL;
        for (auto c : d.coords) h = (h ^ c) * 0x100000001B3ULL;
        std::mt19937_64 rng(h);
        std::normal_distribution<double> n(0.0, stddev);
        return p + n(rng);
    };
}

/// Cells within `radius` bins of `centre` in every dimension.
inline CellPredicate box_around(Descriptor centre, int radius) {
    return [centre = std::move(centre), radius](const Descriptor& d) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (std::abs(static_cast<int>(d.coords[i]) - static_cast<int>(centre.coords[i])) > radius) return false;
        }
        return true;
    };
}

} // namespace perturb

inline Evaluator synthetic_perturbation_env(const Archive& archive, Perturbation perturbation) {
    if (archive.empty()) throw EmptyArchiveError("synthetic environment over an empty archive");
    return [perturbation = std::move(perturbation)](const ArchiveCell& cell) {
        return perturbation(cell.descriptor, cell.performance);
    };
}

struct TrueOptimum {
    Descriptor descriptor;
    double performance = -std::numeric_limits<double>::infinity();
};

/// Exhaustive scan; ties go to the lexicographically smallest coordinate.
inline TrueOptimum true_optimum(const Archive& archive, const Perturbation& perturbation) {
    TrueOptimum best;
    bool found = false;
    for (const auto& c : archive.cells()) {
        const double v = perturbation(c.descriptor, c.performance);
        if (!found || v > best.performance || (v == best.performance && c.descriptor < best.descriptor)) {
            best = {c.descriptor, v};
            found = true;
        }
    }
    if (!found) throw EmptyArchiveError("true optimum of an empty archive");
    return best;
}

} // namespace mmprl
