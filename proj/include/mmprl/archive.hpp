#pragma once

// Behavior-performance map: a D-dimensional grid with B bins per dimension,
// holding at most one (actor, critic, performance) entry per cell. All public
// operations are serialized through one mutex, so concurrent inserters see a
// linearizable history and elitism holds under any interleaving.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "binary_io.hpp"
#include "errors.hpp"
#include "nnet.hpp"

namespace mmprl {

struct Descriptor {
    std::vector<std::uint8_t> coords;

    auto operator<=>(const Descriptor&) const = default;
    bool operator==(const Descriptor&) const = default;

    std::size_t size() const noexcept { return coords.size(); }

    std::string to_string(char sep = ' ') const {
        std::string s;
        for (std::size_t i = 0; i < coords.size(); ++i) {
            if (i) s += sep;
            s += std::to_string(coords[i]);
        }
        return s;
    }
};

struct ArchiveDims {
    std::size_t dims = 6;
    std::size_t bins = 5;

    std::size_t capacity() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i < dims; ++i) n *= bins;
        return n;
    }
    auto operator<=>(const ArchiveDims&) const = default;
};

namespace detail {

// Nearest of `bins` evenly spaced levels on [0, 1]; exact halves go down.
inline std::uint8_t nearest_bin(double u, std::size_t bins) {
    if (bins == 1) return 0;
    const double x = u * static_cast<double>(bins - 1);
    const double k = std::ceil(x - 0.5);
    return static_cast<std::uint8_t>(std::clamp(k, 0.0, static_cast<double>(bins - 1)));
}

} // namespace detail

inline Descriptor quantize_stance(std::span<const double> fractions, std::size_t bins = 5) {
    if (bins == 0 || bins > 256) throw ConfigError("bins per dimension must lie in [1, 256]");
    Descriptor d;
    d.coords.reserve(fractions.size());
    for (double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0)) throw DomainError("stance fraction " + std::to_string(f) + " outside [0, 1]");
        d.coords.push_back(detail::nearest_bin(f, bins));
    }
    return d;
}

/// Bin centre of each coordinate on [0, 1].
inline std::vector<double> dequantize(const Descriptor& d, std::size_t bins) {
    std::vector<double> out;
    out.reserve(d.size());
    for (auto c : d.coords) out.push_back(bins > 1 ? static_cast<double>(c) / static_cast<double>(bins - 1) : 0.0);
    return out;
}

struct JointPair {
    std::size_t i = 0;
    std::size_t j = 0;
};

struct SignatureBounds {
    double min = 0.0;
    double max = 1.0;
};

/// Joint-signature descriptor: for every pair, the summed absolute difference
/// and the summed absolute sum of the two joint-angle traces, each clamped to
/// its bounds and quantized into `bins` levels. Output order per pair is
/// (difference, sum).
inline Descriptor joint_signature_descriptor(const std::vector<std::vector<double>>& angles,
                                             std::span<const JointPair> pairs, SignatureBounds diff_bounds,
                                             SignatureBounds sum_bounds, std::size_t bins = 5) {
    if (!(diff_bounds.min < diff_bounds.max) || !(sum_bounds.min < sum_bounds.max)) {
        throw ConfigError("joint signature: min bound must be below max bound");
    }
    if (angles.empty()) throw DomainError("joint signature of an empty trace");
    const std::size_t n_joints = angles.front().size();
    for (const auto& p : pairs) {
        if (p.i >= n_joints || p.j >= n_joints) throw DomainError("joint signature: joint index out of range");
    }
    auto quantize = [bins](double v, SignatureBounds b) {
        const double u = (std::clamp(v, b.min, b.max) - b.min) / (b.max - b.min);
        return detail::nearest_bin(u, bins);
    };
    Descriptor d;
    for (const auto& p : pairs) {
        double diff = 0.0;
        double sum = 0.0;
        for (const auto& step : angles) {
            if (step.size() != n_joints) throw ShapeError("joint signature: ragged angle trace");
            diff += std::abs(step[p.j] - step[p.i]);
            sum += std::abs(step[p.j] + step[p.i]);
        }
        d.coords.push_back(quantize(diff, diff_bounds));
        d.coords.push_back(quantize(sum, sum_bounds));
    }
    return d;
}

struct ArchiveCell {
    Descriptor descriptor;
    double performance = 0.0;
    std::vector<double> actor_params;
    std::vector<double> critic_params;

    bool operator==(const ArchiveCell&) const = default;
};

enum class InsertOutcome : std::uint8_t { new_cell, improved, rejected };

inline const char* to_string(InsertOutcome o) {
    switch (o) {
    case InsertOutcome::new_cell: return "new";
    case InsertOutcome::improved: return "improved";
    case InsertOutcome::rejected: return "rejected";
    }
    return "?";
}

/// Moments are empty on an empty archive.
struct ArchiveStats {
    std::uint64_t update_counter = 0;
    std::size_t occupied = 0;
    double occupancy_ratio = 0.0;
    std::optional<double> mean;
    std::optional<double> stddev; // population
    std::optional<double> p25;
    std::optional<double> p75;
    std::optional<double> max;
};

inline void write_stats_header(std::ostream& os) { os << "update_counter,occupied,ratio,mean,p25,p75,max\n"; }

inline void write_stats_row(std::ostream& os, const ArchiveStats& s) {
    auto opt = [](const std::optional<double>& v) {
        std::ostringstream ss;
        ss.precision(10);
        if (v) ss << *v;
        else ss << "nan";
        return ss.str();
    };
    std::ostringstream ratio;
    ratio.precision(10);
    ratio << s.occupancy_ratio;
    os << s.update_counter << ',' << s.occupied << ',' << ratio.str() << ',' << opt(s.mean) << ','
       << opt(s.p25) << ',' << opt(s.p75) << ',' << opt(s.max) << '\n';
}

class Archive {
public:
    static constexpr char magic[6] = {'Q', 'D', 'M', 'A', 'P', '1'};

    using SnapshotHook = std::function<void(const ArchiveStats&)>;

    Archive() = default;
    Archive(ArchiveDims dims, std::vector<std::size_t> actor_sizes, std::vector<std::size_t> critic_sizes = {})
        : dims_(dims), actor_sizes_(std::move(actor_sizes)), critic_sizes_(std::move(critic_sizes)) {
        if (dims_.dims == 0) throw ConfigError("archive needs at least one dimension");
        if (dims_.bins == 0 || dims_.bins > 256) throw ConfigError("archive bins must lie in [1, 256]");
        actor_len_ = actor_sizes_.empty() ? 0 : Mlp::param_count(actor_sizes_);
        critic_len_ = critic_sizes_.empty() ? 0 : CriticNet::from_layer_sizes(critic_sizes_).param_count();
    }

    Archive(const Archive& other) { copy_from(other); }
    Archive& operator=(const Archive& other) {
        if (this != &other) copy_from(other);
        return *this;
    }

    const ArchiveDims& dims() const noexcept { return dims_; }
    const std::vector<std::size_t>& actor_layer_sizes() const noexcept { return actor_sizes_; }
    const std::vector<std::size_t>& critic_layer_sizes() const noexcept { return critic_sizes_; }

    /// Invoked under the archive lock after every `every`-th insertion attempt.
    void set_snapshot_hook(std::uint64_t every, SnapshotHook hook) {
        std::lock_guard lock(mutex_);
        snapshot_every_ = every;
        hook_ = std::move(hook);
    }

    /// Stores iff the cell is empty or `performance` is strictly greater.
    InsertOutcome try_insert(const Descriptor& d, double performance, std::span<const double> actor,
                             std::span<const double> critic) {
        check_descriptor(d);
        if (actor.size() != actor_len_ || critic.size() != critic_len_) {
            throw ShapeError("archive insert: parameter vector lengths do not match the archive topology");
        }
        std::lock_guard lock(mutex_);
        ++update_counter_;
        InsertOutcome outcome = InsertOutcome::rejected;
        if (std::isfinite(performance)) {
            auto it = index_.find(d);
            if (it == index_.end()) {
                index_.emplace(d, cells_.size());
                cells_.push_back(ArchiveCell{d, performance, {actor.begin(), actor.end()}, {critic.begin(), critic.end()}});
                outcome = InsertOutcome::new_cell;
            } else if (cells_[it->second].performance < performance) {
                auto& cell = cells_[it->second];
                cell.performance = performance;
                cell.actor_params.assign(actor.begin(), actor.end());
                cell.critic_params.assign(critic.begin(), critic.end());
                outcome = InsertOutcome::improved;
            }
        }
        if (hook_ && snapshot_every_ > 0 && update_counter_ % snapshot_every_ == 0) hook_(stats_unlocked());
        return outcome;
    }

    /// Uniform over occupied cells.
    ArchiveCell random_cell(Rng& rng) const {
        std::lock_guard lock(mutex_);
        if (cells_.empty()) throw EmptyArchiveError("random cell requested from an empty archive");
        std::uniform_int_distribution<std::size_t> pick(0, cells_.size() - 1);
        return cells_[pick(rng)];
    }

    std::optional<ArchiveCell> find(const Descriptor& d) const {
        std::lock_guard lock(mutex_);
        auto it = index_.find(d);
        if (it == index_.end()) return std::nullopt;
        return cells_[it->second];
    }

    /// Highest performance; ties resolve to the lexicographically smallest coordinate.
    std::optional<ArchiveCell> best() const {
        std::lock_guard lock(mutex_);
        const ArchiveCell* top = nullptr;
        for (const auto& [d, idx] : index_) {
            if (!top || cells_[idx].performance > top->performance) top = &cells_[idx];
        }
        if (!top) return std::nullopt;
        return *top;
    }

    /// Snapshot in insertion order.
    std::vector<ArchiveCell> cells() const {
        std::lock_guard lock(mutex_);
        return cells_;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return cells_.size();
    }
    bool empty() const { return size() == 0; }

    std::uint64_t update_counter() const {
        std::lock_guard lock(mutex_);
        return update_counter_;
    }

    ArchiveStats stats() const {
        std::lock_guard lock(mutex_);
        return stats_unlocked();
    }

    void save(std::ostream& os) const {
        std::lock_guard lock(mutex_);
        os.write(magic, sizeof(magic));
        binary::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(dims_.dims));
        binary::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(dims_.bins));
        write_sizes(os, actor_sizes_);
        write_sizes(os, critic_sizes_);
        binary::write_uint<std::uint64_t>(os, update_counter_);
        binary::write_uint<std::uint64_t>(os, cells_.size());
        for (const auto& c : cells_) {
            os.write(reinterpret_cast<const char*>(c.descriptor.coords.data()),
                     static_cast<std::streamsize>(c.descriptor.coords.size()));
            binary::write_f64(os, c.performance);
            write_payload(os, actor_sizes_, c.actor_params);
            write_payload(os, critic_sizes_, c.critic_params);
        }
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open " + path.string() + " for writing");
        save(os);
        if (!os) throw Error("failed writing " + path.string());
    }

    static Archive load(std::istream& is) {
        char m[sizeof(magic)];
        if (!is.read(m, sizeof(m)) || !std::equal(m, m + sizeof(m), magic)) {
            throw FormatError("archive header: bad magic bytes");
        }
        std::uint32_t d = 0, b = 0;
        if (!binary::read_uint(is, d) || !binary::read_uint(is, b)) throw FormatError("archive header: truncated");
        if (d == 0 || d > 4096 || b == 0 || b > 256) throw FormatError("archive header: invalid dimensions");
        auto actor = read_sizes(is, "actor");
        auto critic = read_sizes(is, "critic");
        Archive a;
        try {
            a = Archive(ArchiveDims{d, b}, actor, critic);
        } catch (const Error& e) {
            throw FormatError(std::string("archive header: ") + e.what());
        }
        std::uint64_t counter = 0, n = 0;
        if (!binary::read_uint(is, counter) || !binary::read_uint(is, n)) throw FormatError("archive header: truncated");
        if (n > ArchiveDims{d, b}.capacity()) throw FormatError("archive header: more cells than the grid holds");
        for (std::uint64_t i = 0; i < n; ++i) {
            auto fail = [i](const std::string& why) {
                return FormatError("archive cell " + std::to_string(i) + ": " + why);
            };
            ArchiveCell cell;
            cell.descriptor.coords.resize(d);
            if (!is.read(reinterpret_cast<char*>(cell.descriptor.coords.data()), d)) throw fail("truncated coordinates");
            for (auto c : cell.descriptor.coords) {
                if (c >= b) throw fail("coordinate out of range");
            }
            if (!binary::read_f64(is, cell.performance)) throw fail("truncated performance");
            if (!std::isfinite(cell.performance)) throw fail("non-finite performance");
            Payload p;
            if (!read_payload(is, a.actor_len_, p)) throw fail("truncated actor payload");
            if (p.sizes != actor) throw fail("actor payload header does not match archive header");
            cell.actor_params = std::move(p.params);
            if (!read_payload(is, a.critic_len_, p)) throw fail("truncated critic payload");
            if (p.sizes != critic) throw fail("critic payload header does not match archive header");
            cell.critic_params = std::move(p.params);
            if (a.index_.contains(cell.descriptor)) throw fail("duplicate coordinate");
            a.index_.emplace(cell.descriptor, a.cells_.size());
            a.cells_.push_back(std::move(cell));
        }
        a.update_counter_ = counter;
        return a;
    }

    static Archive load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw FormatError("cannot open archive " + path.string());
        return load(is);
    }

    /// Same grid, topology, counter and cells in the same order.
    friend bool operator==(const Archive& a, const Archive& b) {
        if (&a == &b) return true;
        std::scoped_lock lock(a.mutex_, b.mutex_);
        return a.dims_ == b.dims_ && a.actor_sizes_ == b.actor_sizes_ && a.critic_sizes_ == b.critic_sizes_ &&
               a.update_counter_ == b.update_counter_ && a.cells_ == b.cells_;
    }

private:
    void check_descriptor(const Descriptor& d) const {
        if (d.size() != dims_.dims) {
            throw DomainError("descriptor has " + std::to_string(d.size()) + " coordinates, archive has " +
                              std::to_string(dims_.dims));
        }
        for (auto c : d.coords) {
            if (c >= dims_.bins) throw DomainError("descriptor coordinate " + std::to_string(c) + " out of range");
        }
    }

    ArchiveStats stats_unlocked() const {
        ArchiveStats s;
        s.update_counter = update_counter_;
        s.occupied = cells_.size();
        s.occupancy_ratio = static_cast<double>(cells_.size()) / static_cast<double>(dims_.capacity());
        if (cells_.empty()) return s;
        std::vector<double> perf;
        perf.reserve(cells_.size());
        for (const auto& c : cells_) perf.push_back(c.performance);
        double mean = 0.0;
        for (double p : perf) mean += p;
        mean /= static_cast<double>(perf.size());
        double var = 0.0;
        for (double p : perf) var += (p - mean) * (p - mean);
        var /= static_cast<double>(perf.size());
        std::sort(perf.begin(), perf.end());
        auto quantile = [&perf](double q) {
            const double pos = q * static_cast<double>(perf.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, perf.size() - 1);
            return perf[lo] + (pos - static_cast<double>(lo)) * (perf[hi] - perf[lo]);
        };
        s.mean = mean;
        s.stddev = std::sqrt(var);
        s.p25 = quantile(0.25);
        s.p75 = quantile(0.75);
        s.max = perf.back();
        return s;
    }

    static void write_sizes(std::ostream& os, const std::vector<std::size_t>& sizes) {
        binary::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(sizes.size()));
        for (auto s : sizes) binary::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(s));
    }

    static std::vector<std::size_t> read_sizes(std::istream& is, const char* which) {
        std::uint32_t n = 0;
        if (!binary::read_uint(is, n) || n > 4096) {
            throw FormatError(std::string("archive header: bad ") + which + " layer-size list");
        }
        std::vector<std::size_t> out(n);
        for (auto& s : out) {
            std::uint32_t v = 0;
            if (!binary::read_uint(is, v)) throw FormatError(std::string("archive header: truncated ") + which + " sizes");
            s = v;
        }
        return out;
    }

    void copy_from(const Archive& other) {
        std::scoped_lock lock(mutex_, other.mutex_);
        dims_ = other.dims_;
        actor_sizes_ = other.actor_sizes_;
        critic_sizes_ = other.critic_sizes_;
        actor_len_ = other.actor_len_;
        critic_len_ = other.critic_len_;
        cells_ = other.cells_;
        index_ = other.index_;
        update_counter_ = other.update_counter_;
        // Hooks belong to a run, not to the map contents.
        snapshot_every_ = 0;
        hook_ = nullptr;
    }

    ArchiveDims dims_;
    std::vector<std::size_t> actor_sizes_;
    std::vector<std::size_t> critic_sizes_;
    std::size_t actor_len_ = 0;
    std::size_t critic_len_ = 0;
    std::vector<ArchiveCell> cells_;
    std::map<Descriptor, std::size_t> index_;
    std::uint64_t update_counter_ = 0;
    std::uint64_t snapshot_every_ = 0;
    SnapshotHook hook_;
    mutable std::mutex mutex_;
};

inline void write_cells_csv(std::ostream& os, const Archive& archive) {
    os << "coords,performance\n";
    std::ostringstream ss;
    ss.precision(17);
    for (const auto& c : archive.cells()) {
        ss.str({});
        ss << c.performance;
        os << c.descriptor.to_string(' ') << ',' << ss.str() << '\n';
    }
}

} // namespace mmprl
