#pragma once

// Little-endian primitive encoding shared by the parameter payload and the
// archive file.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <type_traits>

namespace mmprl::binary {

template <typename T>
    requires std::is_unsigned_v<T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        T out = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out = static_cast<T>((out << 8) | (v & 0xFF));
            v = static_cast<T>(v >> 8);
        }
        return out;
    } else {
        return v;
    }
}

template <typename T>
    requires std::is_unsigned_v<T>
void write_uint(std::ostream& os, T v) {
    const T le = to_little(v);
    os.write(reinterpret_cast<const char*>(&le), sizeof(T));
}

inline void write_f64(std::ostream& os, double v) {
    write_uint(os, std::bit_cast<std::uint64_t>(v));
}

inline void write_f64s(std::ostream& os, std::span<const double> values) {
    for (double v : values) write_f64(os, v);
}

// Readers return false on a short read; callers decide how to report it.
template <typename T>
    requires std::is_unsigned_v<T>
bool read_uint(std::istream& is, T& out) {
    T raw{};
    if (!is.read(reinterpret_cast<char*>(&raw), sizeof(T))) return false;
    out = to_little(raw);
    return true;
}

inline bool read_f64(std::istream& is, double& out) {
    std::uint64_t bits = 0;
    if (!read_uint(is, bits)) return false;
    out = std::bit_cast<double>(bits);
    return true;
}

} // namespace mmprl::binary
