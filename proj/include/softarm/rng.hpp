#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace softarm::rng {

// std::mt19937_64 output is pinned by the standard; the distribution adaptors
// below are hand-rolled because std::uniform_real_distribution and friends are
// implementation-defined and would break byte-stable artifacts across stdlibs.

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine{seed}; }

// Derive an independent stream from a base seed (distinct golden-ratio salt per stream id).
inline Engine make_stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Engine{seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1))};
}

// Uniform on [0, 1) with 53-bit resolution.
inline double u01(Engine& e) {
    return static_cast<double>(e() >> 11) * 0x1.0p-53;
}

// Uniform on [lo, hi).
inline double uniform(Engine& e, double lo, double hi) {
    return lo + (hi - lo) * u01(e);
}

// Standard normal via Box-Muller; one fresh pair per call keeps the stream
// position independent of call parity.
inline double gaussian(Engine& e) {
    double u1 = u01(e);
    double u2 = u01(e);
    while (u1 <= 0.0) u1 = u01(e);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

inline double gaussian(Engine& e, double mean, double sigma) {
    return mean + sigma * gaussian(e);
}

// Fisher-Yates shuffle with an explicit engine; deterministic for a fixed seed.
template <typename Vec>
void shuffle(Vec& v, Engine& e) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(e() % i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace softarm::rng
