#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace pogdiff {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Independent stream for one pipeline stage ("data", "init", "train", ...).
/// Streams depend only on (master seed, stage name), so changing how many
/// draws one stage makes never shifts another stage's draws.
inline Rng stream_rng(std::uint64_t master_seed, std::string_view stage) {
    return Rng(splitmix64(master_seed ^ splitmix64(fnv1a64(stage))));
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

inline std::vector<double> standard_normal_vector(Rng& rng, std::size_t n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

inline double uniform01(Rng& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng);
}

}  // namespace pogdiff
