#include "sedsr/rng.hpp"

#include <cmath>
#include <numbers>

#include <torch/torch.h>

namespace sedsr {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> path) {
    uint64_t s = seed;
    uint64_t out = splitmix64(s);
    for (uint64_t id : path) {
        s = out ^ (id * 0xD6E8FEB86659FD93ull);
        out = splitmix64(s);
    }
    return out;
}

RandomStream::RandomStream(uint64_t seed, std::initializer_list<uint64_t> path)
    : state_(derive_seed(seed, path)) {}

uint64_t RandomStream::next_u64() { return splitmix64(state_); }

double RandomStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

uint64_t RandomStream::below(uint64_t n) {
    // Lemire's rejection keeps the draw unbiased.
    const uint64_t threshold = (0 - n) % n;
    while (true) {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        if (static_cast<uint64_t>(m) >= threshold) return static_cast<uint64_t>(m >> 64);
    }
}

int64_t RandomStream::between(int64_t lo, int64_t hi_inclusive) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
}

double RandomStream::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void seed_torch(uint64_t seed) {
    at::set_num_threads(1);
    torch::manual_seed(seed);
}

} // namespace sedsr
