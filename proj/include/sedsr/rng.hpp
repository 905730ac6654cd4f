#pragma once

#include <cstdint>
#include <initializer_list>

namespace sedsr {

/// Counter-derived random stream.
///
/// Every stream is a pure function of a master seed plus a path of stream ids
/// (e.g. {epoch, sample_index}), so any worker can rebuild the exact stream a
/// sample needs without sharing state. Draws use integer arithmetic only and are
/// identical on every platform.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed, std::initializer_list<uint64_t> path = {});

    uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n);
    int64_t between(int64_t lo, int64_t hi_inclusive);
    double normal();
    bool coin() { return (next_u64() >> 63) != 0; }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

uint64_t splitmix64(uint64_t& state);

/// Mixes a seed with a sequence of ids into a new well-spread seed.
uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> path);

/// Seeds libtorch's global CPU generator and pins single-threaded execution so that
/// module initialization and kernels are reproducible.
void seed_torch(uint64_t seed);

} // namespace sedsr
