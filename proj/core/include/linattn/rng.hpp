#pragma once

#include <cstdint>
#include <random>

namespace linattn {

// Seeded PRNG with portable value mappings. std::mt19937_64 output is
// specified by the standard, and the mappings below avoid the
// implementation-defined std::*_distribution classes, so a given seed
// yields the same stream everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n) via multiply-shift.
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace linattn
