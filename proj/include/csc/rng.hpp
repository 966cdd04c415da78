#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "csc/tensor.hpp"

namespace csc {

/// Deterministic random source. All draws are derived from the raw 64-bit
/// engine output, so sequences are identical across platforms and standard
/// libraries. State round-trips through text streams for checkpointing.
class Rng {
public:
    Rng() : engine_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent substream: hash-mixes the purpose tag into the seed.
    static Rng substream(std::uint64_t seed, std::uint64_t tag);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0,1) with 53 bits of precision.
    double uniform();
    /// Uniform on [lo,hi).
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller (pairs cached).
    double normal();
    /// Uniform integer in [0,n).
    std::int64_t below(std::int64_t n);
    /// Fisher-Yates permutation of [0,n).
    std::vector<std::int64_t> permutation(std::int64_t n);

    Tensor normal_tensor(std::vector<std::int64_t> shape, real_t mean = 0, real_t stddev = 1);
    Tensor uniform_tensor(std::vector<std::int64_t> shape, real_t lo, real_t hi);

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0;
};

} // namespace csc
