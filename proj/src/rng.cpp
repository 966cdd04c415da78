#include "csc/rng.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace csc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace

Rng Rng::substream(std::uint64_t seed, std::uint64_t tag) {
    return Rng(splitmix64(seed ^ splitmix64(tag)));
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

std::int64_t Rng::below(std::int64_t n) {
    // Rejection sampling avoids modulo bias.
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::int64_t>(x % un);
}

std::vector<std::int64_t> Rng::permutation(std::int64_t n) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i) {
        const std::int64_t j = below(i + 1);
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
}

Tensor Rng::normal_tensor(std::vector<std::int64_t> shape, real_t mean, real_t stddev) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i)
        t[i] = mean + stddev * static_cast<real_t>(normal());
    return t;
}

Tensor Rng::uniform_tensor(std::vector<std::int64_t> shape, real_t lo, real_t hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<real_t>(uniform(lo, hi));
    return t;
}

void Rng::save(std::ostream& os) const {
    os << engine_ << ' ' << (have_spare_ ? 1 : 0);
    if (have_spare_) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), " %a", spare_);
        os << buf;
    }
}

void Rng::load(std::istream& is) {
    is >> engine_;
    int spare_flag = 0;
    is >> spare_flag;
    have_spare_ = spare_flag != 0;
    if (have_spare_) {
        std::string tok;
        is >> tok;
        spare_ = std::strtod(tok.c_str(), nullptr);
    }
}

} // namespace csc
