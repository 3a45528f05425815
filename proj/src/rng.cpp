#include "peftsim/rng.hpp"

#include <cmath>

namespace peftsim {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) {
    key_ = mix(mix(seed + kGolden) ^ mix(stream_id + 0xD1B54A32D192ED03ULL));
}

RngStream RngStream::substream(std::uint64_t id) const {
    RngStream s;
    s.key_ = mix(key_ ^ mix(id + 0x8CB92BA72F3D8DD7ULL));
    s.counter_ = 0;
    return s;
}

std::uint64_t RngStream::next_u64() {
    return mix(key_ + (++counter_) * kGolden);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    // Box-Muller; u1 nudged away from 0 so log is finite
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t RngStream::uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

double RngStream::gamma(double alpha) {
    // Marsaglia-Tsang; alpha < 1 via the alpha+1 boost
    if (alpha < 1.0) {
        const double u = uniform();
        return gamma(alpha + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> RngStream::dirichlet(double alpha, std::size_t k) {
    std::vector<double> p(k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        p[i] = gamma(alpha);
        sum += p[i];
    }
    if (sum <= 0.0) {
        for (double& v : p) v = 1.0 / static_cast<double>(k);
        return p;
    }
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace peftsim
