#pragma once

#include <cstdint>
#include <vector>

namespace peftsim {

// Counter-based deterministic generator. A stream is (key, counter); the
// value at a given counter never depends on how the stream was advanced,
// so independently seeded streams reproduce bit-identically regardless of
// execution order. Streams are derived from a root seed plus a stream id
// (one per client, one for server sampling, one per initialization).
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    // Independent child stream, e.g. per (client, round).
    RngStream substream(std::uint64_t id) const;

    std::uint64_t next_u64();

    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // N(0, 1), Box-Muller
    std::size_t uniform_index(std::size_t n);  // [0, n)

    double gamma(double alpha);             // shape alpha, scale 1
    std::vector<double> dirichlet(double alpha, std::size_t k);

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace peftsim
