#pragma once

#include <cstdint>
#include <limits>

namespace drnn {

/// Entity tags for deriving independent sub-streams from one master seed.
enum class StreamTag : std::uint64_t {
    init = 0x696e6974ULL,
    inputs = 0x696e7075ULL,
    teacher_mc = 0x74656163ULL,
    kernel_mc = 0x6b65726eULL,
    sgd = 0x73676400ULL,
    probe = 0x70726f62ULL,
    fuzz = 0x66757a7aULL,
};

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// SplitMix64 generator; satisfies UniformRandomBitGenerator so it plugs
/// into the std distributions. Cheap to construct, which lets every neuron,
/// sample, or Monte-Carlo block own a stream.
class Stream {
public:
    using result_type = std::uint64_t;

    explicit constexpr Stream(std::uint64_t state) noexcept : state_(state) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return splitmix64_mix(state_);
    }

private:
    std::uint64_t state_;
};

/// Sub-stream for entity `index` under `tag`. Streams for distinct
/// (seed, tag, index) triples are decorrelated by two rounds of mixing.
inline constexpr Stream make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t index) noexcept {
    std::uint64_t h = splitmix64_mix(seed ^ 0x243f6a8885a308d3ULL);
    h = splitmix64_mix(h ^ static_cast<std::uint64_t>(tag));
    h = splitmix64_mix(h ^ (index * 0x9e3779b97f4a7c15ULL + 0x13198a2e03707344ULL));
    return Stream(h);
}

/// Derives a child seed, e.g. replicate r of an experiment.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
    return splitmix64_mix(splitmix64_mix(seed + 0xa4093822299f31d0ULL) ^ salt);
}

/// Uniform in [0, 1) from the top 53 bits.
inline double uniform01(Stream& s) noexcept {
    return static_cast<double>(s() >> 11) * 0x1.0p-53;
}

/// Rademacher sign: +1 or -1 with equal probability.
inline double rademacher(Stream& s) noexcept { return (s() >> 63) ? 1.0 : -1.0; }

}  // namespace drnn
