#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "drnn/errors.hpp"
#include "drnn/parallel.hpp"
#include "drnn/random.hpp"

namespace drnn {

/// Monte-Carlo estimate of an expectation with its standard error.
struct McEstimate {
    double value = 0.0;
    double stdErr = 0.0;
    std::int64_t nSamples = 0;
};

/// Welford accumulator; merge() uses the pairwise update so block results
/// combine in a fixed order.
struct Moments {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }

    void merge(const Moments& o) {
        if (o.n == 0) return;
        if (n == 0) {
            *this = o;
            return;
        }
        const double na = static_cast<double>(n), nb = static_cast<double>(o.n);
        const double delta = o.mean - mean;
        const double total = na + nb;
        mean += delta * (nb / total);
        m2 += o.m2 + delta * delta * (na * nb / total);
        n += o.n;
    }

    McEstimate estimate() const {
        const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
        return {mean, n > 1 ? std::sqrt(std::max(var, 0.0) / static_cast<double>(n)) : 0.0, n};
    }
};

inline constexpr std::int64_t kMcBlock = 4096;

/// Averages `stats` statistics over N draws. Draws are grouped into blocks
/// of kMcBlock, block b owns the sub-stream (seed, tag, b), and blocks are
/// merged in index order, so the result is independent of `threads`.
/// draw(stream, out) writes one draw's statistics into out[0..stats).
template <typename Draw>
std::vector<McEstimate> mc_average(std::int64_t N, int stats, std::uint64_t seed, StreamTag tag, int threads,
                                   Draw&& draw) {
    if (N < 1) throw ConfigError("Monte-Carlo sample count must be >= 1");
    const std::int64_t blocks = (N + kMcBlock - 1) / kMcBlock;
    std::vector<std::vector<Moments>> partial(static_cast<std::size_t>(blocks), std::vector<Moments>(stats));
    parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
        Stream s = make_stream(seed, tag, b);
        std::vector<double> out(stats);
        const std::int64_t count = std::min(kMcBlock, N - static_cast<std::int64_t>(b) * kMcBlock);
        auto& acc = partial[b];
        for (std::int64_t r = 0; r < count; ++r) {
            draw(s, std::span<double>(out));
            for (int k = 0; k < stats; ++k) acc[k].add(out[k]);
        }
    });
    std::vector<Moments> total(stats);
    for (const auto& block : partial)
        for (int k = 0; k < stats; ++k) total[k].merge(block[k]);
    std::vector<McEstimate> result(stats);
    for (int k = 0; k < stats; ++k) result[k] = total[k].estimate();
    return result;
}

}  // namespace drnn
