#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "drnn/errors.hpp"
#include "drnn/random.hpp"
#include "drnn/rnn.hpp"

namespace drnn {

struct InitConfig {
    int m = 0;
    int d = 0;
    double alpha = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (m < 2 || m % 2 != 0) throw ConfigError("init: m must be a positive even integer, got " + std::to_string(m));
        if (d < 1) throw ConfigError("init: d must be >= 1");
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("init: alpha must be finite and >= 0");
    }
};

/// Symmetric random initialization. Neuron p < m/2 draws c_p ~ Rad(1),
/// w_p ~ alpha * Rad(1) and u_p ~ N(0, I_d) from its own sub-stream; neuron
/// p + m/2 copies (w_p, u_p) and negates c_p. Because streams are per neuron,
/// the first half of a width-m draw is a prefix of every wider draw.
inline RnnParams symmetric_init(const InitConfig& cfg) {
    cfg.validate();
    RnnParams params(cfg.m, cfg.d);
    ParamMatrix& phi = params.matrix();
    const int half = cfg.m / 2;
    for (int p = 0; p < half; ++p) {
        Stream s = make_stream(cfg.seed, StreamTag::init, static_cast<std::uint64_t>(p));
        const double c = rademacher(s);
        const double w = cfg.alpha * rademacher(s);
        std::normal_distribution<double> normal(0.0, 1.0);
        phi(p, 0) = w;
        for (int k = 0; k < cfg.d; ++k) phi(p, 1 + k) = normal(s);
        phi(p, cfg.d + 1) = c;
        phi.row(p + half) = phi.row(p);
        phi(p + half, cfg.d + 1) = -c;
    }
    return params;
}

namespace detail {

/// One column uniform on the unit sphere times an independent U[0,1) radius.
inline void draw_column(Stream& s, Eigen::Ref<Vector> col) {
    std::normal_distribution<double> normal(0.0, 1.0);
    double norm = 0.0;
    do {
        for (Eigen::Index k = 0; k < col.size(); ++k) col(k) = normal(s);
        norm = col.norm();
    } while (!(norm > 0.0));
    const double radius = uniform01(s);
    col *= radius / norm;
    // Rounding in the normalization can leave the norm an ulp above 1.
    while (col.squaredNorm() > 1.0) col *= 1.0 - 0x1.0p-52;
}

}  // namespace detail

/// n input sequences; sample j depends only on (seed, j), so growing n never
/// changes earlier samples.
inline std::vector<InputSequence> draw_inputs(int n, int d, int T, std::uint64_t seed) {
    if (n < 1 || d < 1 || T < 1) throw ConfigError("draw_inputs: n, d, T must all be >= 1");
    std::vector<InputSequence> out;
    out.reserve(n);
    Vector col(d);
    for (int j = 0; j < n; ++j) {
        Stream s = make_stream(seed, StreamTag::inputs, static_cast<std::uint64_t>(j));
        Matrix X(d, T);
        for (int t = 0; t < T; ++t) {
            detail::draw_column(s, col);
            X.col(t) = col;
        }
        out.emplace_back(std::move(X));
    }
    return out;
}

/// Name recorded in manifests for the input distribution above.
inline constexpr const char* kInputDistribution = "unit-sphere-direction x uniform[0,1) radius";

}  // namespace drnn
