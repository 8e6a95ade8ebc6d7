#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "drnn/activation.hpp"
#include "drnn/errors.hpp"
#include "drnn/init.hpp"
#include "drnn/io.hpp"
#include "drnn/montecarlo.hpp"
#include "drnn/parallel.hpp"
#include "drnn/rnn.hpp"

namespace drnn {

struct KernelEstimate {
    double value = 0.0;
    double stdErr = 0.0;
    std::int64_t nSamples = 0;
    int t = 0;
};

namespace detail {

/// sum_i <row_i(a), row_i(b)>, multiplied entry by entry in a fixed order so
/// swapping a and b gives the same bits.
inline double feature_inner(const ParamMatrix& a, const ParamMatrix& b) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double row = 0.0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) row += a(i, k) * b(i, k);
        acc += row;
    }
    return acc;
}

inline OutputGradient gradient_at(const RnnParams& params, const InputSequence& x, const Activation& act, int t) {
    const HiddenTrajectory traj = hidden_forward(params, x, act);
    return output_gradients(params, traj, x, act, t);
}

}  // namespace detail

/// Finite-width kernel sum_i <dF_t(x)/dPhi_i, dF_t(x')/dPhi_i> at Phi(0).
inline double empirical_kernel(const RnnParams& params0, const InputSequence& x, const InputSequence& xPrime,
                               const Activation& act, int t) {
    if (x.dim() != xPrime.dim() || x.length() != xPrime.length())
        throw ConfigError("empirical_kernel: inputs disagree on d or T");
    const OutputGradient a = detail::gradient_at(params0, x, act, t);
    const OutputGradient b = detail::gradient_at(params0, xPrime, act, t);
    return detail::feature_inner(a.grad, b.grad);
}

/// Empirical kernel with its finite-width spread. The kernel is
/// (2/m) sum_p k_p over mirror pairs (p, p + m/2), which are identical at a
/// symmetric initialization, so stdErr = sd(k_p) / sqrt(m/2) measures its
/// distance from the infinite-width limit.
inline KernelEstimate empirical_kernel_estimate(const RnnParams& params0, const InputSequence& x,
                                                const InputSequence& xPrime, const Activation& act, int t) {
    if (x.dim() != xPrime.dim() || x.length() != xPrime.length())
        throw ConfigError("empirical_kernel: inputs disagree on d or T");
    const OutputGradient a = detail::gradient_at(params0, x, act, t);
    const OutputGradient b = detail::gradient_at(params0, xPrime, act, t);
    const int m = params0.width();
    const int half = m / 2;
    Moments mom;
    for (int p = 0; p < half; ++p) {
        double kp = 0.0;
        for (int q : {p, p + half})
            for (Eigen::Index k = 0; k < a.grad.cols(); ++k) kp += a.grad(q, k) * b.grad(q, k);
        mom.add(kp * half);
    }
    const McEstimate e = mom.estimate();
    return {detail::feature_inner(a.grad, b.grad), e.stdErr, half, t};
}

/// Components of the limiting kernel kappa_t = kappa^u + kappa^w + kappa^c.
struct MkKernel {
    KernelEstimate u;
    KernelEstimate w;
    KernelEstimate c;
    KernelEstimate total;  // value = u + w + c as emitted; stdErr from the per-draw sum
};

/// Monte-Carlo estimate of E[dh_t(x).dh_t(x')] split by parameter block,
/// with h the single-neuron recursion under w0 ~ Rad(alpha), u0 ~ N(0, I_d).
/// c0 ~ Rad(1) enters only through c0^2 = 1 and is not drawn.
inline MkKernel mc_kernel(double alpha, const Activation& act, const InputSequence& x, const InputSequence& xPrime,
                          int t, std::int64_t N, std::uint64_t seed, int threads = 1) {
    if (N < 2) throw ConfigError("mc_kernel: N must be >= 2");
    if (x.dim() != xPrime.dim() || x.length() != xPrime.length())
        throw ConfigError("mc_kernel: inputs disagree on d or T");
    detail::require_time(t, x.length());
    const int d = x.dim();
    const auto est = mc_average(N, 4, seed, StreamTag::kernel_mc, threads, [&](Stream& s, std::span<double> out) {
        thread_local std::vector<double> buf;
        buf.resize(4 * static_cast<std::size_t>(d));
        double* u0 = buf.data();
        double* du = u0 + d;
        double* gu = du + d;
        double* gup = gu + d;
        const double w0 = alpha * rademacher(s);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int k = 0; k < d; ++k) u0[k] = normal(s);
        double h = 0, gw = 0, hp = 0, gwp = 0;
        neuron_forward(w0, u0, x, act, du, [&](int step, double hv, double dw, const double* g) {
            if (step != t) return;
            h = hv;
            gw = dw;
            for (int k = 0; k < d; ++k) gu[k] = g[k];
        });
        neuron_forward(w0, u0, xPrime, act, du, [&](int step, double hv, double dw, const double* g) {
            if (step != t) return;
            hp = hv;
            gwp = dw;
            for (int k = 0; k < d; ++k) gup[k] = g[k];
        });
        double ku = 0.0;
        for (int k = 0; k < d; ++k) ku += gu[k] * gup[k];
        out[0] = ku;
        out[1] = gw * gwp;
        out[2] = h * hp;
        out[3] = ku + gw * gwp + h * hp;
    });
    MkKernel k;
    k.u = {est[0].value, est[0].stdErr, N, t};
    k.w = {est[1].value, est[1].stdErr, N, t};
    k.c = {est[2].value, est[2].stdErr, N, t};
    k.total = {k.u.value + k.w.value + k.c.value, est[3].stdErr, N, t};
    return k;
}

enum class GramMode { empirical, mc };

struct GramOptions {
    GramMode mode = GramMode::empirical;
    /// Empirical mode: width and initialization (m, alpha, seed).
    InitConfig init;
    /// MC mode.
    double alpha = 0.0;
    std::int64_t nSamples = 100'000;
    std::uint64_t seed = 0;
    Activation act = tanh_activation();
    int t = 1;
    int threads = 1;
};

struct GramResult {
    Matrix value;
    Matrix stdErr;  // zero in empirical mode
};

/// Kernel Gram matrix over `points`. Each unordered pair is computed once
/// and mirrored, so the result is exactly symmetric.
inline GramResult kernel_gram(const std::vector<InputSequence>& points, const GramOptions& opt) {
    if (points.empty()) throw ConfigError("kernel_gram: need at least one point");
    const int k = static_cast<int>(points.size());
    for (const auto& p : points)
        if (p.dim() != points[0].dim() || p.length() != points[0].length())
            throw ConfigError("kernel_gram: points disagree on d or T");
    detail::require_time(opt.t, points[0].length());
    GramResult r{Matrix::Zero(k, k), Matrix::Zero(k, k)};
    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < k; ++a)
        for (int b = a; b < k; ++b) pairs.emplace_back(a, b);
    std::vector<double> val(pairs.size()), err(pairs.size());
    if (opt.mode == GramMode::empirical) {
        if (opt.init.d != points[0].dim()) throw ConfigError("kernel_gram: init.d does not match the points");
        const RnnParams params0 = symmetric_init(opt.init);
        std::vector<OutputGradient> feats(k);
        parallel_for(static_cast<std::size_t>(k), opt.threads,
                     [&](std::size_t p) { feats[p] = detail::gradient_at(params0, points[p], opt.act, opt.t); });
        parallel_for(pairs.size(), opt.threads, [&](std::size_t q) {
            val[q] = detail::feature_inner(feats[pairs[q].first].grad, feats[pairs[q].second].grad);
        });
    } else {
        // Threads go to pairs; each pair's estimate is itself thread-count independent.
        parallel_for(pairs.size(), opt.threads, [&](std::size_t q) {
            const auto est = mc_kernel(opt.alpha, opt.act, points[pairs[q].first], points[pairs[q].second], opt.t,
                                       opt.nSamples, opt.seed, 1);
            val[q] = est.total.value;
            err[q] = est.total.stdErr;
        });
    }
    for (std::size_t q = 0; q < pairs.size(); ++q) {
        const auto [a, b] = pairs[q];
        r.value(a, b) = r.value(b, a) = val[q];
        r.stdErr(a, b) = r.stdErr(b, a) = err[q];
    }
    return r;
}

/// Square matrix as CSV with header "row,p0,p1,...".
inline std::string matrix_csv(const Matrix& M) {
    std::vector<std::string> header{"row"};
    for (Eigen::Index j = 0; j < M.cols(); ++j) header.push_back("p" + std::to_string(j));
    CsvWriter csv(header);
    std::vector<std::string> row(header.size());
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        row[0] = std::to_string(i);
        for (Eigen::Index j = 0; j < M.cols(); ++j) row[1 + j] = format_double(M(i, j));
        csv.row(row);
    }
    return csv.str();
}

inline nlohmann::json gram_sidecar(const GramOptions& opt, int points) {
    nlohmann::json j = {{"mode", opt.mode == GramMode::empirical ? "empirical" : "mc"},
                        {"t", opt.t},
                        {"points", points},
                        {"activation", opt.act.name}};
    if (opt.mode == GramMode::empirical) {
        j["m"] = opt.init.m;
        j["alpha"] = opt.init.alpha;
        j["seed"] = opt.init.seed;
    } else {
        j["nSamples"] = opt.nSamples;
        j["alpha"] = opt.alpha;
        j["seed"] = opt.seed;
    }
    return j;
}

}  // namespace drnn
