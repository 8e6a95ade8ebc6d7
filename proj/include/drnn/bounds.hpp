#pragma once

// Closed-form constants of the convergence analysis. Every quantity is
// evaluated in long double; values that do not fit in a double (large T in
// the exploding regime) come back as +inf with BoundReport::overflow set.
//
// Conventions:
//   mu0_t(z) = sum_{k<t} z^k,  mu1_t(z) = sum_{k<t} (k+1) z^k
//   alpha_m  = alpha + rho_w / sqrt(m)
//   L_t      = mu0_t(alpha_m s1)^2 (s0^2 + 1) s1^2
// L_t is the printed expression. It bounds the squared gradient norm; it is
// also used as a Lipschitz modulus, and the fuzz tests check that usage.

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "drnn/activation.hpp"
#include "drnn/errors.hpp"
#include "drnn/io.hpp"

namespace drnn {

/// Per-neuron max-norm radii (rho_w, rho_u, rho_c); the ball around Phi(0)
/// has radii rho / sqrt(m).
struct ProjectionRadii {
    double rhoW = 0.0;
    double rhoU = 0.0;
    double rhoC = 0.0;

    double norm() const { return std::sqrt(rhoW * rhoW + rhoU * rhoU + rhoC * rhoC); }
    void validate() const {
        if (!(rhoW >= 0.0 && rhoU >= 0.0 && rhoC >= 0.0)) throw ConfigError("radii must be >= 0");
    }
};

/// Sup-norm budget (nu_w, nu_u, nu_c) of a transport map.
struct NuBudget {
    double nuW = 0.0;
    double nuU = 0.0;
    double nuC = 0.0;

    double norm() const { return std::sqrt(nuW * nuW + nuU * nuU + nuC * nuC); }
};

enum class Regime { benign, exploding };

inline const char* to_string(Regime r) { return r == Regime::benign ? "benign" : "exploding"; }

struct BoundInputs {
    double sigma0 = 1.0;
    double sigma1 = 1.0;
    double sigma2 = 0.0;
    double alpha = 0.0;
    ProjectionRadii rho;
    NuBudget nu;
    long m = 1;
    int d = 1;
    int T = 1;
    long n = 1;
    double delta = 0.05;
    long tau = 1;
    /// Target error for the projection-free plan.
    double epsilon = 0.1;

    static BoundInputs for_activation(const Activation& act) {
        BoundInputs in;
        in.sigma0 = act.sigma0;
        in.sigma1 = act.sigma1;
        in.sigma2 = act.sigma2;
        return in;
    }

    void validate() const {
        if (!(sigma0 >= 0 && sigma1 >= 0 && sigma2 >= 0)) throw ConfigError("bounds: sigma0..2 must be >= 0");
        if (!(alpha >= 0)) throw ConfigError("bounds: alpha must be >= 0");
        rho.validate();
        if (!(nu.nuW >= 0 && nu.nuU >= 0 && nu.nuC >= 0)) throw ConfigError("bounds: nu must be >= 0");
        if (m < 1 || d < 1 || T < 1 || n < 1 || tau < 1) throw ConfigError("bounds: m, d, T, n, tau must be >= 1");
        if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("bounds: delta must lie in (0, 1)");
    }

    double alpha_m() const { return alpha + rho.rhoW / std::sqrt(static_cast<double>(m)); }
};

using real = long double;

/// (mu0_t(z), mu1_t(z)) by direct summation.
inline std::pair<real, real> mu_sums_ld(real z, int t) {
    if (t < 1) throw ConfigError("mu_sums: t must be >= 1");
    if (z < 0) throw ConfigError("mu_sums: z must be >= 0");
    real mu0 = 0, mu1 = 0, zk = 1;
    for (int k = 0; k < t; ++k) {
        mu0 += zk;
        mu1 += static_cast<real>(k + 1) * zk;
        zk *= z;
    }
    return {mu0, mu1};
}

inline std::pair<double, double> mu_sums(double z, int t) {
    auto [a, b] = mu_sums_ld(z, t);
    return {static_cast<double>(a), static_cast<double>(b)};
}

/// Closed form (1 - z^t) / (1 - z) of mu0, for cross-checking; z != 1.
inline double mu0_closed_form(double z, int t) { return (1.0 - std::pow(z, t)) / (1.0 - z); }

/// Lipschitz/smoothness constants at horizon t for a given alpha_m.
struct StepConstants {
    real mu0 = 0, mu1 = 0, alphaM = 0, L = 0, beta = 0, Lambda = 0, gamma = 0;
};

inline StepConstants step_constants(real s0, real s1, real s2, real alphaM, int d, int t) {
    StepConstants k;
    k.alphaM = alphaM;
    std::tie(k.mu0, k.mu1) = mu_sums_ld(alphaM * s1, t);
    const real rd = std::sqrt(static_cast<real>(d));
    const real dd = static_cast<real>(d);
    k.L = k.mu0 * k.mu0 * (s0 * s0 + 1) * s1 * s1;
    k.beta = s1 * s1 * k.mu0 * k.mu0 * (rd + dd + s0) + rd * s1 * s1 * k.mu1 +
             s2 * (1 + alphaM * s1 * k.mu0) * k.mu1 * (2 * s0 * rd + dd + s0);
    const real sqrt2 = std::sqrt(static_cast<real>(2));
    k.Lambda = sqrt2 * (s0 + 1 + alphaM * k.L);
    k.gamma = sqrt2 * (k.L + alphaM * k.beta);
    return k;
}

inline StepConstants step_constants(const BoundInputs& in, int t) {
    return step_constants(in.sigma0, in.sigma1, in.sigma2, in.alpha_m(), in.d, t);
}

/// (L_T, beta_T) at alpha_m = alpha + rho_w / sqrt(m).
inline std::pair<double, double> lipschitz_constants(const BoundInputs& in) {
    in.validate();
    const auto k = step_constants(in, in.T);
    return {static_cast<double>(k.L), static_cast<double>(k.beta)};
}

/// (Lambda_T, gamma_T) = (sqrt2 (s0 + 1 + alpha_m L_T), sqrt2 (L_T + alpha_m beta_T)).
inline std::pair<double, double> smoothness_constants(const BoundInputs& in) {
    in.validate();
    const auto k = step_constants(in, in.T);
    return {static_cast<double>(k.Lambda), static_cast<double>(k.gamma)};
}

namespace detail {

/// ||nu|| (s1 mu0 (1 + s0) + s0); the caller picks the mu0 argument.
inline real target_scale(real nuNorm, real s0, real s1, real mu0) { return nuNorm * (s1 * mu0 * (1 + s0) + s0); }

struct NormBoundsLd {
    real Fmax = 0, ymax = 0, phi = 0;
};

inline NormBoundsLd norm_bounds_ld(const BoundInputs& in, const ProjectionRadii& rho, real L) {
    NormBoundsLd b;
    const real rw = rho.rhoW, ru = rho.rhoU;
    b.Fmax = L * std::sqrt(rw * rw + ru * ru) + static_cast<real>(in.sigma0) * rho.rhoC;
    const real mu0alpha = mu_sums_ld(static_cast<real>(in.alpha) * in.sigma1, in.T).first;
    b.ymax = target_scale(in.nu.norm(), in.sigma0, in.sigma1, mu0alpha);
    b.phi = b.Fmax + b.ymax;
    return b;
}

struct ErrorsLd {
    real err1 = 0, err2 = 0, err3 = 0, err = 0, rhs = 0;
};

/// err1, err2 for radii rho and constants k; err1's concentration term uses
/// mu0 at alpha_m (k.mu0).
inline std::pair<real, real> err12(const BoundInputs& in, const ProjectionRadii& rho, const StepConstants& k) {
    const real rw = rho.rhoW, ru = rho.rhoU, rc = rho.rhoC;
    const real s0 = in.sigma0, s1 = in.sigma1, s2 = in.sigma2;
    const real theta = std::sqrt(rw * rw + ru * ru);
    const real curv = k.Lambda * k.Lambda * s2 + k.gamma * s1;
    const real logterm = std::sqrt(std::log(2.0L * in.n * in.T / in.delta));
    const real conc = target_scale(in.nu.norm(), s0, s1, k.mu0) * logterm;
    const real err1 = 2 * curv * (rw * rw + ru * ru) + 2 * k.L * rc * theta + 2 * conc;
    const real err2 = ((k.beta + k.L) * theta + k.L * rc) * (static_cast<real>(in.nu.norm()) + rho.norm());
    return {err1, err2};
}

inline ErrorsLd errors_ld(const BoundInputs& in, const StepConstants& k, const NormBoundsLd& nb) {
    ErrorsLd e;
    const real rw = in.rho.rhoW, ru = in.rho.rhoU, rc = in.rho.rhoC;
    const real s0 = in.sigma0, s1 = in.sigma1, s2 = in.sigma2;
    const real T = in.T;
    const real root_m = std::sqrt(static_cast<real>(in.m));
    const real theta = std::sqrt(rw * rw + ru * ru);
    std::tie(e.err1, e.err2) = err12(in, in.rho, k);
    const real g = nb.phi * (1 + rc / root_m) * k.L + s0;
    e.err3 = 4 * T * T * g * g;
    const real curv = k.Lambda * k.Lambda * s2 + k.gamma * s1;
    const real logterm = std::sqrt(std::log(2.0L * in.n * in.T / in.delta));
    e.err = e.err2 + k.L * rc * theta + curv * (rw * rw + ru * ru) +
            target_scale(in.nu.norm(), s0, s1, k.mu0) * logterm;
    const real nu2 = static_cast<real>(in.nu.norm()) * in.nu.norm();
    e.rhs = T / std::sqrt(static_cast<real>(in.tau)) * (nu2 / 4 + g * g) + T * nb.phi / root_m * e.err;
    return e;
}

}  // namespace detail

struct NormBounds {
    double F_T_max = 0, y_T_max = 0, phi_T_max = 0;
};

/// F_T^max = L_T sqrt(rho_w^2 + rho_u^2) + s0 rho_c,
/// y_T^max = ||nu|| (s1 mu0_T(alpha s1)(1 + s0) + s0), phi = F + y.
inline NormBounds norm_bounds(const BoundInputs& in) {
    in.validate();
    const auto k = step_constants(in, in.T);
    const auto b = detail::norm_bounds_ld(in, in.rho, k.L);
    return {static_cast<double>(b.Fmax), static_cast<double>(b.ymax), static_cast<double>(b.phi)};
}

struct ErrorTerms {
    double err1 = 0, err2 = 0, err3 = 0, err = 0, thm44_rhs = 0;
};

/// err1..err3 as defined in the convergence proof, the theorem's err, and
///   rhs = (T/sqrt tau)(||nu||^2/4 + (phi (1 + rho_c/sqrt m) L_T + s0)^2) + (T phi / sqrt m) err.
/// Note err = err2 + err1/2: the printed theorem halves the linearization
/// terms relative to the proof's err1.
inline ErrorTerms error_terms(const BoundInputs& in) {
    in.validate();
    const auto k = step_constants(in, in.T);
    const auto nb = detail::norm_bounds_ld(in, in.rho, k.L);
    const auto e = detail::errors_ld(in, k, nb);
    return {static_cast<double>(e.err1), static_cast<double>(e.err2), static_cast<double>(e.err3),
            static_cast<double>(e.err), static_cast<double>(e.rhs)};
}

struct Theorem48Plan {
    double lambdaW = 0, lambdaU = 0, lambdaC = 0, m0 = 0, eta_max = 0, tau0 = 0;
};

namespace detail {

struct PlanLd {
    real lambdaW = 0, lambdaU = 0, lambdaC = 0, m0 = 0, etaMax = 0, tau0 = 0;
};

inline PlanLd plan_ld(const BoundInputs& in, real eps) {
    if (!(eps > 0)) throw ConfigError("theorem48_plan: epsilon must be > 0");
    PlanLd p;
    const real alphaEps = static_cast<real>(in.alpha) + std::sqrt(2 * eps);
    const auto k = step_constants(in.sigma0, in.sigma1, in.sigma2, alphaEps, in.d, in.T);
    const real T = in.T;
    const real nuNorm = in.nu.norm();
    p.lambdaW = p.lambdaU = 16 * nuNorm * nuNorm * std::sqrt(T) * k.L / std::sqrt(eps);
    p.lambdaC = 2 * static_cast<real>(in.sigma0) * std::sqrt(T) / std::sqrt(eps);
    const ProjectionRadii lam{static_cast<double>(p.lambdaW), static_cast<double>(p.lambdaU),
                              static_cast<double>(p.lambdaC)};
    const auto [e1, e2] = err12(in, lam, k);
    p.m0 = T / eps * (e1 + e2) + p.lambdaW * p.lambdaW / (2 * eps) + p.lambdaC * p.lambdaC;
    const real Fmax = k.L * std::sqrt(p.lambdaW * p.lambdaW + p.lambdaU * p.lambdaU) +
                      static_cast<real>(in.sigma0) * p.lambdaC;
    const real mu0alpha = mu_sums_ld(static_cast<real>(in.alpha) * in.sigma1, in.T).first;
    const real phi = Fmax + target_scale(nuNorm, in.sigma0, in.sigma1, mu0alpha);
    const real g = 2 * phi * k.L + in.sigma0;
    p.etaMax = eps / (2 * T * T * g * g);
    const real s = std::sqrt(static_cast<real>(2)) + 1;
    p.tau0 = nuNorm * nuNorm / (s * s * p.etaMax * eps);
    return p;
}

}  // namespace detail

/// Projection-free plan for target error eps, constants at alpha + sqrt(2 eps):
/// lambda_w = lambda_u = 16 ||nu||^2 sqrt(T) L_T / sqrt(eps), lambda_c = 2 s0 sqrt(T) / sqrt(eps),
/// m0 = (T/eps)(err1 + err2)|_{rho = lambda} + lambda_w^2/(2 eps) + lambda_c^2,
/// eta_max = eps / (2 T^2 (2 phi(lambda, nu) L_T + s0)^2), tau0 = ||nu||^2 / ((sqrt2 + 1)^2 eta eps).
inline Theorem48Plan theorem48_plan(const BoundInputs& in, double epsilon) {
    in.validate();
    const auto p = detail::plan_ld(in, epsilon);
    return {static_cast<double>(p.lambdaW), static_cast<double>(p.lambdaU), static_cast<double>(p.lambdaC),
            static_cast<double>(p.m0),      static_cast<double>(p.etaMax),  static_cast<double>(p.tau0)};
}

/// tau0 for an explicit step size eta (instead of eta_max).
inline double theorem48_tau0(const BoundInputs& in, double epsilon, double eta) {
    const long double s = std::sqrt(2.0L) + 1;
    const long double nu = in.nu.norm();
    return static_cast<double>(nu * nu / (s * s * eta * epsilon));
}

/// Benign iff alpha_m s1 < 1; the boundary counts as exploding.
inline Regime regime_classifier(const BoundInputs& in) {
    return in.alpha_m() * in.sigma1 < 1.0 ? Regime::benign : Regime::exploding;
}

/// Right-hand side of the linearization-error bound at horizon t for a
/// displacement with ||Theta - Theta(0)|| = dTheta and ||c - c(0)|| = dC:
/// (2/sqrt m)(Lambda_t^2 s2 + gamma_t s1) dTheta^2 + (2 L_t/sqrt m) dC dTheta.
inline double linearization_bound(const BoundInputs& in, int t, double dTheta, double dC) {
    const auto k = step_constants(in, t);
    const real root_m = std::sqrt(static_cast<real>(in.m));
    const real curv = k.Lambda * k.Lambda * in.sigma2 + k.gamma * in.sigma1;
    const real th = dTheta;
    return static_cast<double>(2 / root_m * curv * th * th + 2 * k.L / root_m * dC * th);
}

/// Bound on |F~_t - F_t(Phi~)| holding for all n samples and T steps with
/// probability 1 - delta: the concentration term uses mu0_t(alpha s1); the
/// curvature terms use Lambda_T, gamma_T and L_t at alpha_m = alpha + nu_w/sqrt m.
inline double approximation_bound(const BoundInputs& in, int t) {
    BoundInputs at = in;
    at.rho = {in.nu.nuW, in.nu.nuU, in.nu.nuC};
    const auto kT = step_constants(at, in.T);
    const auto kt = step_constants(at, t);
    const real root_m = std::sqrt(static_cast<real>(in.m));
    const real mu0alpha = mu_sums_ld(static_cast<real>(in.alpha) * in.sigma1, t).first;
    const real logterm = std::sqrt(std::log(2.0L * in.n * in.T / in.delta) / in.m);
    const real nw = in.nu.nuW, nu_u = in.nu.nuU, nc = in.nu.nuC;
    const real wu2 = nw * nw + nu_u * nu_u;
    const real curv = kT.Lambda * kT.Lambda * in.sigma2 + kT.gamma * in.sigma1;
    return static_cast<double>(2 * detail::target_scale(in.nu.norm(), in.sigma0, in.sigma1, mu0alpha) * logterm +
                               2 / root_m * curv * wu2 + 2 * kt.L / root_m * nc * std::sqrt(wu2));
}

/// Per-neuron bound on ||dR/dPhi_i|| inside Omega_rho:
/// 2 T phi ((1 + rho_c/sqrt m) L_T + s0) / sqrt m.
inline double risk_gradient_bound(const BoundInputs& in) {
    const auto k = step_constants(in, in.T);
    const auto nb = detail::norm_bounds_ld(in, in.rho, k.L);
    const real root_m = std::sqrt(static_cast<real>(in.m));
    return static_cast<double>(2 * static_cast<real>(in.T) * nb.phi * ((1 + in.rho.rhoC / root_m) * k.L + in.sigma0) /
                               root_m);
}

struct BoundReport {
    double mu0T = 0, mu1T = 0, alphaM = 0;
    double L_T = 0, beta_T = 0, Lambda_T = 0, gamma_T = 0;
    double F_T_max = 0, y_T_max = 0, phi_T_max = 0;
    double err1 = 0, err2 = 0, err3 = 0, err = 0, thm44_rhs = 0;
    double lambdaW = 0, lambdaU = 0, lambdaC = 0, m0 = 0, eta_max = 0, tau0 = 0;
    Regime regime = Regime::benign;
    bool overflow = false;
    std::vector<std::string> overflowed;

    /// (name, value) pairs in report order.
    std::vector<std::pair<std::string, double>> fields() const {
        return {{"mu0T", mu0T},       {"mu1T", mu1T},         {"alphaM", alphaM},       {"L_T", L_T},
                {"beta_T", beta_T},   {"Lambda_T", Lambda_T}, {"gamma_T", gamma_T},     {"F_T_max", F_T_max},
                {"y_T_max", y_T_max}, {"phi_T_max", phi_T_max}, {"err1", err1},         {"err2", err2},
                {"err3", err3},       {"err", err},           {"thm44_rhs", thm44_rhs}, {"lambdaW", lambdaW},
                {"lambdaU", lambdaU}, {"lambdaC", lambdaC},   {"m0", m0},               {"eta_max", eta_max},
                {"tau0", tau0}};
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [name, v] : fields()) {
            if (std::isfinite(v))
                j[name] = v;
            else
                j[name] = v > 0 ? "inf" : "nan";
        }
        j["regime"] = to_string(regime);
        j["overflow"] = overflow;
        j["overflowed"] = overflowed;
        return j;
    }

    std::string to_text() const {
        std::ostringstream out;
        for (const auto& [name, v] : fields()) {
            out << name;
            for (std::size_t pad = name.size(); pad < 12; ++pad) out << ' ';
            out << format_double(v) << '\n';
        }
        out << "regime      " << to_string(regime) << '\n';
        out << "overflow    " << (overflow ? "true" : "false") << '\n';
        return out.str();
    }
};

inline BoundReport bound_report(const BoundInputs& in) {
    in.validate();
    const auto k = step_constants(in, in.T);
    const auto nb = detail::norm_bounds_ld(in, in.rho, k.L);
    const auto e = detail::errors_ld(in, k, nb);
    const auto p = detail::plan_ld(in, in.epsilon);
    BoundReport r;
    auto put = [&](double& slot, const char* name, real v) {
        slot = static_cast<double>(v);
        if (!std::isfinite(slot)) {
            r.overflow = true;
            r.overflowed.emplace_back(name);
            if (!std::isnan(slot)) slot = std::numeric_limits<double>::infinity();
        }
    };
    put(r.mu0T, "mu0T", k.mu0);
    put(r.mu1T, "mu1T", k.mu1);
    put(r.alphaM, "alphaM", k.alphaM);
    put(r.L_T, "L_T", k.L);
    put(r.beta_T, "beta_T", k.beta);
    put(r.Lambda_T, "Lambda_T", k.Lambda);
    put(r.gamma_T, "gamma_T", k.gamma);
    put(r.F_T_max, "F_T_max", nb.Fmax);
    put(r.y_T_max, "y_T_max", nb.ymax);
    put(r.phi_T_max, "phi_T_max", nb.phi);
    put(r.err1, "err1", e.err1);
    put(r.err2, "err2", e.err2);
    put(r.err3, "err3", e.err3);
    put(r.err, "err", e.err);
    put(r.thm44_rhs, "thm44_rhs", e.rhs);
    put(r.lambdaW, "lambdaW", p.lambdaW);
    put(r.lambdaU, "lambdaU", p.lambdaU);
    put(r.lambdaC, "lambdaC", p.lambdaC);
    put(r.m0, "m0", p.m0);
    put(r.eta_max, "eta_max", p.etaMax);
    put(r.tau0, "tau0", p.tau0);
    r.regime = regime_classifier(in);
    return r;
}

}  // namespace drnn
