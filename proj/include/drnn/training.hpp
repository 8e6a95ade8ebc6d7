#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "drnn/activation.hpp"
#include "drnn/bounds.hpp"
#include "drnn/errors.hpp"
#include "drnn/init.hpp"
#include "drnn/io.hpp"
#include "drnn/parallel.hpp"
#include "drnn/random.hpp"
#include "drnn/rnn.hpp"
#include "drnn/teacher.hpp"

namespace drnn {

// ---------------------------------------------------------------- risk

/// Scratch buffers reused across risk/gradient evaluations.
struct RiskWorkspace {
    std::vector<HiddenTrajectory> trajs;
    std::vector<Vector> outputs;
    std::vector<std::vector<double>> weights;
};

struct RiskEval {
    double risk = 0.0;
    ParamMatrix grad;  // empty unless requested
};

namespace detail {

inline void require_compatible(const RnnParams& params, const Dataset& ds) {
    ds.validate();
    if (params.input_dim() != ds.dim())
        throw ConfigError("dimension mismatch: params have d = " + std::to_string(params.input_dim()) +
                          ", dataset has d = " + std::to_string(ds.dim()));
}

/// Forward pass for the listed samples and their squared residual sums.
inline void forward_samples(const RnnParams& params, const Dataset& ds, const Activation& act,
                            const std::vector<int>& samples, int threads, RiskWorkspace& ws,
                            std::vector<double>& sq) {
    const std::size_t k = samples.size();
    if (ws.trajs.size() < k) ws.trajs.resize(k);
    if (ws.outputs.size() < k) ws.outputs.resize(k);
    sq.assign(k, 0.0);
    parallel_for(k, threads, [&](std::size_t s) {
        const int j = samples[s];
        hidden_forward_into(params, ds.inputs[j], act, ws.trajs[s]);
        ws.outputs[s] = output_from_trajectory(params, ws.trajs[s]);
        double acc = 0.0;
        for (int t = 0; t < ds.length(); ++t) {
            const double r = ws.outputs[s](t) - ds.labels[j](t);
            acc += r * r;
        }
        sq[s] = acc;
    });
}

/// grad = sum_s sum_t scale * 2 (F_t - Y_t) dF_t/dPhi over the forwarded
/// samples. Work is split by neuron; every neuron visits samples in order,
/// so the result does not depend on the thread count.
inline void gradient_from_forward(const RnnParams& params, const Dataset& ds, const std::vector<int>& samples,
                                  double scale, int threads, RiskWorkspace& ws, ParamMatrix& grad) {
    const std::size_t k = samples.size();
    const int T = ds.length();
    ws.weights.resize(std::max(ws.weights.size(), k));
    for (std::size_t s = 0; s < k; ++s) {
        auto& wt = ws.weights[s];
        wt.resize(T);
        for (int t = 0; t < T; ++t) wt[t] = scale * 2.0 * (ws.outputs[s](t) - ds.labels[samples[s]](t));
    }
    const int m = params.width();
    grad.setZero(m, params.input_dim() + 2);
    const int chunks = std::max(1, std::min(threads, m));
    parallel_for(static_cast<std::size_t>(chunks), threads, [&](std::size_t c) {
        const int first = static_cast<int>(static_cast<long>(m) * static_cast<long>(c) / chunks);
        const int last = static_cast<int>(static_cast<long>(m) * static_cast<long>(c + 1) / chunks);
        for (std::size_t s = 0; s < k; ++s)
            accumulate_output_gradient(params, ws.trajs[s], ds.inputs[samples[s]], ws.weights[s], grad, first, last);
    });
}

inline std::vector<int> all_samples(int n) {
    std::vector<int> idx(n);
    for (int j = 0; j < n; ++j) idx[j] = j;
    return idx;
}

}  // namespace detail

/// Risk (1/n) sum_j sum_t (F_t - Y_t)^2 and, if requested, its gradient
/// (2/n) sum_{j,t} (F_t - Y_t) dF_t/dPhi from one shared forward pass.
inline RiskEval evaluate_risk(const RnnParams& params, const Dataset& ds, const Activation& act, bool withGradient,
                              int threads, RiskWorkspace& ws) {
    detail::require_compatible(params, ds);
    const auto samples = detail::all_samples(ds.size());
    std::vector<double> sq;
    detail::forward_samples(params, ds, act, samples, threads, ws, sq);
    RiskEval out;
    double total = 0.0;
    for (double v : sq) total += v;
    out.risk = total / ds.size();
    if (withGradient) detail::gradient_from_forward(params, ds, samples, 1.0 / ds.size(), threads, ws, out.grad);
    return out;
}

inline double empirical_risk(const RnnParams& params, const Dataset& ds, const Activation& act, int threads = 1) {
    RiskWorkspace ws;
    return evaluate_risk(params, ds, act, false, threads, ws).risk;
}

inline ParamMatrix risk_gradient(const RnnParams& params, const Dataset& ds, const Activation& act, int threads = 1) {
    RiskWorkspace ws;
    return evaluate_risk(params, ds, act, true, threads, ws).grad;
}

/// Single-sample direction G = 2 sum_t (F_t(X^j) - Y_t^j) dF_t/dPhi, without
/// the 1/n factor; its mean over j is the batch risk gradient.
inline ParamMatrix sample_direction(const RnnParams& params, const Dataset& ds, const Activation& act, int j,
                                    int threads = 1) {
    detail::require_compatible(params, ds);
    if (j < 0 || j >= ds.size()) throw std::out_of_range("sample index out of range");
    RiskWorkspace ws;
    std::vector<double> sq;
    const std::vector<int> one{j};
    detail::forward_samples(params, ds, act, one, 1, ws, sq);
    ParamMatrix g;
    detail::gradient_from_forward(params, ds, one, 1.0, threads, ws, g);
    return g;
}

// ---------------------------------------------------------- projection

/// Radius rho / sqrt(m) of one neuron's ball; projection and containment
/// checks both use this exact expression.
inline double neuron_radius(double rho, int m) { return rho / std::sqrt(static_cast<double>(m)); }

/// ||u_i - u_i(0)||_2 with a fixed summation order.
inline double input_displacement(const ParamMatrix& phi, const ParamMatrix& phi0, int i, int d) {
    double sq = 0.0;
    for (int k = 1; k <= d; ++k) {
        const double diff = phi(i, k) - phi0(i, k);
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

namespace detail {

/// Clamps x into [x0 - r, x0 + r] so that |x - x0| <= r holds as evaluated.
inline double clamp_scalar(double x, double x0, double r) {
    double y = std::clamp(x, x0 - r, x0 + r);
    while (std::abs(y - x0) > r) y = std::nextafter(y, x0);
    return y;
}

}  // namespace detail

/// Max-norm projection of every neuron onto its ball around Phi(0): clamps
/// for w_i and c_i, radial scaling for u_i. A zero displacement is never
/// rescaled. After return, within_radii() holds with zero tolerance.
inline void project_onto_radii(RnnParams& params, const RnnParams& params0, const ProjectionRadii& radii) {
    const int m = params.width();
    const int d = params.input_dim();
    const double rw = neuron_radius(radii.rhoW, m);
    const double ru = neuron_radius(radii.rhoU, m);
    const double rc = neuron_radius(radii.rhoC, m);
    ParamMatrix& phi = params.matrix();
    const ParamMatrix& phi0 = params0.matrix();
    for (int i = 0; i < m; ++i) {
        phi(i, 0) = detail::clamp_scalar(phi(i, 0), phi0(i, 0), rw);
        phi(i, d + 1) = detail::clamp_scalar(phi(i, d + 1), phi0(i, d + 1), rc);
        const double norm = input_displacement(phi, phi0, i, d);
        if (norm <= ru) continue;
        const Eigen::RowVectorXd v = (phi.block(i, 1, 1, d) - phi0.block(i, 1, 1, d)) * (ru / norm);
        // Rounding of phi0 + v can land an ulp outside; shrink v by a growing
        // margin until the evaluated displacement fits. Terminates at v = 0.
        double shrink = 1.0, margin = 0x1.0p-52;
        for (;;) {
            for (int k = 1; k <= d; ++k) phi(i, k) = phi0(i, k) + shrink * v(k - 1);
            if (input_displacement(phi, phi0, i, d) <= ru) break;
            shrink = std::max(0.0, shrink - margin);
            margin *= 2.0;
        }
    }
}

inline bool within_radii(const RnnParams& params, const RnnParams& params0, const ProjectionRadii& radii) {
    const int m = params.width();
    const int d = params.input_dim();
    const double rw = neuron_radius(radii.rhoW, m);
    const double ru = neuron_radius(radii.rhoU, m);
    const double rc = neuron_radius(radii.rhoC, m);
    const ParamMatrix& phi = params.matrix();
    const ParamMatrix& phi0 = params0.matrix();
    for (int i = 0; i < m; ++i) {
        if (!(std::abs(phi(i, 0) - phi0(i, 0)) <= rw)) return false;
        if (!(std::abs(phi(i, d + 1) - phi0(i, d + 1)) <= rc)) return false;
        if (!(input_displacement(phi, phi0, i, d) <= ru)) return false;
    }
    return true;
}

/// Largest per-neuron displacement of each block, in units of 1/sqrt(m)
/// (directly comparable with rho).
struct Displacement {
    double w = 0.0, u = 0.0, c = 0.0;
};

inline Displacement max_displacement(const RnnParams& params, const RnnParams& params0) {
    const int m = params.width();
    const int d = params.input_dim();
    const ParamMatrix& phi = params.matrix();
    const ParamMatrix& phi0 = params0.matrix();
    Displacement out;
    for (int i = 0; i < m; ++i) {
        out.w = std::max(out.w, std::abs(phi(i, 0) - phi0(i, 0)));
        out.u = std::max(out.u, input_displacement(phi, phi0, i, d));
        out.c = std::max(out.c, std::abs(phi(i, d + 1) - phi0(i, d + 1)));
    }
    const double root_m = std::sqrt(static_cast<double>(m));
    out.w *= root_m;
    out.u *= root_m;
    out.c *= root_m;
    return out;
}

// ---------------------------------------------------------------- steps

struct TrainState {
    RnnParams params;
    RnnParams params0;
    long step = 0;
    double eta = 0.0;
    std::optional<ProjectionRadii> radii;
    std::vector<double> riskHistory;

    static TrainState start(const RnnParams& params0, double eta, std::optional<ProjectionRadii> radii = {}) {
        TrainState s;
        s.params = params0;
        s.params0 = params0;
        s.eta = eta;
        s.radii = radii;
        if (radii) radii->validate();
        return s;
    }
};

namespace detail {

/// One full-batch step in place; returns (risk before the step, gradient norm).
inline std::pair<double, double> batch_step(TrainState& state, const Dataset& ds, const Activation& act, bool project,
                                            int threads, RiskWorkspace& ws) {
    const RiskEval ev = evaluate_risk(state.params, ds, act, true, threads, ws);
    state.params.matrix() -= state.eta * ev.grad;
    if (project) project_onto_radii(state.params, state.params0, *state.radii);
    ++state.step;
    return {ev.risk, ev.grad.norm()};
}

inline double sgd_step(TrainState& state, const Dataset& ds, const Activation& act, int j, int threads,
                       RiskWorkspace& ws) {
    const std::vector<int> one{j};
    std::vector<double> sq;
    forward_samples(state.params, ds, act, one, 1, ws, sq);
    ParamMatrix g;
    gradient_from_forward(state.params, ds, one, 1.0, threads, ws, g);
    state.params.matrix() -= state.eta * g;
    project_onto_radii(state.params, state.params0, *state.radii);
    ++state.step;
    return g.norm();
}

}  // namespace detail

/// Phi(s+1) = Phi(s) - eta dR/dPhi(Phi(s)); appends R(Phi(s)).
inline TrainState gd_step(TrainState state, const Dataset& ds, const Activation& act, int threads = 1) {
    if (state.radii) throw ConfigError("gd_step: plain gradient descent takes no projection radii");
    detail::require_compatible(state.params, ds);
    RiskWorkspace ws;
    state.riskHistory.push_back(detail::batch_step(state, ds, act, false, threads, ws).first);
    return state;
}

/// Gradient step followed by the per-neuron max-norm projection.
inline TrainState projected_gd_step(TrainState state, const Dataset& ds, const Activation& act, int threads = 1) {
    if (!state.radii) throw ConfigError("projected_gd_step: missing field 'radii'");
    detail::require_compatible(state.params, ds);
    RiskWorkspace ws;
    state.riskHistory.push_back(detail::batch_step(state, ds, act, true, threads, ws).first);
    return state;
}

/// Draws I_s uniformly from `indices` and takes a projected step along G.
/// Appends the full risk at the pre-step parameters.
inline TrainState projected_sgd_step(TrainState state, const Dataset& ds, const Activation& act, Stream& indices,
                                     int threads = 1) {
    if (!state.radii) throw ConfigError("projected_sgd_step: missing field 'radii'");
    detail::require_compatible(state.params, ds);
    RiskWorkspace ws;
    state.riskHistory.push_back(evaluate_risk(state.params, ds, act, false, threads, ws).risk);
    std::uniform_int_distribution<int> pick(0, ds.size() - 1);
    detail::sgd_step(state, ds, act, pick(indices), threads, ws);
    return state;
}

/// eta = 1 / (T sqrt(tau)).
inline double step_size_schedule(int T, long tau) {
    if (T < 1 || tau < 1) throw ConfigError("step_size_schedule: T and tau must be >= 1");
    return 1.0 / (static_cast<double>(T) * std::sqrt(static_cast<double>(tau)));
}

// ------------------------------------------------------------- driver

enum class Variant { gd, projected_gd, projected_sgd };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::gd: return "gd";
        case Variant::projected_gd: return "projected-gd";
        case Variant::projected_sgd: return "projected-sgd";
    }
    return "?";
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "gd") return Variant::gd;
    if (s == "projected-gd") return Variant::projected_gd;
    if (s == "projected-sgd") return Variant::projected_sgd;
    throw ConfigError("unknown variant '" + s + "' (expected gd, projected-gd or projected-sgd)");
}

struct TrainOptions {
    Variant variant = Variant::projected_gd;
    InitConfig init;
    std::optional<ProjectionRadii> radii;
    double eta = 0.0;
    long tau = 0;
    Activation act = tanh_activation();
    /// Seed of the SGD index stream.
    std::uint64_t sgdSeed = 0;
    int threads = 1;
    /// Keep every stride-th history row (the final step is always kept).
    /// Projection-free and projected GD still take the minimum over all steps.
    long historyStride = 1;
    /// Exit-time thresholds lambda; a crossing is logged, not fatal.
    std::optional<ProjectionRadii> exitThresholds;

    void validate() const {
        init.validate();
        if (variant != Variant::gd && !radii)
            throw ConfigError(std::string("variant ") + to_string(variant) + " requires field 'radii'");
        if (variant == Variant::gd && radii) throw ConfigError("variant gd takes no 'radii'");
        if (radii) radii->validate();
        if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be finite and >= 0");
        if (tau < 0) throw ConfigError("tau must be >= 0");
        if (historyStride < 1) throw ConfigError("historyStride must be >= 1");
    }
};

struct HistoryRow {
    long step = 0;
    double risk = 0.0;
    Displacement disp;
    double gradNorm = 0.0;
};

struct ExitEvent {
    long step = 0;
    std::string component;  // "w", "u" or "c"
    double displacement = 0.0;
    double threshold = 0.0;
};

struct TrainReport {
    std::vector<double> riskHistory;  // recorded risks, in step order
    std::vector<HistoryRow> rows;
    double minRisk = 0.0;  // min over recorded s < tau (s = 0 when tau = 0)
    long argminStep = 0;
    double avgIterateRisk = 0.0;  // risk at (1/tau) sum_{s<tau} Phi(s)
    double finalRisk = 0.0;
    std::vector<ExitEvent> exitEvents;
    RnnParams finalParams;
    RnnParams averagedParams;

    nlohmann::json to_json() const {
        nlohmann::json events = nlohmann::json::array();
        for (const auto& e : exitEvents)
            events.push_back({{"step", e.step},
                              {"component", e.component},
                              {"displacement", e.displacement},
                              {"threshold", e.threshold}});
        return {{"minRisk", minRisk},
                {"argminStep", argminStep},
                {"avgIterateRisk", avgIterateRisk},
                {"finalRisk", finalRisk},
                {"initialRisk", riskHistory.empty() ? 0.0 : riskHistory.front()},
                {"recordedSteps", rows.size()},
                {"exitEvents", events}};
    }

    std::string history_csv() const {
        CsvWriter csv({"step", "risk", "maxDisplacementW", "maxDisplacementU", "maxDisplacementC", "gradNorm"});
        for (const auto& r : rows)
            csv.row({std::to_string(r.step), format_double(r.risk), format_double(r.disp.w), format_double(r.disp.u),
                     format_double(r.disp.c), format_double(r.gradNorm)});
        return csv.str();
    }
};

/// Runs tau steps from symmetric_init(opt.init). Records R(Phi(s)) for
/// s = 0..tau, the minimum over s < tau, and the risk at the averaged
/// iterate. For projected variants the averaged iterate is re-projected,
/// which only removes rounding overshoot of the convex combination.
inline TrainReport run_training(const TrainOptions& opt, const Dataset& ds) {
    opt.validate();
    ds.validate();
    if (opt.init.d != ds.dim()) throw ConfigError("init.d does not match the dataset dimension");
    TrainState state = TrainState::start(symmetric_init(opt.init), opt.eta, opt.radii);
    RiskWorkspace ws;
    TrainReport rep;
    ParamMatrix dispSum = ParamMatrix::Zero(state.params.width(), state.params.input_dim() + 2);
    Stream indices = make_stream(opt.sgdSeed, StreamTag::sgd, 0);
    std::uniform_int_distribution<int> pick(0, ds.size() - 1);
    rep.minRisk = std::numeric_limits<double>::infinity();
    bool exited[3] = {false, false, false};

    auto monitor = [&](long s) {
        if (!opt.exitThresholds) return;
        const Displacement disp = max_displacement(state.params, state.params0);
        const double vals[3] = {disp.w, disp.u, disp.c};
        const double lim[3] = {opt.exitThresholds->rhoW, opt.exitThresholds->rhoU, opt.exitThresholds->rhoC};
        const char* names[3] = {"w", "u", "c"};
        for (int k = 0; k < 3; ++k)
            if (!exited[k] && vals[k] > lim[k]) {
                exited[k] = true;
                rep.exitEvents.push_back({s, names[k], vals[k], lim[k]});
            }
    };
    auto record = [&](long s, double risk, double gradNorm) {
        rep.riskHistory.push_back(risk);
        rep.rows.push_back({s, risk, max_displacement(state.params, state.params0), gradNorm});
    };
    auto consider_min = [&](long s, double risk) {
        if (risk < rep.minRisk) {
            rep.minRisk = risk;
            rep.argminStep = s;
        }
    };

    for (long s = 0; s < opt.tau; ++s) {
        dispSum += state.params.matrix() - state.params0.matrix();
        const bool keep = s % opt.historyStride == 0;
        if (opt.variant == Variant::projected_sgd) {
            if (keep) {
                const double risk = evaluate_risk(state.params, ds, opt.act, false, opt.threads, ws).risk;
                consider_min(s, risk);
                const Displacement disp = max_displacement(state.params, state.params0);
                const double g = detail::sgd_step(state, ds, opt.act, pick(indices), opt.threads, ws);
                rep.riskHistory.push_back(risk);
                rep.rows.push_back({s, risk, disp, g});
            } else {
                detail::sgd_step(state, ds, opt.act, pick(indices), opt.threads, ws);
            }
        } else {
            const Displacement disp = keep ? max_displacement(state.params, state.params0) : Displacement{};
            const auto [risk, g] =
                detail::batch_step(state, ds, opt.act, opt.variant == Variant::projected_gd, opt.threads, ws);
            consider_min(s, risk);
            if (keep) {
                rep.riskHistory.push_back(risk);
                rep.rows.push_back({s, risk, disp, g});
            }
        }
        monitor(s + 1);
    }

    const RiskEval last = evaluate_risk(state.params, ds, opt.act, true, opt.threads, ws);
    record(opt.tau, last.risk, last.grad.norm());
    rep.finalRisk = last.risk;
    if (opt.tau == 0) {
        rep.minRisk = last.risk;
        rep.argminStep = 0;
    }
    rep.finalParams = state.params;
    rep.averagedParams = state.params0;
    if (opt.tau > 0) {
        rep.averagedParams.matrix() += dispSum / static_cast<double>(opt.tau);
        if (opt.radii) project_onto_radii(rep.averagedParams, state.params0, *opt.radii);
    }
    rep.avgIterateRisk = evaluate_risk(rep.averagedParams, ds, opt.act, false, opt.threads, ws).risk;
    return rep;
}

}  // namespace drnn
