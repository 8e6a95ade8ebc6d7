#pragma once

// Diagonal Elman RNN
//
//   H_t^(i) = s(w_i H_{t-1}^(i) + u_i . X_{t-1}),  H_0 = 0,
//   F_t     = (1/sqrt m) sum_i c_i H_t^(i),
//
// with per-neuron parameters Phi_i = (w_i, u_i, c_i). Parameters are stored
// as one row-major m x (d+2) matrix, so row i is exactly Phi_i and the first
// d+1 entries of the row are Theta_i. Gradients share that layout.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "drnn/activation.hpp"
#include "drnn/errors.hpp"

namespace drnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ParamMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One input sequence X = [X_0, ..., X_{T-1}] stored as a d x T matrix.
/// Every column satisfies ||X_t||_2 <= 1.
class InputSequence {
public:
    InputSequence() = default;

    explicit InputSequence(Matrix data) : data_(std::move(data)) {
        if (data_.rows() < 1 || data_.cols() < 1)
            throw ConfigError("input sequence needs d >= 1 and T >= 1");
        for (Eigen::Index t = 0; t < data_.cols(); ++t) {
            const double sq = data_.col(t).squaredNorm();
            if (!std::isfinite(sq) || sq > 1.0)
                throw ConfigError("input column " + std::to_string(t) + " has norm > 1");
        }
    }

    int dim() const { return static_cast<int>(data_.rows()); }
    int length() const { return static_cast<int>(data_.cols()); }
    const Matrix& data() const { return data_; }
    double operator()(int k, int t) const { return data_(k, t); }

    friend bool operator==(const InputSequence& a, const InputSequence& b) {
        return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() && a.data_ == b.data_;
    }

private:
    Matrix data_;
};

/// RNN parameters Phi = (w, U, c) for an even width m.
class RnnParams {
public:
    RnnParams() = default;

    RnnParams(int m, int d) : phi_(ParamMatrix::Zero(check_width(m), check_dim(d) + 2)), d_(d) {}

    RnnParams(ParamMatrix phi, int d) : phi_(std::move(phi)), d_(check_dim(d)) {
        check_width(static_cast<int>(phi_.rows()));
        if (phi_.cols() != d + 2) throw ConfigError("parameter matrix must have d + 2 columns");
    }

    int width() const { return static_cast<int>(phi_.rows()); }
    int input_dim() const { return d_; }

    auto w() { return phi_.col(0); }
    auto w() const { return phi_.col(0); }
    auto u() { return phi_.middleCols(1, d_); }
    auto u() const { return phi_.middleCols(1, d_); }
    auto c() { return phi_.col(d_ + 1); }
    auto c() const { return phi_.col(d_ + 1); }

    /// Theta_i = (w_i, u_i) in R^{d+1}.
    auto theta(int i) const { return phi_.row(i).head(d_ + 1); }
    /// Phi_i = (Theta_i, c_i) in R^{d+2}.
    auto neuron(int i) const { return phi_.row(i); }

    static RnnParams from_parts(const Vector& w, const Matrix& u, const Vector& c) {
        if (u.rows() != w.size() || c.size() != w.size())
            throw ConfigError("w, U and c disagree on the width m");
        RnnParams p(static_cast<int>(w.size()), static_cast<int>(u.cols()));
        p.w() = w;
        p.u() = u;
        p.c() = c;
        return p;
    }

    ParamMatrix& matrix() { return phi_; }
    const ParamMatrix& matrix() const { return phi_; }

    friend bool operator==(const RnnParams& a, const RnnParams& b) {
        return a.d_ == b.d_ && a.phi_.rows() == b.phi_.rows() && a.phi_ == b.phi_;
    }

private:
    static int check_width(int m) {
        if (m < 2 || m % 2 != 0) throw ConfigError("width m must be a positive even integer, got " + std::to_string(m));
        return m;
    }
    static int check_dim(int d) {
        if (d < 1) throw ConfigError("input dimension d must be >= 1");
        return d;
    }

    ParamMatrix phi_;
    int d_ = 0;
};

/// h is m x (T+1) with column t = H_t (column 0 is zero);
/// ifac is m x T with entry (i, t) = s'(w_i H_t^(i) + u_i . X_t).
struct HiddenTrajectory {
    Matrix h;
    Matrix ifac;

    int width() const { return static_cast<int>(h.rows()); }
    int length() const { return static_cast<int>(ifac.cols()); }
};

/// dF_t/dPhi in the parameter layout: row i = (dF_t/dTheta_i, dF_t/dc_i).
struct OutputGradient {
    ParamMatrix grad;

    auto dTheta() const { return grad.leftCols(grad.cols() - 1); }
    auto dC() const { return grad.col(grad.cols() - 1); }
};

namespace detail {

inline void require_same_dim(const RnnParams& params, const InputSequence& x) {
    if (params.input_dim() != x.dim())
        throw ConfigError("dimension mismatch: params have d = " + std::to_string(params.input_dim()) +
                          ", input has d = " + std::to_string(x.dim()));
}

inline void require_trajectory(const RnnParams& params, const HiddenTrajectory& traj, const InputSequence& x) {
    require_same_dim(params, x);
    if (traj.width() != params.width() || traj.length() != x.length() || traj.h.cols() != x.length() + 1)
        throw ConfigError("trajectory does not match params/input dimensions");
}

inline void require_time(int t, int T) {
    if (t < 1 || t > T)
        throw std::out_of_range("time index t = " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

}  // namespace detail

/// Fills `traj` with the hidden states and slope factors of every neuron.
/// Every neuron's pre-activation is formed by the same scalar sequence of
/// operations, so neurons with identical (w_i, u_i) get bitwise-identical
/// states.
inline void hidden_forward_into(const RnnParams& params, const InputSequence& x, const Activation& act,
                                HiddenTrajectory& traj) {
    detail::require_same_dim(params, x);
    const int m = params.width();
    const int d = params.input_dim();
    const int T = x.length();
    traj.h.resize(m, T + 1);
    traj.ifac.resize(m, T);
    traj.h.col(0).setZero();
    const ParamMatrix& phi = params.matrix();
    const Matrix& X = x.data();
    std::vector<double> pre(m);
    for (int t = 0; t < T; ++t) {
        const double* hprev = traj.h.col(t).data();
        for (int i = 0; i < m; ++i) {
            double ux = 0.0;
            for (int k = 0; k < d; ++k) ux += phi(i, 1 + k) * X(k, t);
            pre[i] = phi(i, 0) * hprev[i] + ux;
        }
        apply_batch(act, pre.data(), traj.h.col(t + 1).data(), traj.ifac.col(t).data(), static_cast<std::size_t>(m));
    }
}

inline HiddenTrajectory hidden_forward(const RnnParams& params, const InputSequence& x, const Activation& act) {
    HiddenTrajectory traj;
    hidden_forward_into(params, x, act, traj);
    return traj;
}

/// F_t for t = 1..T from a precomputed trajectory. The readout sum pairs
/// neuron p with its mirror p + m/2 before accumulating, so a symmetric
/// initialization cancels to an exact 0.0.
inline Vector output_from_trajectory(const RnnParams& params, const HiddenTrajectory& traj) {
    const int m = params.width();
    const int half = m / 2;
    const int T = traj.length();
    const auto c = params.c();
    const double root_m = std::sqrt(static_cast<double>(m));
    Vector out(T);
    for (int t = 1; t <= T; ++t) {
        double acc = 0.0;
        for (int p = 0; p < half; ++p) acc += c(p) * traj.h(p, t) + c(p + half) * traj.h(p + half, t);
        out(t - 1) = acc / root_m;
    }
    return out;
}

/// Network outputs (F_1, ..., F_T).
inline Vector output_forward(const RnnParams& params, const InputSequence& x, const Activation& act) {
    return output_from_trajectory(params, hidden_forward(params, x, act));
}

/// Row i = (dH_t^(i)/dw_i, dH_t^(i)/du_i), from the forward recursions
///   dH_t/du = (w dH_{t-1}/du + X_{t-1}) I_{t-1},
///   dH_t/dw = (H_{t-1} + w dH_{t-1}/dw) I_{t-1},
/// with zero base cases. Cross-neuron derivatives vanish and are not stored.
inline Matrix hidden_gradients(const RnnParams& params, const HiddenTrajectory& traj, const InputSequence& x,
                               const Activation& /*act*/, int t) {
    detail::require_trajectory(params, traj, x);
    detail::require_time(t, x.length());
    const int m = params.width();
    const int d = params.input_dim();
    const ParamMatrix& phi = params.matrix();
    const Matrix& X = x.data();
    Matrix out = Matrix::Zero(m, d + 1);
    for (int i = 0; i < m; ++i) {
        const double w = phi(i, 0);
        for (int s = 1; s <= t; ++s) {
            const double I = traj.ifac(i, s - 1);
            out(i, 0) = (traj.h(i, s - 1) + w * out(i, 0)) * I;
            for (int k = 0; k < d; ++k) out(i, 1 + k) = (w * out(i, 1 + k) + X(k, s - 1)) * I;
        }
    }
    return out;
}

/// dF_t/dTheta_i = (c_i / sqrt m) dH_t^(i)/dTheta_i and dF_t/dc_i = H_t^(i) / sqrt m.
inline OutputGradient output_gradients(const RnnParams& params, const HiddenTrajectory& traj, const InputSequence& x,
                                       const Activation& act, int t) {
    const Matrix dh = hidden_gradients(params, traj, x, act, t);
    const int m = params.width();
    const int d = params.input_dim();
    const double root_m = std::sqrt(static_cast<double>(m));
    OutputGradient g{ParamMatrix(m, d + 2)};
    for (int i = 0; i < m; ++i) {
        const double scale = params.c()(i) / root_m;
        for (int k = 0; k <= d; ++k) g.grad(i, k) = scale * dh(i, k);
        g.grad(i, d + 1) = traj.h(i, t) / root_m;
    }
    return g;
}

/// Gradients of F_1..F_T in one forward sweep; element t-1 holds dF_t/dPhi.
inline std::vector<OutputGradient> output_gradients_all(const RnnParams& params, const HiddenTrajectory& traj,
                                                        const InputSequence& x) {
    detail::require_trajectory(params, traj, x);
    const int m = params.width();
    const int d = params.input_dim();
    const int T = x.length();
    const ParamMatrix& phi = params.matrix();
    const Matrix& X = x.data();
    const double root_m = std::sqrt(static_cast<double>(m));
    std::vector<OutputGradient> out(T, OutputGradient{ParamMatrix(m, d + 2)});
    std::vector<double> gu(d);
    for (int i = 0; i < m; ++i) {
        const double w = phi(i, 0);
        const double scale = phi(i, d + 1) / root_m;
        double gw = 0.0;
        std::fill(gu.begin(), gu.end(), 0.0);
        for (int t = 1; t <= T; ++t) {
            const double I = traj.ifac(i, t - 1);
            gw = (traj.h(i, t - 1) + w * gw) * I;
            for (int k = 0; k < d; ++k) gu[k] = (w * gu[k] + X(k, t - 1)) * I;
            ParamMatrix& g = out[t - 1].grad;
            g(i, 0) = scale * gw;
            for (int k = 0; k < d; ++k) g(i, 1 + k) = scale * gu[k];
            g(i, d + 1) = traj.h(i, t) / root_m;
        }
    }
    return out;
}

/// grad += sum_t weights[t-1] * dF_t/dPhi for neurons in [first, last),
/// without materializing per-t gradients. This is the inner loop of every
/// risk gradient; disjoint neuron ranges can run concurrently. The
/// recursions advance all neurons of the range one time step at a time.
inline void accumulate_output_gradient(const RnnParams& params, const HiddenTrajectory& traj, const InputSequence& x,
                                       std::span<const double> weights, ParamMatrix& grad, int first = 0,
                                       int last = -1) {
    const int m = params.width();
    const int d = params.input_dim();
    const int T = x.length();
    if (static_cast<int>(weights.size()) != T) throw ConfigError("one weight per time step required");
    if (grad.rows() != m || grad.cols() != d + 2) throw ConfigError("gradient buffer has the wrong shape");
    if (last < 0) last = m;
    const int len = last - first;
    if (len <= 0) return;
    const ParamMatrix& phi = params.matrix();
    const Matrix& X = x.data();
    const double root_m = std::sqrt(static_cast<double>(m));
    // Layout: w | gw | aw | ac | gu (d blocks) | au (d blocks), each len long.
    thread_local std::vector<double> scratch;
    scratch.assign(static_cast<std::size_t>(len) * (4 + 2 * d), 0.0);
    double* w = scratch.data();
    double* gw = w + len;
    double* aw = gw + len;
    double* ac = aw + len;
    double* gu = ac + len;
    double* au = gu + static_cast<std::size_t>(len) * d;
    for (int i = 0; i < len; ++i) w[i] = phi(first + i, 0);
    for (int t = 1; t <= T; ++t) {
        const double* I = traj.ifac.col(t - 1).data() + first;
        const double* hprev = traj.h.col(t - 1).data() + first;
        const double* hcur = traj.h.col(t).data() + first;
        const double wt = weights[t - 1];
        for (int i = 0; i < len; ++i) {
            gw[i] = (hprev[i] + w[i] * gw[i]) * I[i];
            aw[i] += wt * gw[i];
            ac[i] += wt * hcur[i];
        }
        for (int k = 0; k < d; ++k) {
            const double xk = X(k, t - 1);
            double* g = gu + static_cast<std::size_t>(k) * len;
            double* a = au + static_cast<std::size_t>(k) * len;
            for (int i = 0; i < len; ++i) {
                g[i] = (w[i] * g[i] + xk) * I[i];
                a[i] += wt * g[i];
            }
        }
    }
    for (int i = 0; i < len; ++i) {
        const int r = first + i;
        const double scale = phi(r, d + 1) / root_m;
        grad(r, 0) += scale * aw[i];
        for (int k = 0; k < d; ++k) grad(r, 1 + k) += scale * au[static_cast<std::size_t>(k) * len + i];
        grad(r, d + 1) += ac[i] / root_m;
    }
}

/// Sum over all entries of grad0 .* displacement, accumulated row by row.
inline double linearized_from_displacement(const OutputGradient& grad0, const ParamMatrix& displacement) {
    if (grad0.grad.rows() != displacement.rows() || grad0.grad.cols() != displacement.cols())
        throw ConfigError("displacement shape does not match the gradient");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < displacement.rows(); ++i) acc += grad0.grad.row(i).dot(displacement.row(i));
    return acc;
}

/// F_t^Lin(X; Phi) = <dF_t/dPhi at Phi(0), Phi - Phi(0)>.
inline double linearized_output(const RnnParams& params, const RnnParams& params0,
                                std::span<const OutputGradient> grads0, int t) {
    if (params.width() != params0.width() || params.input_dim() != params0.input_dim())
        throw ConfigError("params and params0 disagree on m or d");
    detail::require_time(t, static_cast<int>(grads0.size()));
    const ParamMatrix displacement = params.matrix() - params0.matrix();
    return linearized_from_displacement(grads0[t - 1], displacement);
}

/// Single-neuron recursion used by the Monte-Carlo teacher and kernel:
/// for t = 1..T calls visit(t, h_t, dh_t/dw, dh_t/du) where du points at d
/// values owned by the caller-provided scratch buffer.
template <typename Visit>
void neuron_forward(double w, const double* u, const InputSequence& x, const Activation& act, double* du,
                    Visit&& visit) {
    const int d = x.dim();
    const int T = x.length();
    const Matrix& X = x.data();
    double h = 0.0, dw = 0.0;
    for (int k = 0; k < d; ++k) du[k] = 0.0;
    for (int t = 0; t < T; ++t) {
        double ux = 0.0;
        for (int k = 0; k < d; ++k) ux += u[k] * X(k, t);
        double s, I;
        act.value_and_slope(w * h + ux, s, I);
        dw = (h + w * dw) * I;
        for (int k = 0; k < d; ++k) du[k] = (w * du[k] + X(k, t)) * I;
        h = s;
        visit(t + 1, h, dw, static_cast<const double*>(du));
    }
}

}  // namespace drnn
