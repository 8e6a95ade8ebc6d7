#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "test_support.hpp"

using namespace drnn;
using testing_support::random_input;
using testing_support::rng_for;
using testing_support::to_oracle;

namespace {

/// Probabilists' Gauss-Hermite rule (weight e^{-z^2/2}/sqrt(2 pi)) via Golub-Welsch.
std::pair<std::vector<double>, std::vector<double>> hermite_rule(int n) {
    Matrix J = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Matrix> es(J);
    std::vector<double> z(n), w(n);
    for (int k = 0; k < n; ++k) {
        z[k] = es.eigenvalues()(k);
        w[k] = es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
    }
    return {z, w};
}

/// At t = 1 the hidden state is s(u . x_1), so with (a, b) = (u . x_1, u . x'_1)
/// jointly Gaussian: kappa^c = E[s(a) s(b)], kappa^u = x_1 . x'_1 E[s'(a) s'(b)],
/// kappa^w = 0. Evaluated by tensor-product quadrature on the 2x2 covariance.
struct QuadKernel {
    double u, w, c;
};

QuadKernel quadrature_kernel_t1(const InputSequence& x, const InputSequence& xp, const Activation& act) {
    const Vector a = x.data().col(0), b = xp.data().col(0);
    Matrix S(2, 2);
    S << a.dot(a), a.dot(b), a.dot(b), b.dot(b);
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    Matrix L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    const auto [z, wt] = hermite_rule(80);
    double ec = 0, eu = 0;
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double za = L(0, 0) * z[i] + L(0, 1) * z[j];
            const double zb = L(1, 0) * z[i] + L(1, 1) * z[j];
            ec += wt[i] * wt[j] * act.eval(za) * act.eval(zb);
            eu += wt[i] * wt[j] * act.deriv1(za) * act.deriv1(zb);
        }
    return {a.dot(b) * eu, 0.0, ec};
}

}  // namespace

TEST(HermiteRule, IntegratesGaussianMoments) {
    const auto [z, w] = hermite_rule(40);
    double m0 = 0, m2 = 0, m4 = 0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        m0 += w[k];
        m2 += w[k] * z[k] * z[k];
        m4 += w[k] * std::pow(z[k], 4);
    }
    EXPECT_NEAR(m0, 1.0, 1e-13);
    EXPECT_NEAR(m2, 1.0, 1e-12);
    EXPECT_NEAR(m4, 3.0, 1e-11);
}

TEST(EmpiricalKernel, SymmetricBitwiseAndNonnegativeDiagonal) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(50);
    const RnnParams p0 = symmetric_init({128, 3, 0.4, 3});
    for (int rep = 0; rep < 20; ++rep) {
        const InputSequence x = random_input(3, 5, gen), y = random_input(3, 5, gen);
        for (int t = 1; t <= 5; ++t) {
            EXPECT_EQ(empirical_kernel(p0, x, y, act, t), empirical_kernel(p0, y, x, act, t));
            EXPECT_GE(empirical_kernel(p0, x, x, act, t), 0.0);
        }
    }
}

TEST(EmpiricalKernel, TwoNeuronHandInstance) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(51);
    const RnnParams p0 = symmetric_init({2, 2, 0.5, 8});
    const InputSequence x = random_input(2, 3, gen), y = random_input(2, 3, gen);
    for (int t = 1; t <= 3; ++t) {
        const auto gx = oracle::output_gradient(to_oracle(p0), to_oracle(x), t, act.eval, act.deriv1);
        const auto gy = oracle::output_gradient(to_oracle(p0), to_oracle(y), t, act.eval, act.deriv1);
        double want = 0.0;
        for (int i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < gx[i].size(); ++k) want += gx[i][k] * gy[i][k];
        EXPECT_NEAR(empirical_kernel(p0, x, y, act, t), want, 1e-14);
    }
}

TEST(EmpiricalKernel, EstimateCarriesValueAndSpread) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(52);
    const RnnParams p0 = symmetric_init({256, 3, 0.3, 3});
    const InputSequence x = random_input(3, 4, gen), y = random_input(3, 4, gen);
    const KernelEstimate e = empirical_kernel_estimate(p0, x, y, act, 4);
    EXPECT_EQ(e.value, empirical_kernel(p0, x, y, act, 4));
    EXPECT_GT(e.stdErr, 0.0);
    EXPECT_EQ(e.nSamples, 128);
    EXPECT_THROW(empirical_kernel(p0, x, random_input(2, 4, gen), act, 1), ConfigError);
}

TEST(McKernel, ZeroAlphaAtFirstStepHasNoRecurrentPart) {
    auto& gen = rng_for(53);
    const InputSequence x = random_input(2, 3, gen), y = random_input(2, 3, gen);
    const MkKernel k = mc_kernel(0.0, tanh_activation(), x, y, 1, 5000, 4);
    EXPECT_EQ(k.w.value, 0.0);
    EXPECT_EQ(k.w.stdErr, 0.0);
}

TEST(McKernel, TotalIsSumOfPartsAndDiagonalIsNonnegative) {
    auto& gen = rng_for(54);
    for (int rep = 0; rep < 5; ++rep) {
        const InputSequence x = random_input(3, 4, gen);
        const MkKernel k = mc_kernel(0.5, tanh_activation(), x, x, 1 + rep % 4, 20000, rep);
        EXPECT_EQ(k.total.value, k.u.value + k.w.value + k.c.value);
        for (const KernelEstimate* e : {&k.u, &k.w, &k.c, &k.total}) {
            EXPECT_GE(e->value, -3 * e->stdErr);
            EXPECT_GE(e->stdErr, 0.0);
            EXPECT_EQ(e->nSamples, 20000);
        }
    }
    EXPECT_THROW(mc_kernel(0.5, tanh_activation(), random_input(3, 4, gen), random_input(3, 4, gen), 1, 1, 1),
                 ConfigError);
}

TEST(McKernel, IndependentOfThreadCount) {
    auto& gen = rng_for(55);
    const InputSequence x = random_input(3, 4, gen), y = random_input(3, 4, gen);
    const MkKernel a = mc_kernel(0.3, tanh_activation(), x, y, 3, 30000, 9, 1);
    const MkKernel b = mc_kernel(0.3, tanh_activation(), x, y, 3, 30000, 9, 8);
    EXPECT_EQ(a.total.value, b.total.value);
    EXPECT_EQ(a.total.stdErr, b.total.stdErr);
    EXPECT_EQ(a.u.value, b.u.value);
}

TEST(McKernel, FirstStepAgreesWithQuadratureWithinThreeSigma) {
    auto& gen = rng_for(56);
    for (const auto& name : activation_names()) {
        const Activation act = activation_by_name(name);
        for (int rep = 0; rep < 3; ++rep) {
            const InputSequence x = random_input(3, 2, gen), y = random_input(3, 2, gen);
            const QuadKernel q = quadrature_kernel_t1(x, y, act);
            const MkKernel k = mc_kernel(0.4, act, x, y, 1, 200000, 100 + rep);
            EXPECT_LE(std::abs(k.u.value - q.u), 3 * k.u.stdErr) << name;
            EXPECT_LE(std::abs(k.c.value - q.c), 3 * k.c.stdErr) << name;
            EXPECT_EQ(k.w.value, 0.0);
        }
    }
}

TEST(McKernel, EmpiricalKernelApproachesLimitAsWidthGrows) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(57);
    const InputSequence x = random_input(3, 4, gen), y = random_input(3, 4, gen);
    const MkKernel lim = mc_kernel(0.3, act, x, y, 4, 200000, 3);
    const KernelEstimate e = empirical_kernel_estimate(symmetric_init({4096, 3, 0.3, 8}), x, y, act, 4);
    const double sigma = std::hypot(e.stdErr, lim.total.stdErr);
    EXPECT_LE(std::abs(e.value - lim.total.value), 3 * sigma);
}

TEST(KernelGram, ExactlySymmetricAndPositiveSemidefinite) {
    auto& gen = rng_for(58);
    std::vector<InputSequence> pts;
    for (int k = 0; k < 5; ++k) pts.push_back(random_input(3, 6, gen));
    GramOptions opt;
    opt.init = {512, 3, 0.3, 2};
    for (int t : {1, 6}) {
        opt.t = t;
        const GramResult g = kernel_gram(pts, opt);
        EXPECT_TRUE(g.value == g.value.transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(g.value);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
        EXPECT_EQ(g.stdErr.cwiseAbs().maxCoeff(), 0.0);
        opt.threads = 4;
        EXPECT_TRUE(kernel_gram(pts, opt).value == g.value);
        opt.threads = 1;
    }
    opt.mode = GramMode::mc;
    opt.alpha = 0.3;
    opt.nSamples = 4000;
    const GramResult m = kernel_gram(pts, opt);
    EXPECT_TRUE(m.value == m.value.transpose());
    EXPECT_TRUE(m.stdErr == m.stdErr.transpose());
    EXPECT_GT(m.stdErr.minCoeff(), 0.0);
}

TEST(KernelGram, SinglePointAndErrors) {
    auto& gen = rng_for(59);
    GramOptions opt;
    opt.init = {16, 2, 0.3, 2};
    const GramResult g = kernel_gram({random_input(2, 3, gen)}, opt);
    ASSERT_EQ(g.value.rows(), 1);
    EXPECT_GE(g.value(0, 0), 0.0);
    EXPECT_THROW(kernel_gram({}, opt), ConfigError);
    opt.t = 4;
    EXPECT_THROW(kernel_gram({random_input(2, 3, gen)}, opt), std::out_of_range);
    const std::string csv = matrix_csv(g.value);
    EXPECT_EQ(csv.substr(0, 7), "row,p0\n");
}
