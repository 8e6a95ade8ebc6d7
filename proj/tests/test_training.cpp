#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace drnn;
using testing_support::random_dataset;
using testing_support::random_input;
using testing_support::random_params;
using testing_support::rng_for;
using testing_support::to_oracle;

namespace {

/// Full-batch gradient through the backprop oracle: (2/n) sum_{j,t} r dF.
ParamMatrix oracle_risk_gradient(const RnnParams& p, const Dataset& ds, const Activation& act) {
    const int m = p.width(), d = p.input_dim();
    ParamMatrix g = ParamMatrix::Zero(m, d + 2);
    for (int j = 0; j < ds.size(); ++j) {
        const auto F = oracle::outputs(to_oracle(p), to_oracle(ds.inputs[j]), act.eval);
        for (int t = 1; t <= ds.length(); ++t) {
            const double r = F[t - 1] - ds.labels[j](t - 1);
            const auto G = oracle::output_gradient(to_oracle(p), to_oracle(ds.inputs[j]), t, act.eval, act.deriv1);
            for (int i = 0; i < m; ++i)
                for (int k = 0; k < d + 2; ++k) g(i, k) += 2.0 / ds.size() * r * G[i][k];
        }
    }
    return g;
}

Dataset labels_from(const RnnParams& p, const std::vector<InputSequence>& xs, const Activation& act) {
    Dataset ds;
    for (const auto& x : xs) {
        ds.inputs.push_back(x);
        ds.labels.push_back(output_forward(p, x, act));
    }
    return ds;
}

}  // namespace

TEST(Risk, HandValues) {
    const Activation act = tanh_activation();
    const RnnParams p0 = symmetric_init({4, 2, 0.3, 1});
    auto& gen = rng_for(10);
    const Dataset ds = random_dataset(3, 2, 4, gen);
    double sq = 0.0;
    for (const auto& y : ds.labels) sq += y.squaredNorm();
    EXPECT_EQ(empirical_risk(p0, ds, act), sq / 3);

    // n = 1, T = 1, m = 2: F = c1 tanh(u x) sqrt(2) / sqrt(2) = 2 with c = (2 sqrt2 / tanh(ux), 0).
    Vector w(2), c(2);
    Matrix u(2, 1);
    w << 0.0, 0.0;
    u << 1.0, 1.0;
    Matrix X(1, 1);
    X << 0.5;
    c << 2.0 * std::sqrt(2.0) / std::tanh(0.5), 0.0;
    Dataset one;
    one.inputs.push_back(InputSequence(X));
    one.labels.push_back(Vector::Ones(1));
    EXPECT_NEAR(empirical_risk(RnnParams::from_parts(w, u, c), one, act), 1.0, 1e-14);
}

TEST(Risk, PerfectFitHasZeroRiskAndGradient) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(11);
    const RnnParams p = random_params(6, 3, gen);
    std::vector<InputSequence> xs;
    for (int j = 0; j < 5; ++j) xs.push_back(random_input(3, 4, gen));
    const Dataset ds = labels_from(p, xs, act);
    EXPECT_EQ(empirical_risk(p, ds, act), 0.0);
    EXPECT_EQ(risk_gradient(p, ds, act).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Risk, EmptyDatasetIsAnError) {
    const RnnParams p = symmetric_init({4, 2, 0.3, 1});
    EXPECT_THROW(empirical_risk(p, Dataset{}, tanh_activation()), ConfigError);
}

TEST(RiskGradient, MatchesBackpropOracleAndFiniteDifferences) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(12);
    for (int rep = 0; rep < 8; ++rep) {
        const int m = 2 * (1 + rep % 4), d = 1 + rep % 3, T = 2 + rep % 5;
        const RnnParams p = random_params(m, d, gen);
        const Dataset ds = random_dataset(3, d, T, gen);
        const ParamMatrix g = risk_gradient(p, ds, act);
        const ParamMatrix go = oracle_risk_gradient(p, ds, act);
        EXPECT_LE((g - go).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, go.cwiseAbs().maxCoeff()));
        const double h = 1e-5;
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < d + 2; ++k) {
                RnnParams a = p, b = p;
                a.matrix()(i, k) += h;
                b.matrix()(i, k) -= h;
                const double fd = (empirical_risk(a, ds, act) - empirical_risk(b, ds, act)) / (2 * h);
                EXPECT_LE(std::abs(g(i, k) - fd), 1e-6 * std::max(1.0, std::abs(fd))) << i << "," << k;
            }
    }
}

TEST(RiskGradient, ThreadCountDoesNotChangeBits) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(13);
    const RnnParams p = random_params(64, 3, gen);
    const Dataset ds = random_dataset(9, 3, 5, gen);
    const ParamMatrix a = risk_gradient(p, ds, act, 1);
    for (int threads : {2, 3, 8}) {
        EXPECT_TRUE(a == risk_gradient(p, ds, act, threads)) << threads;
        EXPECT_EQ(empirical_risk(p, ds, act, 1), empirical_risk(p, ds, act, threads));
    }
}

TEST(RiskGradient, PerNeuronNormBoundInsideRadii) {
    const Activation act = tanh_activation();
    const int m = 32, d = 3, T = 5, n = 6;
    const ProjectionRadii rho{0.8, 1.0, 0.6};
    const NuBudget nu{0.5, 1.0, 0.5};
    TeacherSpec spec;
    spec.map = map_from_json(reference_map_json(d), d);
    spec.alpha = 0.3;
    spec.mcSamples = 4000;
    const Dataset ds = make_dataset(spec, n, d, T, 5);
    BoundInputs in = BoundInputs::for_activation(act);
    in.alpha = 0.3;
    in.rho = rho;
    in.nu = nu;
    in.m = m;
    in.d = d;
    in.T = T;
    in.n = n;
    const double bound = risk_gradient_bound(in);
    auto& gen = rng_for(14);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    const RnnParams p0 = symmetric_init({m, d, 0.3, 2});
    for (int rep = 0; rep < 50; ++rep) {
        RnnParams p = p0;
        p.matrix() += random_params(m, d, gen).matrix();
        project_onto_radii(p, p0, rho);
        const ParamMatrix g = risk_gradient(p, ds, act);
        EXPECT_LE(g.rowwise().norm().maxCoeff(), bound);
    }
}

TEST(GdStep, ZeroStepSizeOrZeroGradientKeepsParams) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(15);
    const RnnParams p = random_params(4, 2, gen);
    const Dataset ds = random_dataset(2, 2, 3, gen);
    TrainState s = TrainState::start(p, 0.0);
    s = gd_step(s, ds, act);
    EXPECT_TRUE(s.params == p);
    EXPECT_EQ(s.step, 1);
    ASSERT_EQ(s.riskHistory.size(), 1u);
    EXPECT_EQ(s.riskHistory[0], empirical_risk(p, ds, act));
    std::vector<InputSequence> xs(ds.inputs.begin(), ds.inputs.end());
    TrainState z = TrainState::start(p, 0.5);
    z = gd_step(z, labels_from(p, xs, act), act);
    EXPECT_TRUE(z.params == p);
}

TEST(GdStep, TwoNeuronUpdateMatchesHandDerivation) {
    const Activation act = tanh_activation();
    // m = 2, d = 1, T = 1, one sample: F = (c1 tanh(u1 x) + c2 tanh(u2 x)) / sqrt2,
    // dR/dc_i = 2 r tanh(u_i x)/sqrt2, dR/du_i = 2 r c_i (1 - tanh^2(u_i x)) x / sqrt2, dR/dw_i = 0.
    Vector w(2), c(2);
    Matrix u(2, 1);
    w << 0.3, -0.2;
    u << 0.7, -1.1;
    c << 0.9, 0.4;
    const RnnParams p = RnnParams::from_parts(w, u, c);
    Matrix X(1, 1);
    X << 0.6;
    Dataset ds;
    ds.inputs.push_back(InputSequence(X));
    ds.labels.push_back(Vector::Constant(1, 0.25));
    const double r2 = std::sqrt(2.0);
    const double h1 = std::tanh(0.7 * 0.6), h2 = std::tanh(-1.1 * 0.6);
    const double r = (0.9 * h1 + 0.4 * h2) / r2 - 0.25;
    const double eta = 0.1;
    const TrainState s = gd_step(TrainState::start(p, eta), ds, act);
    EXPECT_NEAR(s.params.w()(0), 0.3, 1e-16);
    EXPECT_NEAR(s.params.w()(1), -0.2, 1e-16);
    EXPECT_NEAR(s.params.u()(0, 0), 0.7 - eta * 2 * r * 0.9 * (1 - h1 * h1) * 0.6 / r2, 1e-15);
    EXPECT_NEAR(s.params.u()(1, 0), -1.1 - eta * 2 * r * 0.4 * (1 - h2 * h2) * 0.6 / r2, 1e-15);
    EXPECT_NEAR(s.params.c()(0), 0.9 - eta * 2 * r * h1 / r2, 1e-15);
    EXPECT_NEAR(s.params.c()(1), 0.4 - eta * 2 * r * h2 / r2, 1e-15);
}

TEST(GdStep, RadiiAreRejected) {
    const RnnParams p = symmetric_init({4, 2, 0.3, 1});
    auto& gen = rng_for(16);
    const Dataset ds = random_dataset(2, 2, 3, gen);
    EXPECT_THROW(gd_step(TrainState::start(p, 0.1, ProjectionRadii{1, 1, 1}), ds, tanh_activation()), ConfigError);
    EXPECT_THROW(projected_gd_step(TrainState::start(p, 0.1), ds, tanh_activation()), ConfigError);
    Stream idx = make_stream(1, StreamTag::sgd, 0);
    EXPECT_THROW(projected_sgd_step(TrainState::start(p, 0.1), ds, tanh_activation(), idx), ConfigError);
}

TEST(Projection, InteriorStepMatchesPlainStep) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(17);
    const RnnParams p0 = symmetric_init({8, 2, 0.3, 4});
    const Dataset ds = random_dataset(3, 2, 3, gen);
    const double eta = 1e-4;
    const TrainState a = gd_step(TrainState::start(p0, eta), ds, act);
    const TrainState b = projected_gd_step(TrainState::start(p0, eta, ProjectionRadii{10, 10, 10}), ds, act);
    EXPECT_TRUE(a.params == b.params);
}

TEST(Projection, RadialScalingAndClamps) {
    const RnnParams p0 = symmetric_init({4, 2, 0.3, 4});
    const ProjectionRadii rho{1.0, 1.0, 1.0};
    const double r = 1.0 / 2.0;  // rho / sqrt(4)
    RnnParams p = p0;
    p.matrix()(0, 1) += 2 * r * 0.6;
    p.matrix()(0, 2) += 2 * r * 0.8;
    p.matrix()(1, 0) += 3 * r;
    p.matrix()(2, 3) -= 5 * r;
    project_onto_radii(p, p0, rho);
    EXPECT_NEAR(p.matrix()(0, 1) - p0.matrix()(0, 1), r * 0.6, 1e-15);
    EXPECT_NEAR(p.matrix()(0, 2) - p0.matrix()(0, 2), r * 0.8, 1e-15);
    EXPECT_LE(std::abs(p.matrix()(1, 0) - p0.matrix()(1, 0)), r);
    EXPECT_NEAR(p.matrix()(1, 0) - p0.matrix()(1, 0), r, 1e-15);
    EXPECT_NEAR(p.matrix()(2, 3) - p0.matrix()(2, 3), -r, 1e-15);
    EXPECT_TRUE(within_radii(p, p0, rho));
    // Idempotent, and a zero displacement stays put.
    RnnParams q = p;
    project_onto_radii(q, p0, rho);
    EXPECT_TRUE(q == p);
    RnnParams z = p0;
    project_onto_radii(z, p0, rho);
    EXPECT_TRUE(z == p0);
}

TEST(Projection, ContainmentAlongLongRunsWithZeroTolerance) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(18);
    const int m = 16, d = 2;
    const RnnParams p0 = symmetric_init({m, d, 0.4, 6});
    const Dataset ds = random_dataset(4, d, 4, gen);
    const ProjectionRadii rho{0.3, 0.2, 0.25};
    TrainState gd = TrainState::start(p0, 2.0, rho);
    TrainState sgd = TrainState::start(p0, 2.0, rho);
    Stream idx = make_stream(9, StreamTag::sgd, 0);
    for (int s = 0; s < 300; ++s) {
        gd = projected_gd_step(gd, ds, act);
        sgd = projected_sgd_step(sgd, ds, act, idx);
        ASSERT_TRUE(within_radii(gd.params, p0, rho)) << s;
        ASSERT_TRUE(within_radii(sgd.params, p0, rho)) << s;
        const Displacement dg = max_displacement(gd.params, p0);
        ASSERT_LE(dg.w, rho.rhoW * (1 + 1e-15));
        ASSERT_LE((gd.params.w() - p0.w()).norm(), rho.rhoW * (1 + 1e-12));
        ASSERT_LE((gd.params.u() - p0.u()).norm(), rho.rhoU * (1 + 1e-12));
    }
}

TEST(Sgd, MeanDirectionOverAllIndicesEqualsBatchGradient) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(19);
    for (int rep = 0; rep < 10; ++rep) {
        const int m = 2 * (1 + rep % 5), d = 1 + rep % 3, T = 1 + rep % 6, n = 1 + rep % 7;
        const RnnParams p = random_params(m, d, gen);
        const Dataset ds = random_dataset(n, d, T, gen);
        ParamMatrix mean = ParamMatrix::Zero(m, d + 2);
        for (int j = 0; j < n; ++j) mean += sample_direction(p, ds, act, j);
        mean /= n;
        const ParamMatrix g = risk_gradient(p, ds, act);
        EXPECT_LE((mean - g).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, g.cwiseAbs().maxCoeff()));
    }
}

TEST(Sgd, SingleSampleDatasetMatchesProjectedGd) {
    const Activation act = tanh_activation();
    auto& gen = rng_for(20);
    const RnnParams p0 = symmetric_init({8, 2, 0.3, 7});
    const Dataset ds = random_dataset(1, 2, 4, gen);
    const ProjectionRadii rho{1, 1, 1};
    Stream idx = make_stream(3, StreamTag::sgd, 0);
    TrainState a = TrainState::start(p0, 0.05, rho), b = a;
    for (int s = 0; s < 5; ++s) {
        a = projected_gd_step(a, ds, act);
        b = projected_sgd_step(b, ds, act, idx);
        EXPECT_TRUE(a.params == b.params);
        EXPECT_EQ(a.riskHistory.back(), b.riskHistory.back());
    }
}

TEST(Schedule, Values) {
    EXPECT_EQ(step_size_schedule(1, 1), 1.0);
    EXPECT_EQ(step_size_schedule(2, 4), 0.25);
    EXPECT_NEAR(step_size_schedule(5, 100), 0.02, 1e-17);
    EXPECT_THROW(step_size_schedule(0, 4), ConfigError);
}

TEST(RunTraining, ZeroStepsRecordsOnlyInitialRisk) {
    auto& gen = rng_for(21);
    const Dataset ds = random_dataset(3, 2, 3, gen);
    TrainOptions opt;
    opt.init = {8, 2, 0.3, 1};
    opt.radii = ProjectionRadii{1, 1, 1};
    opt.tau = 0;
    const TrainReport rep = run_training(opt, ds);
    ASSERT_EQ(rep.riskHistory.size(), 1u);
    EXPECT_EQ(rep.minRisk, rep.riskHistory[0]);
    EXPECT_EQ(rep.avgIterateRisk, rep.riskHistory[0]);
}

TEST(RunTraining, ProjectedRunPropertiesAndThreadIndependence) {
    TeacherSpec spec;
    spec.map = map_from_json(reference_map_json(3), 3);
    spec.alpha = 0.3;
    spec.mcSamples = 4000;
    const Dataset ds = make_dataset(spec, 8, 3, 4, 2);
    for (Variant v : {Variant::projected_gd, Variant::projected_sgd}) {
        TrainOptions opt;
        opt.variant = v;
        opt.init = {64, 3, 0.3, 5};
        opt.radii = ProjectionRadii{0.5, 1.0, 0.5};
        opt.tau = 40;
        opt.eta = step_size_schedule(4, opt.tau);
        opt.sgdSeed = 8;
        const TrainReport a = run_training(opt, ds);
        opt.threads = 8;
        const TrainReport b = run_training(opt, ds);
        ASSERT_EQ(a.riskHistory.size(), 41u);
        EXPECT_LE(a.minRisk, a.riskHistory[0]);
        double runMin = a.riskHistory[0];
        for (std::size_t s = 0; s + 1 < a.riskHistory.size(); ++s) runMin = std::min(runMin, a.riskHistory[s]);
        EXPECT_EQ(a.minRisk, runMin);
        EXPECT_TRUE(within_radii(a.averagedParams, symmetric_init(opt.init), *opt.radii));
        EXPECT_TRUE(a.finalParams == b.finalParams);
        EXPECT_EQ(a.riskHistory, b.riskHistory);
        EXPECT_EQ(a.avgIterateRisk, b.avgIterateRisk);
        EXPECT_EQ(a.history_csv(), b.history_csv());
    }
}

TEST(RunTraining, ExitEventsAreLoggedOnce) {
    auto& gen = rng_for(22);
    const Dataset ds = random_dataset(4, 2, 3, gen);
    TrainOptions opt;
    opt.variant = Variant::gd;
    opt.init = {8, 2, 0.3, 1};
    opt.tau = 30;
    opt.eta = 1.0;
    opt.exitThresholds = ProjectionRadii{1e-9, 1e-9, 1e-9};
    const TrainReport rep = run_training(opt, ds);
    ASSERT_EQ(rep.exitEvents.size(), 3u);
    for (const auto& e : rep.exitEvents) EXPECT_EQ(e.step, 1);
    const json j = rep.to_json();
    EXPECT_EQ(j.at("exitEvents").size(), 3u);
}

TEST(RunTraining, ConfigurationErrors) {
    auto& gen = rng_for(23);
    const Dataset ds = random_dataset(2, 2, 3, gen);
    TrainOptions opt;
    opt.init = {8, 2, 0.3, 1};
    opt.tau = 2;
    try {
        run_training(opt, ds);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("radii"), std::string::npos);
    }
    opt.radii = ProjectionRadii{1, 1, 1};
    opt.init.d = 3;
    EXPECT_THROW(run_training(opt, ds), ConfigError);
    EXPECT_THROW(variant_from_string("adam"), ConfigError);
}
