#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "test_util.hpp"

using namespace smlab;

namespace {

// Student-t upper quantile by Simpson integration of the density and bisection.
double t_quantile_oracle(double df, double p)
{
    const double c = std::exp(std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0)) / std::sqrt(df * std::numbers::pi);
    const auto density = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1.0) / 2.0); };
    const auto cdf = [&](double x) {
        const int steps = 20000;
        const double h = x / steps;
        double s = density(0.0) + density(x);
        for (int i = 1; i < steps; ++i) {
            s += (i % 2 ? 4.0 : 2.0) * density(i * h);
        }
        return 0.5 + s * h / 3.0;
    };
    double lo = 0.0, hi = 100.0;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

PooledEstimate point(double q, double lo, double hi)
{
    PooledEstimate p;
    p.q_bar = q;
    p.ci_low = lo;
    p.ci_high = hi;
    return p;
}

} // namespace

TEST(Pool, HandComputedTwoImputations)
{
    const auto r = pool({0.0, 2.0}, {1.0, 1.0});
    EXPECT_NEAR(r.q_bar, 1.0, 1e-12);
    EXPECT_NEAR(r.u_bar, 1.0, 1e-12);
    EXPECT_NEAR(r.b, 2.0, 1e-12);
    EXPECT_NEAR(r.t, 4.0, 1e-12);
    EXPECT_NEAR(r.df, 16.0 / 9.0, 1e-12);
    const double half = t_quantile_oracle(16.0 / 9.0, 0.975) * 2.0;
    EXPECT_NEAR(r.ci_low, 1.0 - half, 1e-6);
    EXPECT_NEAR(r.ci_high, 1.0 + half, 1e-6);
    EXPECT_EQ(r.m, 2);
}

TEST(Pool, ZeroBetweenVarianceUsesNormal)
{
    const auto r = pool({1.0, 1.0, 1.0}, {0.04, 0.04, 0.04});
    EXPECT_EQ(r.b, 0.0);
    EXPECT_NEAR(r.t, 0.04, 1e-15);
    EXPECT_TRUE(std::isinf(r.df));
    EXPECT_NEAR(r.ci_high - 1.0, 1.959963984540054 * 0.2, 1e-12);
    EXPECT_NEAR(1.0 - r.ci_low, 1.959963984540054 * 0.2, 1e-12);
}

TEST(Pool, CriticalValueAgainstOracle)
{
    for (double df : {1.0, 2.5, 7.0, 30.0}) {
        EXPECT_NEAR(critical_value(df, 0.95), t_quantile_oracle(df, 0.975), 1e-6) << df;
        EXPECT_NEAR(critical_value(df, 0.9), t_quantile_oracle(df, 0.95), 1e-6) << df;
    }
}

TEST(Pool, PermutationInvariant)
{
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> est(7), var(7);
        for (std::size_t k = 0; k < 7; ++k) {
            est[k] = std_normal(rng);
            var[k] = uniform01(rng);
        }
        const auto a = pool(est, var);
        std::vector<std::size_t> order(7);
        std::iota(order.begin(), order.end(), 0u);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<double> e2, v2;
        for (auto k : order) {
            e2.push_back(est[k]);
            v2.push_back(var[k]);
        }
        const auto b = pool(e2, v2);
        EXPECT_NEAR(a.q_bar, b.q_bar, 1e-14);
        EXPECT_NEAR(a.b, b.b, 1e-14);
        EXPECT_NEAR(a.t, b.t, 1e-14);
        EXPECT_NEAR(a.ci_low, b.ci_low, 1e-12);
    }
}

TEST(Pool, TotalVarianceInvariants)
{
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 2 + trial % 9;
        std::vector<double> est(m), var(m);
        for (std::size_t k = 0; k < m; ++k) {
            est[k] = trial % 5 == 0 ? 0.3 : std_normal(rng);
            var[k] = uniform01(rng);
        }
        const auto r = pool(est, var);
        const double md = static_cast<double>(m);
        EXPECT_NEAR(r.t, r.u_bar + (1.0 + 1.0 / md) * r.b, 1e-14);
        EXPECT_GE(r.t, r.u_bar);
        EXPECT_EQ(r.t == r.u_bar, r.b == 0.0);
        EXPECT_LE(r.ci_low, r.q_bar);
        EXPECT_GE(r.ci_high, r.q_bar);
        EXPECT_GT(r.df, 0.0);
    }
}

TEST(Pool, WidthIncreasesWithBetweenVariance)
{
    double previous = 0.0;
    for (double spread : {0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0}) {
        const auto r = pool({1.0 - spread, 1.0, 1.0 + spread}, {0.5, 0.5, 0.5});
        const double width = r.ci_high - r.ci_low;
        EXPECT_GT(width, previous) << spread;
        previous = width;
    }
}

TEST(Pool, Errors)
{
    EXPECT_THROW(pool({1.0}, {1.0}), SpecError);
    EXPECT_THROW(pool({}, {}), SpecError);
    EXPECT_THROW(pool({1.0, 2.0}, {1.0}), SpecError);
    EXPECT_THROW(pool({1.0, 2.0}, {1.0, -1.0}), SpecError);
    EXPECT_THROW(pool({1.0, 2.0}, {1.0, 1.0}, 1.0), SpecError);
}

TEST(SampleMean, MeanAndSquaredStandardError)
{
    VectorXd v(4);
    v << 1.0, 2.0, 3.0, 6.0;
    const auto e = sample_mean(v);
    EXPECT_DOUBLE_EQ(e.mean, 3.0);
    EXPECT_NEAR(e.variance, (4.0 + 1.0 + 0.0 + 9.0) / 3.0 / 4.0, 1e-15);
}

TEST(ReplicateMetrics, SingleExactReplicate)
{
    const auto r = replicate_metrics({point(2.0, 1.0, 3.0)}, 2.0, "s", "e");
    EXPECT_EQ(r.bias, 0.0);
    EXPECT_EQ(r.coverage, 1.0);
    EXPECT_EQ(r.mse, 0.0);
    EXPECT_EQ(r.n_rep, 1);
}

TEST(ReplicateMetrics, SymmetricEstimatesHaveNoBias)
{
    const auto r = replicate_metrics({point(0.5, 0.0, 1.0), point(1.5, 1.0, 2.0), point(1.0, 2.0, 3.0)}, 1.0, "s", "e");
    EXPECT_NEAR(r.bias, 0.0, 1e-15);
    EXPECT_NEAR(r.mse, r.variance, 1e-15);
    EXPECT_NEAR(r.coverage, 2.0 / 3.0, 1e-15);
}

TEST(ReplicateMetrics, DecompositionIdentity)
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<PooledEstimate> reps;
        const double shift = 10.0 * std_normal(rng);
        for (int k = 0; k < 1 + trial; ++k) {
            const double q = shift + std_normal(rng);
            reps.push_back(point(q, q - 1.0, q + 1.0));
        }
        const auto r = replicate_metrics(reps, 0.7, "s", "e");
        EXPECT_LE(std::abs(r.mse - (r.bias_sq + r.variance)), 1e-10 * std::max(1.0, r.mse));
        EXPECT_GE(r.coverage, 0.0);
        EXPECT_LE(r.coverage, 1.0);
    }
    EXPECT_THROW(replicate_metrics({}, 0.0, "s", "e"), SpecError);
}

TEST(ReplicateMetrics, NominalCoverageOfProperImputation)
{
    // y ~ N(0, 1) with 30% MCAR holes and a correlated complete covariate
    int covered = 0;
    for (std::uint64_t rep = 0; rep < 1000; ++rep) {
        MatrixXd x = test::normal_matrix(200, 2, derive_seed(40, rep));
        x.col(1) = 0.6 * x.col(0) + 0.8 * x.col(1);
        Rng rng(derive_seed(41, rep));
        MissMask m(200, 2);
        for (Index i = 0; i < 200; ++i) {
            m.set(i, 1, uniform01(rng) < 0.3);
        }
        ImputationConfig cfg;
        cfg.method = ImputeMethod::norm;
        cfg.maxit = 1;
        cfg.seed = derive_seed(42, rep);
        const auto r = fcs_impute(DataMatrix(x, m, {"x", "y"}), cfg);
        std::vector<double> est, var;
        for (const auto& c : r.completed) {
            const auto e = sample_mean(c.col(1));
            est.push_back(e.mean);
            var.push_back(e.variance);
        }
        covered += pool(est, var).covers(0.0) ? 1 : 0;
    }
    const double coverage = covered / 1000.0;
    EXPECT_GE(coverage, 0.93);
    EXPECT_LE(coverage, 0.97);
}

TEST(PredictMse, ExactPredictionsGiveZero)
{
    VectorXd y(3);
    y << 1.0, -2.0, 0.5;
    EXPECT_EQ(predict_mse({y, y, y}, y), 0.0);
}

TEST(PredictMse, AveragesBeforeScoring)
{
    VectorXd y = VectorXd::Zero(2);
    VectorXd a(2), b(2);
    a << 1.0, 1.0;
    b << -1.0, -1.0;
    EXPECT_EQ(predict_mse({a, b}, y), 0.0);
    EXPECT_EQ(predict_mse({a}, y), 1.0);
}

TEST(PredictMse, ConstantPredictorMatchesResponseVariance)
{
    // Y = sum of 10 unit-loading N(0,1) plus N(0,4): Var(Y) = 14 at rho = 0
    const Index n = 200000;
    const auto x = test::normal_matrix(n, 11, 4);
    VectorXd y = x.leftCols(10).rowwise().sum() + 2.0 * x.col(10);
    const double mse = predict_mse({VectorXd::Zero(n)}, y);
    EXPECT_NEAR(mse, 14.0, 4.0 * 14.0 * std::sqrt(2.0 / static_cast<double>(n)));
}

TEST(PredictMse, CompleteDataOlsMatchesPredictionErrorFormula)
{
    // Gaussian random design, p = 10 covariates plus intercept, n = 100:
    // E[mse] = sigma^2 (1 + 1/n) (n - 2) / (n - p - 2)
    std::vector<double> mses;
    for (std::uint64_t rep = 0; rep < 400; ++rep) {
        const auto x = test::normal_matrix(1100, 11, derive_seed(5, rep));
        const VectorXd y = x.leftCols(10).rowwise().sum() + 2.0 * x.col(10);
        const MatrixXd design = with_intercept(x.leftCols(10));
        const auto fit = ols(design.topRows(100), y.head(100));
        mses.push_back(predict_mse({design.bottomRows(1000) * fit.coef}, y.tail(1000)));
    }
    double mean = 0.0;
    for (double v : mses) {
        mean += v;
    }
    mean /= static_cast<double>(mses.size());
    const double expected = 4.0 * (1.0 + 1.0 / 100.0) * 98.0 / 88.0;
    EXPECT_NEAR(mean, expected, 0.1);
}

TEST(PredictMse, Errors)
{
    VectorXd y = VectorXd::Zero(3);
    EXPECT_THROW(predict_mse({VectorXd::Zero(2)}, y), SpecError);
    EXPECT_THROW(predict_mse({}, y), SpecError);
}

TEST(MetricsCsv, HeaderAndRow)
{
    std::ostringstream os;
    write_metrics_header(os);
    auto r = replicate_metrics({point(2.5, 2.0, 3.0), point(1.5, 1.0, 1.9)}, 2.0, "q=0", "beta2");
    write_metrics_row(os, r);
    EXPECT_EQ(os.str(), "scenario,estimand,truth,bias,coverage,mse,bias_sq,variance,n_rep\n"
                        "q=0,beta2,2,0,0.5,0.25,0,0.25,2\n");
}
