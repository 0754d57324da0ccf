#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace smlab;

namespace {

DataMatrix correlated_with_holes(Index n, double rate, std::uint64_t seed)
{
    MatrixXd x = test::normal_matrix(n, 3, seed);
    x.col(1) += 0.8 * x.col(0);
    x.col(2) = (0.5 * x.col(0) + 0.5 * x.col(1) + 0.6 * x.col(2)).array() + 3.0;
    Rng rng(seed + 1);
    MissMask m(n, 3);
    for (Index i = 0; i < n; ++i) {
        m.set(i, 1, uniform01(rng) < rate);
        m.set(i, 2, uniform01(rng) < rate);
    }
    return DataMatrix(x, m, {"a", "b", "c"});
}

bool same_bits(double a, double b)
{
    return std::memcmp(&a, &b, sizeof(double)) == 0;
}

DataMatrix sim2_table(double q, Index n, std::uint64_t seed)
{
    Rng rng(seed);
    const auto x = sim2_data(n, rng);
    return DataMatrix(x, simulate_mask(sim2_spec(q), x, seed + 1), {"X1", "X2", "X3"});
}

} // namespace

TEST(FcsImpute, CompleteDataIsUntouched)
{
    const auto x = test::normal_matrix(30, 3, 1);
    ImputationConfig cfg;
    cfg.seed = 2;
    const auto r = fcs_impute(DataMatrix::complete(x, {"a", "b", "c"}), cfg);
    EXPECT_EQ(r.model_fits, 0u);
    EXPECT_TRUE(r.imputed_columns.empty());
    ASSERT_EQ(r.completed.size(), 5u);
    for (const auto& c : r.completed) {
        EXPECT_EQ(c, x);
    }
}

TEST(FcsImpute, ObservedCellsNeverChange)
{
    const auto d = correlated_with_holes(200, 0.3, 3);
    for (auto method : {ImputeMethod::norm, ImputeMethod::pmm}) {
        ImputationConfig cfg;
        cfg.method = method;
        cfg.seed = 4;
        const auto r = fcs_impute(d, cfg);
        for (const auto& c : r.completed) {
            ASSERT_TRUE(c.allFinite());
            for (Index i = 0; i < d.rows(); ++i) {
                for (Index j = 0; j < d.cols(); ++j) {
                    if (auto v = d.observed(i, j)) {
                        ASSERT_TRUE(same_bits(c(i, j), *v));
                    }
                }
            }
        }
        bool varies = false;
        for (Index i = 0; i < d.rows() && !varies; ++i) {
            if (d.is_missing(i, 1)) {
                varies = r.completed[0](i, 1) != r.completed[1](i, 1);
            }
        }
        EXPECT_TRUE(varies);
    }
}

TEST(FcsImpute, Deterministic)
{
    const auto d = correlated_with_holes(150, 0.25, 5);
    ImputationConfig cfg;
    cfg.seed = 6;
    cfg.m = 4;
    const auto a = fcs_impute(d, cfg);
    const auto b = fcs_impute(d, cfg);
    cfg.threads = 3;
    const auto c = fcs_impute(d, cfg);
    for (std::size_t k = 0; k < a.completed.size(); ++k) {
        EXPECT_EQ(a.completed[k], b.completed[k]);
        EXPECT_EQ(a.completed[k], c.completed[k]);
    }
    ASSERT_EQ(a.chain_stats.size(), c.chain_stats.size());
    for (std::size_t s = 0; s < a.chain_stats.size(); ++s) {
        EXPECT_EQ(a.chain_stats[s].mean, c.chain_stats[s].mean);
    }
    cfg.seed = 7;
    EXPECT_NE(fcs_impute(d, cfg).completed[0], a.completed[0]);
}

TEST(FcsImpute, PmmClosurePerColumn)
{
    const auto d = correlated_with_holes(300, 0.4, 8);
    ImputationConfig cfg;
    cfg.seed = 9;
    const auto r = fcs_impute(d, cfg);
    for (Index j = 1; j < 3; ++j) {
        const auto obs = d.observed_column(j);
        const std::set<double> pool(obs.begin(), obs.end());
        for (const auto& c : r.completed) {
            for (Index i = 0; i < d.rows(); ++i) {
                EXPECT_TRUE(pool.count(c(i, j))) << "row " << i << " col " << j;
            }
        }
    }
}

TEST(FcsImpute, McarMeanRecovered)
{
    const Index n = 5000;
    MatrixXd x = test::normal_matrix(n, 3, 10);
    x.col(1).array() += 3.0;
    x.col(2) += 0.7 * x.col(1);
    Rng rng(11);
    MissMask m(n, 3);
    for (Index i = 0; i < n; ++i) {
        m.set(i, 1, uniform01(rng) < 0.2);
    }
    const DataMatrix d(x, m, {"a", "b", "c"});
    ImputationConfig cfg;
    cfg.method = ImputeMethod::norm;
    cfg.m = 20;
    cfg.seed = 12;
    const auto r = fcs_impute(d, cfg);
    std::vector<double> est, var;
    for (const auto& c : r.completed) {
        const auto e = sample_mean(c.col(1));
        est.push_back(e.mean);
        var.push_back(e.variance);
    }
    const auto pooled = pool(est, var);
    EXPECT_NEAR(pooled.q_bar, x.col(1).mean(), 3.0 * std::sqrt(pooled.t));
}

TEST(FcsImpute, FileMatchingRunsToCompletion)
{
    const auto d = sim2_table(1.0, 1000, 13);
    ImputationConfig cfg;
    cfg.method = ImputeMethod::norm;
    cfg.maxit = 50;
    cfg.seed = 14;
    const auto r = fcs_impute(d, cfg);
    EXPECT_EQ(r.completed.size(), 5u);
    for (const auto& c : r.completed) {
        EXPECT_TRUE(c.allFinite());
    }
    EXPECT_EQ(r.model_fits, 5u * 50u * 2u);
}

TEST(FcsImpute, IgnoredRowsDoNotInfluenceFits)
{
    const auto d = correlated_with_holes(240, 0.3, 15);
    std::vector<bool> ignore(240, false);
    for (Index i = 160; i < 240; ++i) {
        ignore[static_cast<std::size_t>(i)] = true;
    }
    // same mask, ignored rows' observed values replaced by junk
    MatrixXd junk = d.filled(0.0);
    for (Index i = 160; i < 240; ++i) {
        junk.row(i) = VectorXd::Constant(3, 100.0 + static_cast<double>(i)).transpose();
    }
    const DataMatrix d2(junk, d.mask(), d.names());
    for (auto method : {ImputeMethod::norm, ImputeMethod::pmm}) {
        ImputationConfig cfg;
        cfg.method = method;
        cfg.ignore = ignore;
        cfg.seed = 16;
        const auto a = fcs_impute(d, cfg);
        const auto b = fcs_impute(d2, cfg);
        ASSERT_EQ(a.fitted_models.size(), b.fitted_models.size());
        for (std::size_t k = 0; k < a.fitted_models.size(); ++k) {
            EXPECT_EQ(a.fitted_models[k].beta_hat, b.fitted_models[k].beta_hat);
            EXPECT_EQ(a.fitted_models[k].beta_star, b.fitted_models[k].beta_star);
        }
        for (std::size_t k = 0; k < a.completed.size(); ++k) {
            EXPECT_EQ(a.completed[k].topRows(160), b.completed[k].topRows(160));
        }
    }
}

TEST(FcsImpute, IgnoredRowsAreStillImputed)
{
    const auto d = correlated_with_holes(200, 0.3, 17);
    std::vector<bool> ignore(200, false);
    for (Index i = 0; i < 200; i += 2) {
        ignore[static_cast<std::size_t>(i)] = true;
    }
    ImputationConfig cfg;
    cfg.ignore = ignore;
    cfg.seed = 18;
    const auto r = fcs_impute(d, cfg);
    for (const auto& c : r.completed) {
        EXPECT_TRUE(c.allFinite());
    }
}

TEST(FcsImpute, LogicalCellsAreSkipped)
{
    MatrixXd x = test::normal_matrix(100, 3, 19);
    BitMatrix bits = BitMatrix::Zero(100, 3);
    BitMatrix logical = BitMatrix::Zero(100, 3);
    for (Index i = 0; i < 100; i += 4) {
        bits(i, 2) = logical(i, 2) = 1;
    }
    for (Index i = 1; i < 100; i += 5) {
        bits(i, 2) = 1;
        bits(i, 1) = 1;
    }
    const DataMatrix d(x, MissMask(bits, logical), {"sex", "age", "psa"});
    ImputationConfig cfg;
    cfg.seed = 20;
    const auto r = fcs_impute(d, cfg);
    for (const auto& c : r.completed) {
        for (Index i = 0; i < 100; ++i) {
            if (logical(i, 2)) {
                EXPECT_TRUE(std::isnan(c(i, 2)));
            } else {
                EXPECT_TRUE(std::isfinite(c(i, 2)));
                EXPECT_TRUE(std::isfinite(c(i, 1)));
            }
        }
    }
}

TEST(FcsImpute, Errors)
{
    MatrixXd x = test::normal_matrix(10, 2, 21);
    BitMatrix bits = BitMatrix::Zero(10, 2);
    bits.col(1).setOnes();
    const DataMatrix empty_col(x, MissMask(bits), {"a", "blank"});
    ImputationConfig cfg;
    try {
        fcs_impute(empty_col, cfg);
        FAIL() << "expected ImputationError";
    } catch (const ImputationError& e) {
        EXPECT_NE(std::string(e.what()).find("blank"), std::string::npos);
    }
    // observed only among ignored rows
    bits.col(1).setZero();
    for (Index i = 0; i < 5; ++i) {
        bits(i, 1) = 1;
    }
    cfg.ignore.assign(10, false);
    for (std::size_t i = 5; i < 10; ++i) {
        cfg.ignore[i] = true;
    }
    EXPECT_THROW(fcs_impute(DataMatrix(x, MissMask(bits), {"a", "b"}), cfg), ImputationError);

    const auto d = correlated_with_holes(50, 0.2, 22);
    ImputationConfig bad;
    bad.ignore.assign(3, false);
    EXPECT_THROW(fcs_impute(d, bad), SpecError);
    bad = {};
    bad.m = 0;
    EXPECT_THROW(fcs_impute(d, bad), SpecError);
    bad = {};
    bad.donors = 0;
    EXPECT_THROW(fcs_impute(d, bad), SpecError);
    bad = {};
    bad.ridge = -1.0;
    EXPECT_THROW(fcs_impute(d, bad), SpecError);
}

TEST(FcsImpute, FewObservedRowsClampDonors)
{
    MatrixXd x = test::normal_matrix(20, 2, 23);
    BitMatrix bits = BitMatrix::Zero(20, 2);
    for (Index i = 3; i < 20; ++i) {
        bits(i, 1) = 1;
    }
    ImputationConfig cfg;
    cfg.donors = 5;
    cfg.seed = 24;
    const auto r = fcs_impute(DataMatrix(x, MissMask(bits), {"a", "b"}), cfg);
    for (Index i = 3; i < 20; ++i) {
        const double v = r.completed[0](i, 1);
        EXPECT_TRUE(v == x(0, 1) || v == x(1, 1) || v == x(2, 1));
    }
}

TEST(FcsImpute, StatsAndModelsShape)
{
    const auto d = correlated_with_holes(100, 0.3, 25);
    ImputationConfig cfg;
    cfg.m = 3;
    cfg.maxit = 4;
    cfg.seed = 26;
    const auto r = fcs_impute(d, cfg);
    EXPECT_EQ(r.imputed_columns, (std::vector<int>{1, 2}));
    EXPECT_EQ(r.chain_stats.size(), 3u * 4u * 2u);
    ASSERT_EQ(r.fitted_models.size(), 3u * 2u);
    EXPECT_EQ(r.fitted_models[0].predictors, (std::vector<std::string>{"(Intercept)", "a", "c"}));
    EXPECT_EQ(r.fitted_models[0].beta_hat.size(), 3);
}

TEST(FcsImpute, PerColumnMethods)
{
    const auto d = correlated_with_holes(200, 0.3, 27);
    ImputationConfig cfg;
    cfg.methods = {ImputeMethod::pmm, ImputeMethod::norm, ImputeMethod::pmm};
    cfg.seed = 28;
    const auto r = fcs_impute(d, cfg);
    const auto obs = d.observed_column(2);
    const std::set<double> pool(obs.begin(), obs.end());
    bool new_value = false;
    for (Index i = 0; i < d.rows(); ++i) {
        EXPECT_TRUE(pool.count(r.completed[0](i, 2)));
        if (d.is_missing(i, 1)) {
            const auto b = d.observed_column(1);
            new_value = new_value || std::find(b.begin(), b.end(), r.completed[0](i, 1)) == b.end();
        }
    }
    EXPECT_TRUE(new_value);
    cfg.methods = {ImputeMethod::pmm};
    EXPECT_THROW(fcs_impute(d, cfg), SpecError);
}

TEST(ChainDiagnostics, SingleChainSpreadUndefined)
{
    const auto d = correlated_with_holes(80, 0.3, 29);
    ImputationConfig cfg;
    cfg.m = 1;
    cfg.seed = 30;
    const auto diag = chain_diagnostics(fcs_impute(d, cfg));
    EXPECT_FALSE(diag.spread_defined);
    for (const auto& s : diag.spread) {
        EXPECT_FALSE(s.between_chain_sd.has_value());
    }
    std::ostringstream os;
    write_spread_csv(os, diag, d.names());
    EXPECT_EQ(os.str(), "column,between_chain_sd,defined\nb,,0\nc,,0\n");
}

TEST(ChainDiagnostics, CompleteColumnHasNoTrace)
{
    const auto d = correlated_with_holes(80, 0.3, 31);
    ImputationConfig cfg;
    cfg.seed = 32;
    const auto diag = chain_diagnostics(fcs_impute(d, cfg));
    EXPECT_TRUE(diag.spread_defined);
    for (const auto& s : diag.trace) {
        EXPECT_NE(s.column, 0);
    }
    std::ostringstream os;
    write_diagnostics_csv(os, diag, d.names());
    EXPECT_EQ(os.str().rfind("chain,iteration,column,mean,sd\n", 0), 0u);
}

TEST(ChainDiagnostics, SlowConvergenceIsDetectable)
{
    // marginal means of the imputed cells barely move here; the X3 ~ X2 slope does
    const auto d = sim2_table(0.9, 1000, 33);
    const auto slope = [&](int maxit) {
        ImputationConfig cfg;
        cfg.method = ImputeMethod::norm;
        cfg.seed = 34;
        cfg.maxit = maxit;
        VectorXd b(5);
        Index k = 0;
        for (const auto& f : fcs_impute(d, cfg).fitted_models) {
            if (f.column == 2) {
                b(k++) = f.beta_hat(2);
            }
        }
        const double mean = b.mean();
        return std::pair{mean, std::sqrt((b.array() - mean).square().sum() / 4.0)};
    };
    const auto [short_mean, short_sd] = slope(5);
    const auto [long_mean, long_sd] = slope(50);
    EXPECT_GT(std::abs(short_mean - long_mean), 2.0 * std::max(short_sd, long_sd));
    EXPECT_NEAR(long_mean, 2.0, 0.3);
}

TEST(WriteCompleted, OneFilePerImputation)
{
    test::TempDir dir("imp");
    const auto d = correlated_with_holes(30, 0.2, 35);
    ImputationConfig cfg;
    cfg.m = 2;
    cfg.seed = 36;
    const auto r = fcs_impute(d, cfg);
    const auto paths = write_completed(dir.file("out"), r);
    ASSERT_EQ(paths.size(), 2u);
    EXPECT_EQ(paths[1], dir.file("out.imp2.csv"));
    const auto back = read_csv_file(paths[0]);
    EXPECT_TRUE(back.is_complete());
    EXPECT_EQ(back.complete_values(), r.completed[0]);
}
