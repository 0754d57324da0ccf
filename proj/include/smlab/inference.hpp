#pragma once

// Rubin's combining rules and replicate-level evaluation metrics.

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "smlab/errors.hpp"
#include "smlab/format.hpp"
#include "smlab/regression.hpp"

namespace smlab {

struct PooledEstimate {
    double q_bar = 0.0;
    double u_bar = 0.0;
    double b = 0.0;
    double t = 0.0;
    double df = std::numeric_limits<double>::infinity();
    double ci_low = 0.0;
    double ci_high = 0.0;
    double level = 0.95;
    int m = 0;

    bool covers(double truth) const { return ci_low <= truth && truth <= ci_high; }
};

/// Two-sided critical value; the normal limit is used for infinite df.
inline double critical_value(double df, double level)
{
    const double prob = 0.5 * (1.0 + level);
    if (!std::isfinite(df)) {
        return boost::math::quantile(boost::math::normal_distribution<double>(), prob);
    }
    return boost::math::quantile(boost::math::students_t_distribution<double>(df), prob);
}

/// Combines m point estimates and their squared standard errors.
inline PooledEstimate pool(const std::vector<double>& estimates, const std::vector<double>& variances,
                           double level = 0.95)
{
    const auto m = estimates.size();
    if (m < 2) {
        throw SpecError("pool: need m >= 2 imputations (between-imputation variance undefined for m = " +
                        std::to_string(m) + ")");
    }
    if (variances.size() != m) {
        throw SpecError("pool: " + std::to_string(m) + " estimates but " + std::to_string(variances.size()) +
                        " variances");
    }
    if (!(level > 0.0 && level < 1.0)) {
        throw SpecError("pool: level must be in (0, 1)");
    }
    PooledEstimate r;
    r.m = static_cast<int>(m);
    r.level = level;
    const double md = static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
        if (!(variances[k] >= 0.0)) {
            throw SpecError("pool: variance " + std::to_string(k) + " is negative or NaN");
        }
        r.u_bar += variances[k];
    }
    r.u_bar /= md;
    // shifted by the first estimate so equal estimates give b == 0 exactly
    const double shift = estimates[0];
    double mean_dev = 0.0;
    for (double q : estimates) {
        mean_dev += q - shift;
    }
    mean_dev /= md;
    r.q_bar = shift + mean_dev;
    for (double q : estimates) {
        r.b += (q - shift - mean_dev) * (q - shift - mean_dev);
    }
    r.b /= md - 1.0;
    const double inflated = (1.0 + 1.0 / md) * r.b;
    r.t = r.u_bar + inflated;
    if (r.b > 0.0) {
        const double ratio = 1.0 + r.u_bar / inflated;
        r.df = (md - 1.0) * ratio * ratio;
    }
    const double half = critical_value(r.df, level) * std::sqrt(r.t);
    r.ci_low = r.q_bar - half;
    r.ci_high = r.q_bar + half;
    return r;
}

/// Pools coefficient k across per-imputation OLS fits.
inline PooledEstimate pool_coefficient(const std::vector<OlsFit>& fits, Index k, double level = 0.95)
{
    std::vector<double> est;
    std::vector<double> var;
    for (const auto& f : fits) {
        est.push_back(f.coef(k));
        var.push_back(f.cov(k, k));
    }
    return pool(est, var, level);
}

/// Sample mean and its squared standard error s^2 / n.
struct MeanEstimate {
    double mean = 0.0;
    double variance = 0.0;
};

inline MeanEstimate sample_mean(const VectorXd& v)
{
    const auto n = static_cast<double>(v.size());
    if (v.size() < 2) {
        throw SpecError("sample_mean: need at least 2 values");
    }
    MeanEstimate e;
    e.mean = v.mean();
    e.variance = (v.array() - e.mean).square().sum() / (n - 1.0) / n;
    return e;
}

struct MetricsRecord {
    std::string scenario;
    std::string estimand;
    double truth = 0.0;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double coverage = 0.0;
    double mse = 0.0;
    double bias_sq = 0.0;
    double variance = 0.0;  ///< population variance of the point estimates
    int n_rep = 0;
};

inline MetricsRecord replicate_metrics(const std::vector<PooledEstimate>& reps, double truth,
                                       std::string scenario = {}, std::string estimand = {})
{
    if (reps.empty()) {
        throw SpecError("replicate_metrics: need at least one replicate");
    }
    MetricsRecord r;
    r.scenario = std::move(scenario);
    r.estimand = std::move(estimand);
    r.truth = truth;
    r.n_rep = static_cast<int>(reps.size());
    const double n = static_cast<double>(reps.size());
    int covered = 0;
    for (const auto& e : reps) {
        r.mean_estimate += e.q_bar;
        covered += e.covers(truth) ? 1 : 0;
    }
    r.mean_estimate /= n;
    r.bias = r.mean_estimate - truth;
    r.coverage = covered / n;
    for (const auto& e : reps) {
        r.mse += (e.q_bar - truth) * (e.q_bar - truth);
        r.variance += (e.q_bar - r.mean_estimate) * (e.q_bar - r.mean_estimate);
    }
    r.mse /= n;
    r.variance /= n;
    r.bias_sq = r.bias * r.bias;
    return r;
}

/// Averages the per-imputation predictions and returns the mean squared
/// error against the true responses.
inline double predict_mse(const std::vector<VectorXd>& predictions, const VectorXd& truth)
{
    if (predictions.empty()) {
        throw SpecError("predict_mse: no predictions");
    }
    VectorXd pooled = VectorXd::Zero(truth.size());
    for (const auto& p : predictions) {
        if (p.size() != truth.size()) {
            throw SpecError("predict_mse: prediction has " + std::to_string(p.size()) + " rows but truth has " +
                            std::to_string(truth.size()));
        }
        pooled += p;
    }
    pooled /= static_cast<double>(predictions.size());
    if (truth.size() == 0) {
        throw SpecError("predict_mse: empty test set");
    }
    return (pooled - truth).squaredNorm() / static_cast<double>(truth.size());
}

inline void write_metrics_header(std::ostream& out)
{
    out << "scenario,estimand,truth,bias,coverage,mse,bias_sq,variance,n_rep\n";
}

inline void write_metrics_row(std::ostream& out, const MetricsRecord& r)
{
    out << r.scenario << ',' << r.estimand << ',' << format_double(r.truth) << ',' << format_double(r.bias) << ','
        << format_double(r.coverage) << ',' << format_double(r.mse) << ',' << format_double(r.bias_sq) << ','
        << format_double(r.variance) << ',' << r.n_rep << '\n';
}

} // namespace smlab
