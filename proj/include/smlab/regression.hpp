#pragma once

// Linear-model kernels used by the imputer and the analysis models:
// ordinary least squares, the Bayesian normal-regression posterior draw and
// type-1 predictive mean matching.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "smlab/errors.hpp"
#include "smlab/random.hpp"

namespace smlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline std::string column_label(const std::vector<std::string>& names, Index c)
{
    if (c < static_cast<Index>(names.size())) {
        return names[static_cast<std::size_t>(c)];
    }
    return "column " + std::to_string(c);
}

/// Names the design columns that make X rank deficient.
[[noreturn]] inline void throw_collinear(const MatrixXd& x, const std::vector<std::string>& names,
                                         const std::string& context)
{
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    const Index rank = qr.rank();
    std::string cols;
    for (Index c = 0; c < x.cols(); ++c) {
        if (x.col(c).squaredNorm() == 0.0) {
            cols += (cols.empty() ? "" : ", ") + column_label(names, c);
        }
    }
    if (cols.empty()) {
        for (Index r = rank; r < x.cols(); ++r) {
            cols += (cols.empty() ? "" : ", ") + column_label(names, qr.colsPermutation().indices()(r));
        }
    }
    throw ImputationError(context + ": singular cross-product even with ridge; collinear columns: " +
                          (cols.empty() ? std::string("(undetermined)") : cols));
}

} // namespace detail

/// Posterior ingredients of the normal linear model under a flat prior with
/// a ridge penalty proportional to the cross-product diagonal.
struct NormPosterior {
    VectorXd beta_hat;
    MatrixXd v;           ///< (X'X + ridge * diag(X'X))^{-1}
    MatrixXd v_chol;      ///< lower Cholesky factor of v
    double rss = 0.0;
    double df = 1.0;      ///< max(rows - cols, 1)
};

inline NormPosterior norm_posterior(const MatrixXd& x_obs, const VectorXd& y_obs, double ridge,
                                    const std::vector<std::string>& names = {},
                                    const std::string& context = "normal regression")
{
    if (x_obs.rows() != y_obs.size()) {
        throw SpecError(context + ": design has " + std::to_string(x_obs.rows()) + " rows but response has " +
                        std::to_string(y_obs.size()));
    }
    if (ridge < 0.0) {
        throw SpecError(context + ": ridge must be >= 0");
    }
    MatrixXd s = x_obs.transpose() * x_obs;
    const VectorXd diag = s.diagonal();
    s.diagonal() += ridge * diag;
    Eigen::LLT<MatrixXd> llt(s);
    // A pivot that is tiny relative to its diagonal entry means the column is
    // (numerically) a combination of the earlier ones.
    if (llt.info() != Eigen::Success || (diag.array() <= 0.0).any() ||
        (llt.matrixL().toDenseMatrix().diagonal().array().square() / s.diagonal().array()).minCoeff() <= 1e-12) {
        detail::throw_collinear(x_obs, names, context);
    }
    NormPosterior post;
    post.beta_hat = llt.solve(x_obs.transpose() * y_obs);
    post.v = llt.solve(MatrixXd::Identity(s.rows(), s.cols()));
    post.v = 0.5 * (post.v + post.v.transpose());
    Eigen::LLT<MatrixXd> vchol(post.v);
    if (vchol.info() != Eigen::Success) {
        detail::throw_collinear(x_obs, names, context);
    }
    post.v_chol = vchol.matrixL();
    post.rss = (y_obs - x_obs * post.beta_hat).squaredNorm();
    post.df = std::max<double>(static_cast<double>(x_obs.rows() - x_obs.cols()), 1.0);
    return post;
}

struct ParameterDraw {
    VectorXd beta;
    double sigma = 0.0;
};

/// sigma*^2 = RSS / chi2(df); beta* = beta_hat + sigma* * chol(v) * z.
inline ParameterDraw draw_parameters(const NormPosterior& post, Rng& rng)
{
    ParameterDraw d;
    std::chi_squared_distribution<double> chisq(post.df);
    d.sigma = std::sqrt(post.rss / chisq(rng));
    VectorXd z(post.beta_hat.size());
    for (Index k = 0; k < z.size(); ++k) {
        z(k) = std_normal(rng);
    }
    d.beta = post.beta_hat + d.sigma * (post.v_chol * z);
    return d;
}

struct NormDraw {
    VectorXd imputed;
    VectorXd beta_hat;
    VectorXd beta_star;
    double sigma_star = 0.0;
};

/// Bayesian normal-regression imputation: draw (beta*, sigma*) from the
/// posterior, then return X_mis beta* + sigma* eps.
inline NormDraw fit_norm_draw(const VectorXd& y_obs, const MatrixXd& x_obs, const MatrixXd& x_mis, double ridge,
                              Rng& rng, const std::vector<std::string>& names = {})
{
    if (x_mis.cols() != x_obs.cols()) {
        throw SpecError("fit_norm_draw: X_obs and X_mis have different column counts");
    }
    const auto post = norm_posterior(x_obs, y_obs, ridge, names, "fit_norm_draw");
    const auto par = draw_parameters(post, rng);
    NormDraw out;
    out.imputed = x_mis * par.beta;
    for (Index i = 0; i < out.imputed.size(); ++i) {
        out.imputed(i) += par.sigma * std_normal(rng);
    }
    out.beta_hat = post.beta_hat;
    out.beta_star = par.beta;
    out.sigma_star = par.sigma;
    return out;
}

/// Observed predictions sorted once for repeated nearest-donor queries.
struct PmmIndex {
    std::vector<Index> order;    ///< observed row for each sorted position
    std::vector<double> sorted;  ///< ascending eta_obs
};

inline PmmIndex pmm_index(const VectorXd& eta_obs)
{
    PmmIndex ix;
    const auto n = static_cast<std::size_t>(eta_obs.size());
    ix.order.resize(n);
    std::iota(ix.order.begin(), ix.order.end(), Index{0});
    std::sort(ix.order.begin(), ix.order.end(), [&](Index a, Index b) {
        return eta_obs(a) < eta_obs(b) || (eta_obs(a) == eta_obs(b) && a < b);
    });
    ix.sorted.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        ix.sorted[r] = eta_obs(ix.order[r]);
    }
    return ix;
}

/// Index into the observed rows of a donor drawn uniformly from the `donors`
/// observed predictions nearest to `target`. Candidates tied at the pool
/// boundary share the remaining slots uniformly.
inline Index pmm_match(const PmmIndex& ix, double target, std::size_t donors, Rng& rng)
{
    const auto& sorted = ix.sorted;
    const std::size_t n = sorted.size();
    const auto pos = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), target) - sorted.begin());
    std::size_t lo = pos;  // next candidate on the left is lo - 1
    std::size_t hi = pos;  // next candidate on the right is hi
    double kth = 0.0;
    for (std::size_t taken = 0; taken < donors; ++taken) {
        const double dl = lo > 0 ? target - sorted[lo - 1] : INFINITY;
        const double dr = hi < n ? sorted[hi] - target : INFINITY;
        if (dl <= dr) {
            kth = dl;
            --lo;
        } else {
            kth = dr;
            ++hi;
        }
    }
    // Everything within kth is a contiguous range around pos.
    std::size_t a = lo;
    while (a > 0 && target - sorted[a - 1] <= kth) {
        --a;
    }
    std::size_t b = hi;
    while (b < n && sorted[b] - target <= kth) {
        ++b;
    }
    std::size_t strictly = 0;
    for (std::size_t r = a; r < b; ++r) {
        strictly += std::abs(sorted[r] - target) < kth ? 1 : 0;
    }
    const std::size_t tied = (b - a) - strictly;
    const std::size_t slot = std::uniform_int_distribution<std::size_t>(0, donors - 1)(rng);
    // Slot below `strictly` selects a closer candidate, otherwise a tied one.
    std::size_t want = slot < strictly ? slot : std::uniform_int_distribution<std::size_t>(0, tied - 1)(rng);
    const bool want_close = slot < strictly;
    for (std::size_t r = a; r < b; ++r) {
        if ((std::abs(sorted[r] - target) < kth) == want_close) {
            if (want == 0) {
                return ix.order[r];
            }
            --want;
        }
    }
    return ix.order[b - 1];
}

struct PmmDraw {
    VectorXd imputed;
    VectorXd beta_hat;
    VectorXd beta_star;
    std::vector<Index> donor_rows;  ///< index into y_obs of the chosen donor per missing cell
};

/// Type-1 predictive mean matching: observed predictions use beta_hat,
/// missing predictions use a posterior draw beta*. Each missing cell takes
/// the observed y of a donor drawn from its `donors` nearest observed
/// predictions.
inline PmmDraw fit_pmm_draw(const VectorXd& y_obs, const MatrixXd& x_obs, const MatrixXd& x_mis, int donors,
                            double ridge, Rng& rng, const std::vector<std::string>& names = {})
{
    if (donors < 1) {
        throw SpecError("fit_pmm_draw: donors must be >= 1");
    }
    if (donors > y_obs.size()) {
        throw ImputationError("fit_pmm_draw: " + std::to_string(donors) + " donors requested but only " +
                              std::to_string(y_obs.size()) + " observed rows");
    }
    if (x_mis.cols() != x_obs.cols()) {
        throw SpecError("fit_pmm_draw: X_obs and X_mis have different column counts");
    }
    const auto post = norm_posterior(x_obs, y_obs, ridge, names, "fit_pmm_draw");
    const auto par = draw_parameters(post, rng);
    const auto ix = pmm_index(x_obs * post.beta_hat);
    const VectorXd eta_mis = x_mis * par.beta;

    PmmDraw out;
    out.imputed.resize(x_mis.rows());
    out.donor_rows.resize(static_cast<std::size_t>(x_mis.rows()));
    for (Index i = 0; i < x_mis.rows(); ++i) {
        const Index donor = pmm_match(ix, eta_mis(i), static_cast<std::size_t>(donors), rng);
        out.donor_rows[static_cast<std::size_t>(i)] = donor;
        out.imputed(i) = y_obs(donor);
    }
    out.beta_hat = post.beta_hat;
    out.beta_star = par.beta;
    return out;
}

// ---------------------------------------------------------------------------
// Analysis-model OLS

struct OlsFit {
    VectorXd coef;
    MatrixXd cov;        ///< sigma^2 (X'X)^{-1}
    double sigma2 = 0.0; ///< RSS / (n - k)
    double df = 0.0;
    std::vector<bool> aliased;  ///< set by ols_dropping_aliased only
};

inline OlsFit ols(const MatrixXd& x, const VectorXd& y)
{
    if (x.rows() != y.size()) {
        throw SpecError("ols: dimension mismatch");
    }
    if (x.rows() <= x.cols()) {
        throw SpecError("ols: need more rows than columns");
    }
    const MatrixXd xtx = x.transpose() * x;
    Eigen::LLT<MatrixXd> llt(xtx);
    if (llt.info() != Eigen::Success) {
        detail::throw_collinear(x, {}, "ols");
    }
    OlsFit f;
    f.coef = llt.solve(x.transpose() * y);
    f.df = static_cast<double>(x.rows() - x.cols());
    f.sigma2 = (y - x * f.coef).squaredNorm() / f.df;
    f.cov = f.sigma2 * llt.solve(MatrixXd::Identity(x.cols(), x.cols()));
    return f;
}

/// Least squares that drops columns which are (numerically) combinations of
/// earlier columns, scanning left to right. Dropped coefficients are 0 and
/// their covariance rows are NaN, so predictions use the kept columns only.
inline OlsFit ols_dropping_aliased(const MatrixXd& x, const VectorXd& y, double tol = 1e-7)
{
    if (x.rows() != y.size()) {
        throw SpecError("ols: dimension mismatch");
    }
    std::vector<Index> kept;
    std::vector<bool> aliased(static_cast<std::size_t>(x.cols()), true);
    for (Index j = 0; j < x.cols(); ++j) {
        const double norm = x.col(j).norm();
        if (norm == 0.0) {
            continue;
        }
        VectorXd resid = x.col(j);
        if (!kept.empty()) {
            const MatrixXd k = x(Eigen::all, kept);
            resid -= k * (k.transpose() * k).llt().solve(k.transpose() * x.col(j));
        }
        if (resid.norm() > tol * norm) {
            kept.push_back(j);
            aliased[static_cast<std::size_t>(j)] = false;
        }
    }
    if (kept.empty()) {
        throw SpecError("ols: every column is zero");
    }
    const auto sub = ols(x(Eigen::all, kept), y);
    OlsFit f;
    f.coef = VectorXd::Zero(x.cols());
    f.cov = MatrixXd::Constant(x.cols(), x.cols(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t a = 0; a < kept.size(); ++a) {
        f.coef(kept[a]) = sub.coef(static_cast<Index>(a));
        for (std::size_t b = 0; b < kept.size(); ++b) {
            f.cov(kept[a], kept[b]) = sub.cov(static_cast<Index>(a), static_cast<Index>(b));
        }
    }
    f.sigma2 = sub.sigma2;
    f.df = sub.df;
    f.aliased = std::move(aliased);
    return f;
}

/// Design matrix [1, X].
inline MatrixXd with_intercept(const MatrixXd& x)
{
    MatrixXd d(x.rows(), x.cols() + 1);
    d.col(0).setOnes();
    d.rightCols(x.cols()) = x;
    return d;
}

} // namespace smlab
