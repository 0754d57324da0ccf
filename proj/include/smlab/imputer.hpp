#pragma once

// Fully conditional specification (chained equations) multiple imputation.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "smlab/csv.hpp"
#include "smlab/errors.hpp"
#include "smlab/format.hpp"
#include "smlab/parallel.hpp"
#include "smlab/random.hpp"
#include "smlab/regression.hpp"
#include "smlab/tabular.hpp"

namespace smlab {

enum class ImputeMethod { norm, pmm };

inline const char* to_string(ImputeMethod m) { return m == ImputeMethod::norm ? "norm" : "pmm"; }

inline ImputeMethod parse_method(const std::string& s)
{
    if (s == "norm") {
        return ImputeMethod::norm;
    }
    if (s == "pmm") {
        return ImputeMethod::pmm;
    }
    throw SpecError("unknown imputation method '" + s + "' (expected norm or pmm)");
}

struct ImputationConfig {
    int m = 5;
    int maxit = 5;
    ImputeMethod method = ImputeMethod::pmm;  ///< used for every column unless `methods` is set
    std::vector<ImputeMethod> methods;        ///< per column; empty means `method` everywhere
    int donors = 5;
    std::vector<bool> ignore;                 ///< rows imputed but excluded from fitting; empty = none
    double ridge = 1e-5;
    std::uint64_t seed = 0;
    unsigned threads = 1;                     ///< chains run in parallel up to this many workers
};

struct ChainStat {
    int chain = 0;
    int iteration = 0;  ///< 1-based sweep number
    int column = 0;
    double mean = 0.0;
    double sd = 0.0;
};

struct FittedModel {
    int chain = 0;
    int column = 0;
    std::vector<std::string> predictors;  ///< "(Intercept)" then the other columns
    VectorXd beta_hat;
    VectorXd beta_star;
};

struct ImputationResult {
    std::vector<MatrixXd> completed;  ///< logically missing cells stay NaN
    std::vector<ChainStat> chain_stats;
    std::vector<FittedModel> fitted_models;
    std::vector<std::string> names;
    std::vector<int> imputed_columns;
    std::size_t model_fits = 0;
};

namespace detail {

enum : std::uint64_t { stream_init = 0, stream_params = 1, stream_fit_cells = 2, stream_ignored_cells = 3 };

// Random numbers for ignored rows come from their own streams, so the data
// in ignored rows cannot shift the draws that shape the fitted models.
inline Rng chain_rng(std::uint64_t seed, int chain, int iteration, int column, std::uint64_t stream)
{
    const auto s = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(chain), static_cast<std::uint64_t>(iteration)),
                               static_cast<std::uint64_t>(column), stream);
    return Rng(s);
}

inline void validate_config(const DataMatrix& x, const ImputationConfig& cfg)
{
    if (cfg.m < 1) {
        throw SpecError("imputation: m must be >= 1");
    }
    if (cfg.maxit < 1) {
        throw SpecError("imputation: maxit must be >= 1");
    }
    if (cfg.donors < 1) {
        throw SpecError("imputation: donors must be >= 1");
    }
    if (!(cfg.ridge >= 0.0)) {
        throw SpecError("imputation: ridge must be >= 0");
    }
    if (!cfg.ignore.empty() && static_cast<Index>(cfg.ignore.size()) != x.rows()) {
        throw SpecError("imputation: ignore has " + std::to_string(cfg.ignore.size()) + " entries for " +
                        std::to_string(x.rows()) + " rows");
    }
    if (!cfg.methods.empty() && static_cast<Index>(cfg.methods.size()) != x.cols()) {
        throw SpecError("imputation: " + std::to_string(cfg.methods.size()) + " methods for " +
                        std::to_string(x.cols()) + " columns");
    }
}

struct ColumnPlan {
    int column = 0;
    ImputeMethod method = ImputeMethod::pmm;
    std::vector<Index> fit_rows;      ///< observed, not ignored
    std::vector<Index> mis_fit;       ///< imputable cells in non-ignored rows
    std::vector<Index> mis_ignored;   ///< imputable cells in ignored rows
    VectorXd y_fit;
};

inline double sd_of(const std::vector<double>& v, double mean)
{
    if (v.size() < 2) {
        return 0.0;
    }
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

} // namespace detail

/// Multiply imputes every non-logical missing cell of x.
///
/// Each of the m chains starts by filling missing cells with random draws
/// from the column's observed values (non-ignored rows), then runs maxit
/// sweeps over the incomplete columns in storage order. A visit fits the
/// column's model on the non-ignored rows observed in that column, with all
/// other columns and an intercept as predictors, and redraws every missing
/// cell of the column including those in ignored rows. Logically missing
/// cells are never imputed; where they serve as predictors they take the
/// column's observed mean.
inline ImputationResult fcs_impute(const DataMatrix& x, const ImputationConfig& cfg)
{
    detail::validate_config(x, cfg);
    const Index n = x.rows();
    const Index p = x.cols();
    const auto& mask = x.mask();
    auto ignored = [&](Index i) { return !cfg.ignore.empty() && cfg.ignore[static_cast<std::size_t>(i)]; };

    ImputationResult result;
    result.names = x.names();
    const MatrixXd base = x.filled(std::numeric_limits<double>::quiet_NaN());

    std::vector<detail::ColumnPlan> plans;
    for (Index j = 0; j < p; ++j) {
        detail::ColumnPlan plan;
        plan.column = static_cast<int>(j);
        plan.method = cfg.methods.empty() ? cfg.method : cfg.methods[static_cast<std::size_t>(j)];
        for (Index i = 0; i < n; ++i) {
            if (!mask.missing(i, j)) {
                if (!ignored(i)) {
                    plan.fit_rows.push_back(i);
                }
            } else if (!mask.logical(i, j)) {
                (ignored(i) ? plan.mis_ignored : plan.mis_fit).push_back(i);
            }
        }
        if (plan.mis_fit.empty() && plan.mis_ignored.empty()) {
            continue;
        }
        if (plan.fit_rows.empty()) {
            throw ImputationError("imputation: column '" + x.names()[static_cast<std::size_t>(j)] + "' (index " +
                                  std::to_string(j) + ") has no observed values among fitting rows");
        }
        plan.y_fit.resize(static_cast<Index>(plan.fit_rows.size()));
        for (std::size_t r = 0; r < plan.fit_rows.size(); ++r) {
            plan.y_fit(static_cast<Index>(r)) = base(plan.fit_rows[r], j);
        }
        result.imputed_columns.push_back(plan.column);
        plans.push_back(std::move(plan));
    }

    if (plans.empty()) {
        result.completed.assign(static_cast<std::size_t>(cfg.m), base);
        return result;
    }

    // Predictor stand-in for logically missing cells.
    VectorXd logical_fill = VectorXd::Zero(p);
    for (Index j = 0; j < p; ++j) {
        const auto obs = x.observed_column(j);
        double s = 0.0;
        for (double v : obs) {
            s += v;
        }
        logical_fill(j) = obs.empty() ? 0.0 : s / static_cast<double>(obs.size());
    }

    struct ChainOut {
        MatrixXd completed;
        std::vector<ChainStat> stats;
        std::vector<FittedModel> models;
        std::size_t fits = 0;
    };
    std::vector<ChainOut> chains(static_cast<std::size_t>(cfg.m));

    auto run_chain = [&](std::size_t c) {
        const int chain = static_cast<int>(c);
        ChainOut& out = chains[c];
        // Design columns: 0 is the intercept, 1 + j holds data column j.
        MatrixXd work(n, p + 1);
        work.col(0).setOnes();
        work.rightCols(p) = base;
        for (Index j = 0; j < p; ++j) {
            for (Index i = 0; i < n; ++i) {
                if (mask.logical(i, j)) {
                    work(i, j + 1) = logical_fill(j);
                }
            }
        }
        {
            auto rng_fit = detail::chain_rng(cfg.seed, chain, 0, 0, detail::stream_init);
            auto rng_ign = detail::chain_rng(cfg.seed, chain, 0, 0, detail::stream_ignored_cells);
            for (const auto& plan : plans) {
                const Index col = plan.column + 1;
                std::uniform_int_distribution<std::size_t> pick(0, plan.fit_rows.size() - 1);
                for (Index i : plan.mis_fit) {
                    work(i, col) = plan.y_fit(static_cast<Index>(pick(rng_fit)));
                }
                for (Index i : plan.mis_ignored) {
                    work(i, col) = plan.y_fit(static_cast<Index>(pick(rng_ign)));
                }
            }
        }

        std::vector<Index> pred_cols;
        for (int it = 1; it <= cfg.maxit; ++it) {
            for (const auto& plan : plans) {
                const int j = plan.column;
                pred_cols.assign(1, 0);
                std::vector<std::string> pred_names{"(Intercept)"};
                for (Index k = 0; k < p; ++k) {
                    if (k != j) {
                        pred_cols.push_back(k + 1);
                        pred_names.push_back(x.names()[static_cast<std::size_t>(k)]);
                    }
                }
                const MatrixXd x_fit = work(plan.fit_rows, pred_cols);
                auto rng_par = detail::chain_rng(cfg.seed, chain, it, j, detail::stream_params);
                auto rng_fit = detail::chain_rng(cfg.seed, chain, it, j, detail::stream_fit_cells);
                auto rng_ign = detail::chain_rng(cfg.seed, chain, it, j, detail::stream_ignored_cells);
                const std::string where = "imputation: chain " + std::to_string(chain + 1) + ", iteration " +
                                          std::to_string(it) + ", column '" + x.names()[static_cast<std::size_t>(j)] +
                                          "'";
                const auto post = norm_posterior(x_fit, plan.y_fit, cfg.ridge, pred_names, where);
                const auto par = draw_parameters(post, rng_par);
                ++out.fits;

                auto redraw = [&](const std::vector<Index>& rows, Rng& rng, const PmmIndex* ix, std::size_t donors) {
                    if (rows.empty()) {
                        return;
                    }
                    const VectorXd eta = work(rows, pred_cols) * par.beta;
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                        double v;
                        if (ix) {
                            v = plan.y_fit(pmm_match(*ix, eta(static_cast<Index>(r)), donors, rng));
                        } else {
                            v = eta(static_cast<Index>(r)) + par.sigma * std_normal(rng);
                        }
                        if (!std::isfinite(v)) {
                            throw ImputationError(where + ": non-finite imputed value at row " +
                                                  std::to_string(rows[r]));
                        }
                        work(rows[r], j + 1) = v;
                    }
                };
                if (plan.method == ImputeMethod::pmm) {
                    const auto ix = pmm_index(x_fit * post.beta_hat);
                    // Fewer observed rows than donors: use them all.
                    const auto donors = std::min<std::size_t>(static_cast<std::size_t>(cfg.donors), plan.fit_rows.size());
                    redraw(plan.mis_fit, rng_fit, &ix, donors);
                    redraw(plan.mis_ignored, rng_ign, &ix, donors);
                } else {
                    redraw(plan.mis_fit, rng_fit, nullptr, 0);
                    redraw(plan.mis_ignored, rng_ign, nullptr, 0);
                }

                std::vector<double> vals;
                vals.reserve(plan.mis_fit.size() + plan.mis_ignored.size());
                for (Index i : plan.mis_fit) {
                    vals.push_back(work(i, j + 1));
                }
                for (Index i : plan.mis_ignored) {
                    vals.push_back(work(i, j + 1));
                }
                double mean = 0.0;
                for (double v : vals) {
                    mean += v;
                }
                mean /= static_cast<double>(vals.size());
                out.stats.push_back({chain, it, j, mean, detail::sd_of(vals, mean)});
                if (it == cfg.maxit) {
                    out.models.push_back({chain, j, pred_names, post.beta_hat, par.beta});
                }
            }
        }
        out.completed = work.rightCols(p);
        for (Index j = 0; j < p; ++j) {
            for (Index i = 0; i < n; ++i) {
                if (mask.logical(i, j)) {
                    out.completed(i, j) = std::numeric_limits<double>::quiet_NaN();
                }
            }
        }
    };

    parallel_for(chains.size(), cfg.threads, run_chain);

    for (auto& c : chains) {
        result.completed.push_back(std::move(c.completed));
        result.chain_stats.insert(result.chain_stats.end(), c.stats.begin(), c.stats.end());
        result.fitted_models.insert(result.fitted_models.end(), c.models.begin(), c.models.end());
        result.model_fits += c.fits;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct ColumnSpread {
    int column = 0;
    std::optional<double> between_chain_sd;  ///< unset when m = 1
};

struct ChainDiagnostics {
    std::vector<ChainStat> trace;
    std::vector<ColumnSpread> spread;
    bool spread_defined = false;
};

/// Trace rows for every imputed column plus the spread of the chain means at
/// the final iteration (sample standard deviation across chains).
inline ChainDiagnostics chain_diagnostics(const ImputationResult& r)
{
    ChainDiagnostics d;
    d.trace = r.chain_stats;
    const int m = static_cast<int>(r.completed.size());
    d.spread_defined = m >= 2;
    int last = 0;
    for (const auto& s : r.chain_stats) {
        last = std::max(last, s.iteration);
    }
    for (int j : r.imputed_columns) {
        ColumnSpread cs{j, std::nullopt};
        if (d.spread_defined) {
            std::vector<double> means;
            for (const auto& s : r.chain_stats) {
                if (s.column == j && s.iteration == last) {
                    means.push_back(s.mean);
                }
            }
            double mu = 0.0;
            for (double v : means) {
                mu += v;
            }
            mu /= static_cast<double>(means.size());
            cs.between_chain_sd = detail::sd_of(means, mu);
        }
        d.spread.push_back(cs);
    }
    return d;
}

/// Mean over chains of the final-iteration trace mean for column j.
inline double final_trace_mean(const ImputationResult& r, int j)
{
    int last = 0;
    for (const auto& s : r.chain_stats) {
        last = std::max(last, s.iteration);
    }
    double sum = 0.0;
    int count = 0;
    for (const auto& s : r.chain_stats) {
        if (s.column == j && s.iteration == last) {
            sum += s.mean;
            ++count;
        }
    }
    if (count == 0) {
        throw SpecError("final_trace_mean: column " + std::to_string(j) + " was not imputed");
    }
    return sum / count;
}

inline void write_diagnostics_csv(std::ostream& out, const ChainDiagnostics& d, const std::vector<std::string>& names)
{
    out << "chain,iteration,column,mean,sd\n";
    for (const auto& s : d.trace) {
        out << s.chain + 1 << ',' << s.iteration << ',' << names[static_cast<std::size_t>(s.column)] << ','
            << format_double(s.mean) << ',' << format_double(s.sd) << '\n';
    }
}

inline void write_spread_csv(std::ostream& out, const ChainDiagnostics& d, const std::vector<std::string>& names)
{
    out << "column,between_chain_sd,defined\n";
    for (const auto& s : d.spread) {
        out << names[static_cast<std::size_t>(s.column)] << ','
            << (s.between_chain_sd ? format_double(*s.between_chain_sd) : std::string()) << ','
            << (s.between_chain_sd ? 1 : 0) << '\n';
    }
}

/// Writes <prefix>.imp<k>.csv for k = 1..m and returns the paths.
inline std::vector<std::string> write_completed(const std::string& prefix, const ImputationResult& r)
{
    std::vector<std::string> paths;
    for (std::size_t k = 0; k < r.completed.size(); ++k) {
        const std::string path = prefix + ".imp" + std::to_string(k + 1) + ".csv";
        std::ofstream f(path, std::ios::binary);
        if (!f) {
            throw std::runtime_error("cannot write " + path);
        }
        write_matrix_csv(f, r.completed[k], r.names);
        paths.push_back(path);
    }
    return paths;
}

} // namespace smlab
