#pragma once

// Structure detection on an observed mask: pairwise indicator dependence,
// sign of association, sequential signatures and an audit of whether a mask
// looks unstructured and independent of the observed data.

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "smlab/format.hpp"
#include "smlab/tabular.hpp"

namespace smlab {

enum class PairSign { positive, negative, none, undetermined };

inline const char* to_string(PairSign s)
{
    switch (s) {
    case PairSign::positive: return "positive";
    case PairSign::negative: return "negative";
    case PairSign::none: return "none";
    case PairSign::undetermined: return "undetermined";
    }
    return "?";
}

enum class PairFlag {
    ok,
    haldane,            ///< a zero cell; 0.5 added to every cell for the test
    degenerate_zero,    ///< odds ratio is exactly 0 (e.g. M_k = 1 - M_j)
    degenerate_inf,     ///< odds ratio is infinite (e.g. M_k = M_j)
    constant_column     ///< one indicator never varies
};

inline const char* to_string(PairFlag f)
{
    switch (f) {
    case PairFlag::ok: return "ok";
    case PairFlag::haldane: return "haldane";
    case PairFlag::degenerate_zero: return "degenerate_zero";
    case PairFlag::degenerate_inf: return "degenerate_inf";
    case PairFlag::constant_column: return "constant_column";
    }
    return "?";
}

struct PairStat {
    int j = 0;
    int k = 0;
    /// 2x2 counts: n[a][b] = rows with M_j = a and M_k = b.
    Index n[2][2] = {{0, 0}, {0, 0}};
    double odds_ratio = std::numeric_limits<double>::quiet_NaN();
    double chi2 = std::numeric_limits<double>::quiet_NaN();
    double p_value = std::numeric_limits<double>::quiet_NaN();
    PairSign sign = PairSign::undetermined;
    PairFlag flag = PairFlag::ok;
};

struct ConditionalFlag {
    int j = 0;
    int k = 0;
    std::string conditioning;  ///< description of the conditioning set
    bool independent = true;   ///< decision at the report's alpha
    double p_value = 1.0;
};

struct DependenceReport {
    int p = 0;
    double alpha = 0.01;
    std::vector<PairStat> pairs;  ///< j < k, row-major
    std::vector<ConditionalFlag> conditional_flags;

    /// Symmetric lookup; j != k.
    const PairStat& at(int j, int k) const
    {
        if (j == k || j < 0 || k < 0 || j >= p || k >= p) {
            throw SpecError("DependenceReport: invalid pair (" + std::to_string(j) + "," + std::to_string(k) + ")");
        }
        if (j > k) {
            std::swap(j, k);
        }
        // Offset of row j in the packed upper triangle.
        const int offset = j * p - j * (j + 1) / 2;
        return pairs[static_cast<std::size_t>(offset + (k - j - 1))];
    }

    PairSign sign(int j, int k) const { return at(j, k).sign; }
};

inline double chi2_sf(double x, double df)
{
    if (!(x > 0.0)) {
        return 1.0;
    }
    if (!std::isfinite(x)) {
        return 0.0;
    }
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

/// Pearson chi-square on a 2x2 table with Haldane-Anscombe handling of zeros.
inline PairStat pair_test(const MissMask& m, int j, int k, double alpha)
{
    PairStat s;
    s.j = j;
    s.k = k;
    for (Index i = 0; i < m.rows(); ++i) {
        ++s.n[m.missing(i, j) ? 1 : 0][m.missing(i, k) ? 1 : 0];
    }
    const auto rows0_j = s.n[0][0] + s.n[0][1];
    const auto rows1_j = s.n[1][0] + s.n[1][1];
    const auto rows0_k = s.n[0][0] + s.n[1][0];
    const auto rows1_k = s.n[0][1] + s.n[1][1];
    if (rows0_j == 0 || rows1_j == 0 || rows0_k == 0 || rows1_k == 0) {
        s.flag = PairFlag::constant_column;
        s.sign = PairSign::undetermined;
        return s;
    }
    double a = static_cast<double>(s.n[1][1]);
    double b = static_cast<double>(s.n[1][0]);
    double c = static_cast<double>(s.n[0][1]);
    double d = static_cast<double>(s.n[0][0]);
    const bool zero_cell = a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0;
    if (zero_cell) {
        if ((a == 0.0 || d == 0.0) && b > 0.0 && c > 0.0) {
            s.flag = PairFlag::degenerate_zero;
            s.odds_ratio = 0.0;
        } else if ((b == 0.0 || c == 0.0) && a > 0.0 && d > 0.0) {
            s.flag = PairFlag::degenerate_inf;
            s.odds_ratio = std::numeric_limits<double>::infinity();
        } else {
            s.flag = PairFlag::haldane;
        }
        a += 0.5;
        b += 0.5;
        c += 0.5;
        d += 0.5;
    }
    if (s.flag == PairFlag::ok || s.flag == PairFlag::haldane) {
        s.odds_ratio = (a * d) / (b * c);
    }
    const double total = a + b + c + d;
    const double diff = a * d - b * c;
    s.chi2 = total * diff * diff / ((a + b) * (c + d) * (a + c) * (b + d));
    s.p_value = chi2_sf(s.chi2, 1.0);
    if (s.p_value < alpha) {
        s.sign = diff > 0.0 ? PairSign::positive : PairSign::negative;
    } else {
        s.sign = PairSign::none;
    }
    return s;
}

inline DependenceReport pairwise_dependence(const MissMask& m, double alpha = 0.01)
{
    if (m.rows() < 2) {
        throw SpecError("pairwise_dependence: need at least 2 rows");
    }
    DependenceReport r;
    r.p = static_cast<int>(m.cols());
    r.alpha = alpha;
    for (int j = 0; j < r.p; ++j) {
        for (int k = j + 1; k < r.p; ++k) {
            auto s = pair_test(m, j, k, alpha);
            r.conditional_flags.push_back(
                {j, k, "none (marginal)", s.sign != PairSign::positive && s.sign != PairSign::negative,
                 std::isnan(s.p_value) ? 1.0 : s.p_value});
            r.pairs.push_back(s);
        }
    }
    return r;
}

struct SequentialSignature {
    double monotone_fraction = 1.0;
    bool forward_only = true;
};

/// Share of rows with suffix-shaped missingness under `ordering`, and whether
/// every significant pair is stronger in the forward direction:
/// P(M_later | M_earlier) >= P(M_earlier | M_later).
inline SequentialSignature sequential_signature(const MissMask& m, const std::vector<int>& ordering,
                                                double alpha = 0.01)
{
    detail::check_permutation(ordering, m.cols(), "sequential_signature ordering");
    SequentialSignature sig;
    if (m.rows() == 0) {
        return sig;
    }
    Index mono = 0;
    for (Index i = 0; i < m.rows(); ++i) {
        mono += row_is_monotone(m, i, ordering) ? 1 : 0;
    }
    sig.monotone_fraction = static_cast<double>(mono) / static_cast<double>(m.rows());
    if (m.rows() < 2) {
        return sig;
    }
    const int p = static_cast<int>(m.cols());
    for (int a = 0; a < p; ++a) {
        for (int b = a + 1; b < p; ++b) {
            const int early = ordering[a];
            const int late = ordering[b];
            const auto s = pair_test(m, early, late, alpha);
            if (s.sign != PairSign::positive && s.sign != PairSign::negative) {
                continue;
            }
            const double both = static_cast<double>(s.n[1][1]);
            const double early_missing = static_cast<double>(s.n[1][0] + s.n[1][1]);
            const double late_missing = static_cast<double>(s.n[0][1] + s.n[1][1]);
            const double lag = both / early_missing;
            const double lead = both / late_missing;
            if (lag < lead) {
                sig.forward_only = false;
            }
        }
    }
    return sig;
}

// ---------------------------------------------------------------------------
// Audit

enum class AuditVerdict { consistent_with_unstructured, structured_indicators, data_dependent };

inline const char* to_string(AuditVerdict v)
{
    switch (v) {
    case AuditVerdict::consistent_with_unstructured: return "consistent-with-unstructured";
    case AuditVerdict::structured_indicators: return "structured-indicators";
    case AuditVerdict::data_dependent: return "data-dependent";
    }
    return "?";
}

/// Welch test of observed X_c split by M_j.
struct DataAssociation {
    int mask_column = 0;
    int data_column = 0;
    double t = 0.0;
    double p_value = 1.0;
};

struct AuditReport {
    DependenceReport indicators;
    std::vector<DataAssociation> data_tests;
    AuditVerdict verdict = AuditVerdict::consistent_with_unstructured;
    double pair_threshold = 0.0;  ///< Bonferroni-adjusted alpha for indicator pairs
    double data_threshold = 0.0;  ///< Bonferroni-adjusted alpha for data tests
    std::vector<std::string> evidence;
};

namespace detail {

inline std::optional<DataAssociation> welch_test(const DataMatrix& x, int j, int c)
{
    double sum[2] = {0, 0}, sq[2] = {0, 0};
    Index cnt[2] = {0, 0};
    for (Index i = 0; i < x.rows(); ++i) {
        if (x.is_missing(i, c)) {
            continue;
        }
        const int g = x.is_missing(i, j) ? 1 : 0;
        const double v = x.at(i, c);
        sum[g] += v;
        sq[g] += v * v;
        ++cnt[g];
    }
    if (cnt[0] < 2 || cnt[1] < 2) {
        return std::nullopt;
    }
    double mean[2], var[2];
    for (int g = 0; g < 2; ++g) {
        mean[g] = sum[g] / static_cast<double>(cnt[g]);
        var[g] = std::max(0.0, (sq[g] - static_cast<double>(cnt[g]) * mean[g] * mean[g]) / (cnt[g] - 1.0));
    }
    const double se2 = var[0] / cnt[0] + var[1] / cnt[1];
    if (!(se2 > 0.0)) {
        return std::nullopt;
    }
    DataAssociation a;
    a.mask_column = j;
    a.data_column = c;
    a.t = (mean[1] - mean[0]) / std::sqrt(se2);
    const double num = se2 * se2;
    const double den = std::pow(var[0] / cnt[0], 2) / (cnt[0] - 1.0) + std::pow(var[1] / cnt[1], 2) / (cnt[1] - 1.0);
    const double df = den > 0.0 ? num / den : static_cast<double>(cnt[0] + cnt[1] - 2);
    a.p_value = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), std::abs(a.t)));
    return a;
}

/// Cochran-Mantel-Haenszel test of M_j vs M_k stratified by quartiles of a
/// fully observed data column. Returns the p-value.
inline double cmh_p_value(const MissMask& m, int j, int k, const DataMatrix& x, int c)
{
    std::vector<double> v;
    for (Index i = 0; i < x.rows(); ++i) {
        v.push_back(x.at(i, c));
    }
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double f) { return sorted[static_cast<std::size_t>(f * (sorted.size() - 1))]; };
    const double cuts[3] = {q(0.25), q(0.5), q(0.75)};
    double n[4][2][2] = {};
    for (Index i = 0; i < x.rows(); ++i) {
        int s = 0;
        while (s < 3 && v[static_cast<std::size_t>(i)] > cuts[s]) {
            ++s;
        }
        n[s][m.missing(i, j) ? 1 : 0][m.missing(i, k) ? 1 : 0] += 1.0;
    }
    double num = 0.0, var = 0.0;
    for (auto& t : n) {
        const double total = t[0][0] + t[0][1] + t[1][0] + t[1][1];
        if (total < 2.0) {
            continue;
        }
        const double r1 = t[1][0] + t[1][1], r0 = t[0][0] + t[0][1];
        const double c1 = t[0][1] + t[1][1], c0 = t[0][0] + t[1][0];
        num += t[1][1] - r1 * c1 / total;
        var += r1 * r0 * c1 * c0 / (total * total * (total - 1.0));
    }
    if (!(var > 0.0)) {
        return 1.0;
    }
    return chi2_sf(num * num / var, 1.0);
}

} // namespace detail

/// Advisory audit of a mask against the unstructured-MCAR hypothesis. Data
/// dependence takes precedence over indicator structure in the verdict, since
/// a shared data driver also induces indicator association. Both families
/// are Bonferroni-corrected at `alpha`.
inline AuditReport mcar_structure_audit(const DataMatrix& x, double alpha = 0.01)
{
    AuditReport r;
    const MissMask& m = x.mask();
    const int p = static_cast<int>(x.cols());
    r.indicators = pairwise_dependence(m, alpha);
    const std::size_t n_pairs = std::max<std::size_t>(r.indicators.pairs.size(), 1);
    r.pair_threshold = alpha / static_cast<double>(n_pairs);

    std::vector<int> complete_cols;
    for (int c = 0; c < p; ++c) {
        if (m.column_missing_count(c) == 0) {
            complete_cols.push_back(c);
        }
    }
    std::vector<ConditionalFlag> extra;
    for (const auto& pair : r.indicators.pairs) {
        if (pair.flag == PairFlag::constant_column) {
            continue;
        }
        for (int c : complete_cols) {
            if (c == pair.j || c == pair.k) {
                continue;
            }
            const double pv = detail::cmh_p_value(m, pair.j, pair.k, x, c);
            extra.push_back({pair.j, pair.k, "quartiles of " + x.names()[c], pv >= alpha, pv});
        }
    }
    r.indicators.conditional_flags.insert(r.indicators.conditional_flags.end(), extra.begin(), extra.end());

    for (int j = 0; j < p; ++j) {
        const Index miss = m.column_missing_count(j);
        if (miss == 0 || miss == m.rows()) {
            continue;
        }
        for (int c = 0; c < p; ++c) {
            if (c == j) {
                continue;
            }
            if (auto a = detail::welch_test(x, j, c)) {
                r.data_tests.push_back(*a);
            }
        }
    }
    r.data_threshold = alpha / static_cast<double>(std::max<std::size_t>(r.data_tests.size(), 1));

    bool data_dep = false;
    for (const auto& a : r.data_tests) {
        if (a.p_value < r.data_threshold) {
            data_dep = true;
            r.evidence.push_back("M_" + x.names()[a.mask_column] + " vs observed " + x.names()[a.data_column] +
                                 ": t=" + format_double(a.t) + " p=" + format_double(a.p_value));
        }
    }
    bool structured = false;
    for (const auto& s : r.indicators.pairs) {
        if (s.flag != PairFlag::constant_column && s.p_value < r.pair_threshold) {
            structured = true;
            r.evidence.push_back("M_" + x.names()[s.j] + " ~ M_" + x.names()[s.k] + ": " + to_string(s.sign) +
                                 " chi2=" + format_double(s.chi2) + " p=" + format_double(s.p_value));
        }
    }
    r.verdict = data_dep     ? AuditVerdict::data_dependent
                : structured ? AuditVerdict::structured_indicators
                             : AuditVerdict::consistent_with_unstructured;
    return r;
}

// ---------------------------------------------------------------------------
// Serialization

/// CSV: pair,or,chi2,p,sign,flag (one row per unordered pair).
inline void write_report_csv(std::ostream& out, const DependenceReport& r, const std::vector<std::string>& names)
{
    out << "pair,or,chi2,p,sign,flag\n";
    for (const auto& s : r.pairs) {
        out << names[s.j] << ':' << names[s.k] << ',' << format_double(s.odds_ratio) << ',' << format_double(s.chi2)
            << ',' << format_double(s.p_value) << ',' << to_string(s.sign) << ',' << to_string(s.flag) << '\n';
    }
}

inline std::string report_summary(const DependenceReport& r, const std::vector<std::string>& names)
{
    std::ostringstream os;
    int significant = 0;
    for (const auto& s : r.pairs) {
        significant += (s.sign == PairSign::positive || s.sign == PairSign::negative) ? 1 : 0;
    }
    os << "indicator pairs: " << r.pairs.size() << ", significant at alpha=" << format_double(r.alpha) << ": "
       << significant << '\n';
    for (const auto& s : r.pairs) {
        if (s.sign == PairSign::positive || s.sign == PairSign::negative || s.flag != PairFlag::ok) {
            os << "  M_" << names[s.j] << " ~ M_" << names[s.k] << ": " << to_string(s.sign)
               << " (or=" << format_double(s.odds_ratio) << ", p=" << format_double(s.p_value) << ", "
               << to_string(s.flag) << ")\n";
        }
    }
    return os.str();
}

} // namespace smlab
