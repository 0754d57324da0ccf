#pragma once

// Canonical mechanism specs: the ten simulation structures (calibrated to a
// target overall missing rate), one fixture per taxonomy cell, and the
// mechanisms of the inference simulations.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "smlab/mechanism.hpp"

namespace smlab {

struct BuiltinParams {
    int p = 10;
    double target_rate = 0.45;
};

/// Parameters chosen by calibration, reported alongside the spec.
struct CalibratedBuiltin {
    MechanismSpec spec;
    double parameter = 0.0;      ///< the calibrated quantity (rate, hazard or block probability)
    double expected_rate = 0.0;  ///< analytic mean cell missingness
};

inline const std::vector<std::string>& builtin_names()
{
    static const std::vector<std::string> names{"complete",      "mcar_u_1",    "mcar_u_2",      "mcar_u_3",
                                                "mcar_u_4",      "mcar_ws_block", "mcar_ws_seq", "mcar_ss_block",
                                                "mcar_ss_seq",   "unit_block"};
    return names;
}

/// Fixed shape constants of the structured builtins. Only one parameter per
/// structure is calibrated; these set how concentrated the structure is.
namespace builtin_shape {
inline constexpr double ws_block_prob = 0.5;   ///< P(B_i = 1)
inline constexpr double ws_block_low = 0.15;   ///< P(missing | B_i = 0)
inline constexpr double ws_seq_stay = 0.9;     ///< P(M_j = 1 | M_{j-1} = 1)
} // namespace builtin_shape

/// Bisection for a monotone increasing f on [lo, hi].
inline double bisect_increasing(const std::function<double(double)>& f, double lo, double hi, double target,
                                double tol = 1e-12)
{
    if (target < f(lo) - 1e-15 || target > f(hi) + 1e-15) {
        throw SpecError("calibration: target rate " + std::to_string(target) + " outside the attainable range [" +
                        std::to_string(f(lo)) + ", " + std::to_string(f(hi)) + "]");
    }
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

namespace detail {

inline double ws_block_rate(int p, double high)
{
    using namespace builtin_shape;
    return (p - 1.0) / p * (ws_block_prob * high + (1.0 - ws_block_prob) * ws_block_low);
}

inline double ws_seq_rate(int p, double hazard)
{
    double marginal = 0.0;  // column 1 always observed
    double total = 0.0;
    for (int j = 1; j < p; ++j) {
        marginal = marginal * builtin_shape::ws_seq_stay + (1.0 - marginal) * hazard;
        total += marginal;
    }
    return total / p;
}

inline double ss_seq_rate(int p, double hazard)
{
    double total = 0.0;
    for (int j = 1; j < p; ++j) {
        total += 1.0 - std::pow(1.0 - hazard, j);
    }
    return total / p;
}

} // namespace detail

/// The named simulation structure, calibrated so the expected overall cell
/// missingness equals params.target_rate (except `complete`).
inline CalibratedBuiltin builtin_structure_calibrated(const std::string& name, const BuiltinParams& params = {})
{
    const int p = params.p;
    const double target = params.target_rate;
    if (p < 2) {
        throw SpecError("builtin_structures: need at least 2 columns");
    }
    if (!(target >= 0.0 && target < 1.0)) {
        throw SpecError("builtin_structures: target rate must be in [0, 1)");
    }
    CalibratedBuiltin out{MechanismSpec::empty(DataMatrix::default_names(p)), 0.0, 0.0};
    auto& spec = out.spec;
    auto set_rates = [&](const std::vector<double>& rates) {
        double total = 0.0;
        for (int j = 0; j < p; ++j) {
            if (rates[j] > 1.0) {
                throw SpecError("builtin_structures: target rate too high for " + name);
            }
            if (rates[j] > 0.0) {
                spec.rules[j].components.push_back(bernoulli(rates[j]));
            }
            total += rates[j];
        }
        out.expected_rate = total / p;
    };
    const double scale = target / 0.45;

    if (name == "complete") {
        out.expected_rate = 0.0;
    } else if (name == "mcar_u_1") {
        set_rates(std::vector<double>(p, target));
        out.parameter = target;
    } else if (name == "mcar_u_2") {
        // 0, 10%, 20%, ... 90% for p = 10; evenly spaced in general.
        std::vector<double> r(p);
        for (int j = 0; j < p; ++j) {
            r[j] = scale * 0.9 * j / (p - 1);
        }
        set_rates(r);
        out.parameter = scale;
    } else if (name == "mcar_u_3") {
        // First half complete, second half at 90%.
        std::vector<double> r(p, 0.0);
        const int half = p / 2;
        for (int j = half; j < p; ++j) {
            r[j] = target * p / (p - half);
        }
        set_rates(r);
        out.parameter = r.back();
    } else if (name == "mcar_u_4") {
        std::vector<double> r(p, target * p / (p - 1.0));
        r[0] = 0.0;
        set_rates(r);
        out.parameter = r.back();
    } else if (name == "mcar_ws_block") {
        const double high = bisect_increasing([&](double h) { return detail::ws_block_rate(p, h); },
                                              builtin_shape::ws_block_low, 1.0, target);
        spec.blocks.push_back({builtin_shape::ws_block_prob});
        for (int j = 1; j < p; ++j) {
            spec.rules[j].components.push_back(table_on(PredictorRef::block(0), builtin_shape::ws_block_low, high));
        }
        out.parameter = high;
        out.expected_rate = detail::ws_block_rate(p, high);
    } else if (name == "mcar_ws_seq") {
        const double h = bisect_increasing([&](double x) { return detail::ws_seq_rate(p, x); }, 0.0, 1.0, target);
        spec.rules[1].components.push_back(bernoulli(h));
        for (int j = 2; j < p; ++j) {
            spec.rules[j].components.push_back(table_on(PredictorRef::indicator(j - 1), h, builtin_shape::ws_seq_stay));
        }
        out.parameter = h;
        out.expected_rate = detail::ws_seq_rate(p, h);
    } else if (name == "mcar_ss_block") {
        const double prob = bisect_increasing([&](double x) { return (p - 1.0) / p * x; }, 0.0, 1.0, target);
        spec.blocks.push_back({prob});
        for (int j = 1; j < p; ++j) {
            spec.rules[j].components.push_back(force_missing_when({block_on(0)}));
        }
        out.parameter = prob;
        out.expected_rate = (p - 1.0) / p * prob;
    } else if (name == "mcar_ss_seq") {
        // Monotone dropout after the first column with constant hazard.
        const double h = bisect_increasing([&](double x) { return detail::ss_seq_rate(p, x); }, 0.0, 1.0, target);
        spec.rules[1].components.push_back(bernoulli(h));
        for (int j = 2; j < p; ++j) {
            spec.rules[j].components.push_back(force_missing_when({is_missing(j - 1)}));
            spec.rules[j].components.push_back(bernoulli(h));
        }
        out.parameter = h;
        out.expected_rate = detail::ss_seq_rate(p, h);
    } else if (name == "unit_block") {
        spec.blocks.push_back({target});
        for (int j = 0; j < p; ++j) {
            spec.rules[j].components.push_back(force_missing_when({block_on(0)}));
        }
        out.parameter = target;
        out.expected_rate = target;
    } else {
        throw SpecError("builtin_structures: unknown structure '" + name + "'");
    }
    validate(spec);
    spec.declared_label = classify(spec);
    return out;
}

inline MechanismSpec builtin_structures(const std::string& name, const BuiltinParams& params = {})
{
    return builtin_structure_calibrated(name, params).spec;
}

/// Structures with dependence among indicators (weak or strong), excluding
/// whole-row deletion.
inline bool is_structured_builtin(const std::string& name)
{
    return name == "mcar_ws_block" || name == "mcar_ws_seq" || name == "mcar_ss_block" || name == "mcar_ss_seq";
}

// ---------------------------------------------------------------------------
// Taxonomy fixtures

struct NamedSpec {
    std::string name;
    MechanismSpec spec;
};

namespace detail {

inline TaxonomyLabel make_label(DataDependence d, Structure s, Shape sh, Determinism det,
                                std::optional<Sign> sign = std::nullopt)
{
    return TaxonomyLabel{d, s, sh, det, sign};
}

inline Condition data_cond(int j, CompareOp op, double v)
{
    return {PredictorRef::data(j), op, v};
}

} // namespace detail

/// One three-variable fixture per taxonomy cell plus the subject-effect
/// variant of MCAR-U, each carrying its declared label.
inline std::vector<NamedSpec> canonical_taxonomy_specs()
{
    using D = DataDependence;
    using S = Structure;
    using Sh = Shape;
    using Det = Determinism;
    using detail::data_cond;
    using detail::make_label;
    const auto x = PredictorRef::data;
    std::vector<NamedSpec> out;
    auto base = [] { return MechanismSpec::empty({"X1", "X2", "X3"}); };

    {
        auto s = base();
        for (int j = 0; j < 3; ++j) {
            s.rules[j].components.push_back(bernoulli(0.3));
        }
        s.declared_label = make_label(D::MCAR, S::unstructured, Sh::none, Det::probabilistic);
        out.push_back({"MCAR-U", s});
    }
    {
        auto s = base();
        s.blocks.push_back({0.4});
        for (int j = 0; j < 3; ++j) {
            s.rules[j].components.push_back(table_on(PredictorRef::block(0), 0.1, 0.6));
        }
        s.declared_label = make_label(D::MCAR, S::weak, Sh::block, Det::probabilistic, Sign::positive);
        out.push_back({"MCAR-WS", s});
    }
    {
        auto s = base();
        s.rules[0].components.push_back(bernoulli(0.2));
        for (int j = 1; j < 3; ++j) {
            s.rules[j].components.push_back(force_missing_when({is_missing(j - 1)}));
            s.rules[j].components.push_back(bernoulli(0.1));
        }
        s.declared_label = make_label(D::MCAR, S::strong, Sh::sequential, Det::probabilistic, Sign::positive);
        out.push_back({"MCAR-SS", s});
    }
    {
        auto s = base();
        s.rules[1].components.push_back(logistic(0.0, {{x(0), 1.5}}));
        s.rules[2].components.push_back(logistic(-0.5, {{x(0), -1.0}}));
        s.declared_label = make_label(D::MAR, S::unstructured, Sh::none, Det::probabilistic);
        out.push_back({"MAR-UP", s});
    }
    {
        auto s = base();
        s.rules[1].components.push_back(force_missing_when({data_cond(0, CompareOp::gt, 1.0)}));
        s.rules[2].components.push_back(force_missing_when({data_cond(0, CompareOp::lt, -1.0)}));
        s.declared_label = make_label(D::MAR, S::unstructured, Sh::none, Det::deterministic);
        out.push_back({"MAR-UD", s});
    }
    {
        // M2 depends on the temporally later M3: block structure.
        auto s = base();
        s.simulation_order = {0, 2, 1};
        s.rules[2].components.push_back(logistic(-0.5, {{x(0), 1.0}}));
        s.rules[1].components.push_back(logistic(-1.0, {{x(0), 1.0}, {PredictorRef::indicator(2), 1.5}}));
        s.declared_label = make_label(D::MAR, S::weak, Sh::block, Det::probabilistic, Sign::positive);
        out.push_back({"MAR-WS", s});
    }
    {
        auto s = base();
        s.rules[1].components.push_back(force_missing_when({data_cond(0, CompareOp::gt, 0.5)}));
        s.rules[2].components.push_back(force_missing_when({is_missing(1)}));
        s.rules[2].components.push_back(force_missing_when({data_cond(0, CompareOp::lt, -1.0)}));
        s.declared_label = make_label(D::MAR, S::strong, Sh::sequential, Det::deterministic, Sign::positive);
        out.push_back({"MAR-SS", s});
    }
    {
        auto s = base();
        s.rules[1].components.push_back(logistic(0.0, {{x(1), 1.0}}));
        s.rules[2].components.push_back(logistic(0.0, {{x(2), -1.0}}));
        s.declared_label = make_label(D::MNAR, S::unstructured, Sh::none, Det::probabilistic);
        out.push_back({"MNAR-UP", s});
    }
    {
        auto s = base();
        s.rules[1].components.push_back(force_missing_when({data_cond(1, CompareOp::lt, -1.0)}));
        s.rules[2].components.push_back(force_missing_when({data_cond(2, CompareOp::gt, 1.5)}));
        s.declared_label = make_label(D::MNAR, S::unstructured, Sh::none, Det::deterministic);
        out.push_back({"MNAR-UD", s});
    }
    {
        auto s = base();
        s.blocks.push_back({0.3});
        s.rules[1].components.push_back(logistic(-1.0, {{x(1), 1.0}, {PredictorRef::block(0), 2.0}}));
        s.rules[2].components.push_back(logistic(-1.0, {{x(2), 1.0}, {PredictorRef::block(0), 2.0}}));
        s.declared_label = make_label(D::MNAR, S::weak, Sh::block, Det::probabilistic, Sign::positive);
        out.push_back({"MNAR-WS", s});
    }
    {
        // Observing X2 forces X3 missing when X3 is large: negative strong structure.
        auto s = base();
        s.rules[1].components.push_back(force_missing_when({data_cond(1, CompareOp::lt, -0.5)}));
        s.rules[2].components.push_back(force_missing_when({is_observed(1), data_cond(2, CompareOp::gt, 1.0)}));
        s.declared_label = make_label(D::MNAR, S::strong, Sh::sequential, Det::deterministic, Sign::negative);
        out.push_back({"MNAR-SS", s});
    }
    {
        auto s = base();
        s.subject_variance = 1.0;
        for (int j = 0; j < 3; ++j) {
            s.rules[j].components.push_back(logistic(-0.2, {{PredictorRef::subject(), 1.0}}));
        }
        s.declared_label = make_label(D::MCAR, S::unstructured, Sh::none, Det::probabilistic);
        out.push_back({"MCAR-U+subject", s});
    }
    for (const auto& ns : out) {
        validate(ns.spec);
    }
    return out;
}

/// Logical missingness fixture: a PSA value cannot exist for female subjects
/// (sex == 0); for males, testing is less likely at older ages.
inline MechanismSpec psa_logical_example()
{
    auto s = MechanismSpec::empty({"sex", "age", "psa"});
    s.rules[2].components.push_back(logical_when({{PredictorRef::data(0), CompareOp::eq, 0.0}}));
    s.rules[2].components.push_back(logistic(-2.0, {{PredictorRef::data(1), 0.05}}));
    return s;
}

/// Genomic testing fixture: testing is only offered below an age cut-off, and
/// a missing biopsy precludes the genomic panel.
inline MechanismSpec genomic_testing_example()
{
    auto s = MechanismSpec::empty({"age", "biopsy", "panel"});
    s.rules[1].components.push_back(force_missing_when({{PredictorRef::data(0), CompareOp::ge, 75.0}}));
    s.rules[1].components.push_back(bernoulli(0.1));
    s.rules[2].components.push_back(force_missing_when({is_missing(1)}));
    s.rules[2].components.push_back(bernoulli(0.2));
    return s;
}

// ---------------------------------------------------------------------------
// Inference simulation mechanisms

/// Columns (X1, X2, X3): M2 logistic in x1 with slope 2; M3 missing with
/// probability q when X2 is observed and never when X2 is missing.
inline MechanismSpec sim2_spec(double q)
{
    auto s = MechanismSpec::empty({"X1", "X2", "X3"});
    s.rules[1].components.push_back(logistic(0.0, {{PredictorRef::data(0), 2.0}}));
    s.rules[2].components.push_back(table_on(PredictorRef::indicator(1), q, 0.0));
    return s;
}

/// Columns (Z, X1, X2) with Z latent: M1 logistic in z with slope 2; M2
/// missing with probability 1/2 when X1 is missing and q when observed.
inline MechanismSpec sim3_spec(double q)
{
    auto s = MechanismSpec::empty({"Z", "X1", "X2"});
    s.latent_columns = {0};
    s.rules[1].components.push_back(logistic(0.0, {{PredictorRef::data(0), 2.0}}));
    s.rules[2].components.push_back(table_on(PredictorRef::indicator(1), q, 0.5));
    return s;
}

} // namespace smlab
