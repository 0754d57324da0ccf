#pragma once

// Declarative missingness mechanisms. Each column owns a rule made of one or
// more components; the mask is drawn column by column in simulation order, so
// every indicator is sampled conditional only on indicators drawn before it.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "smlab/errors.hpp"
#include "smlab/random.hpp"
#include "smlab/tabular.hpp"

namespace smlab {

/// A quantity a rule can read for the current row.
struct PredictorRef {
    enum class Kind { data, indicator, subject_effect, block, constant };

    Kind kind = Kind::constant;
    int index = 0;       ///< column (data/indicator) or block latent id
    double scale = 1.0;  ///< affine transform: scale * raw + shift
    double shift = 0.0;

    static PredictorRef data(int j) { return {Kind::data, j}; }
    static PredictorRef indicator(int j) { return {Kind::indicator, j}; }
    static PredictorRef subject() { return {Kind::subject_effect, 0}; }
    static PredictorRef block(int b) { return {Kind::block, b}; }
    static PredictorRef constant() { return {Kind::constant, 0}; }

    bool touches_mask() const { return kind == Kind::indicator || kind == Kind::block; }

    friend bool operator==(const PredictorRef&, const PredictorRef&) = default;
};

enum class CompareOp { lt, le, gt, ge, eq, ne };

struct Condition {
    PredictorRef ref;
    CompareOp op = CompareOp::eq;
    double value = 0.0;
    friend bool operator==(const Condition&, const Condition&) = default;
};

/// Conjunction of conditions; empty means "always".
using Predicate = std::vector<Condition>;

struct LogisticForm {
    double intercept = 0.0;
    std::vector<std::pair<PredictorRef, double>> terms;
    friend bool operator==(const LogisticForm&, const LogisticForm&) = default;
};

/// Conditional probability table keyed by parent bits. Entry index is
/// sum(parent_k << k). With no parents it is a plain Bernoulli.
struct TableForm {
    std::vector<PredictorRef> parents;
    std::vector<double> probs;
    friend bool operator==(const TableForm&, const TableForm&) = default;
};

/// When `when` holds, the indicator is forced to missing (or observed).
struct DeterministicForm {
    Predicate when;
    bool forced_missing = true;
    friend bool operator==(const DeterministicForm&, const DeterministicForm&) = default;
};

/// Value cannot exist when `when` holds; forced missing and never imputed.
struct LogicalForm {
    Predicate when;
    friend bool operator==(const LogicalForm&, const LogicalForm&) = default;
};

using Form = std::variant<LogisticForm, TableForm, DeterministicForm, LogicalForm>;

/// One mechanism component, active only on rows satisfying `scope` (the
/// subject subset A; empty = every row).
struct Component {
    Form form;
    Predicate scope;
    friend bool operator==(const Component&, const Component&) = default;
};

/// Per-column rule. Components combine as a union: any forced-missing
/// component wins, then any forced-observed one, otherwise the cell is missing
/// if any probabilistic component fires (independent draws).
struct MechanismRule {
    int target = 0;
    std::vector<Component> components;
    friend bool operator==(const MechanismRule&, const MechanismRule&) = default;
};

/// Per-row latent indicator B_i ~ Bernoulli(prob) shared by block members.
struct BlockLatent {
    double prob = 0.5;
    friend bool operator==(const BlockLatent&, const BlockLatent&) = default;
};

enum class DataDependence { MCAR, MAR, MNAR };
enum class Structure { unstructured, weak, strong };
enum class Shape { none, block, sequential };
enum class Determinism { probabilistic, deterministic };
enum class Sign { positive, negative, mixed };

struct TaxonomyLabel {
    DataDependence data_dependence = DataDependence::MCAR;
    Structure structure = Structure::unstructured;
    Shape shape = Shape::none;
    Determinism determinism = Determinism::probabilistic;
    std::optional<Sign> sign;

    friend bool operator==(const TaxonomyLabel&, const TaxonomyLabel&) = default;

    /// Cell name, e.g. "MCAR-U", "MAR-UD", "MNAR-SS".
    std::string cell() const
    {
        std::string s = data_dependence == DataDependence::MCAR  ? "MCAR"
                        : data_dependence == DataDependence::MAR ? "MAR"
                                                                 : "MNAR";
        switch (structure) {
        case Structure::unstructured:
            if (data_dependence == DataDependence::MCAR) {
                return s + "-U";
            }
            return s + (determinism == Determinism::deterministic ? "-UD" : "-UP");
        case Structure::weak: return s + "-WS";
        case Structure::strong: return s + "-SS";
        }
        return s;
    }
};

inline const char* to_string(DataDependence d)
{
    switch (d) {
    case DataDependence::MCAR: return "MCAR";
    case DataDependence::MAR: return "MAR";
    case DataDependence::MNAR: return "MNAR";
    }
    return "?";
}
inline const char* to_string(Structure s)
{
    switch (s) {
    case Structure::unstructured: return "unstructured";
    case Structure::weak: return "weak";
    case Structure::strong: return "strong";
    }
    return "?";
}
inline const char* to_string(Shape s)
{
    switch (s) {
    case Shape::none: return "none";
    case Shape::block: return "block";
    case Shape::sequential: return "sequential";
    }
    return "?";
}
inline const char* to_string(Determinism d)
{
    return d == Determinism::deterministic ? "deterministic" : "probabilistic";
}
inline const char* to_string(Sign s)
{
    switch (s) {
    case Sign::positive: return "positive";
    case Sign::negative: return "negative";
    case Sign::mixed: return "mixed";
    }
    return "?";
}

inline std::string describe(const TaxonomyLabel& l)
{
    std::string out = l.cell() + " (" + to_string(l.data_dependence) + ", " + to_string(l.structure) + ", " +
                      to_string(l.shape) + ", " + to_string(l.determinism);
    if (l.sign) {
        out += std::string(", ") + to_string(*l.sign);
    }
    return out + ")";
}

struct MechanismSpec {
    std::vector<std::string> names;
    std::vector<MechanismRule> rules;        ///< rules[j].target == j
    std::vector<int> simulation_order;       ///< acyclic order for sampling
    std::vector<int> temporal_order;         ///< declared variable order
    std::optional<double> subject_variance;  ///< tau^2 of S_i ~ N(0, tau^2)
    std::vector<BlockLatent> blocks;
    std::vector<int> latent_columns;         ///< data columns never available to the analyst
    std::optional<TaxonomyLabel> declared_label;

    int columns() const { return static_cast<int>(names.size()); }
    bool is_latent(int j) const
    {
        return std::find(latent_columns.begin(), latent_columns.end(), j) != latent_columns.end();
    }

    friend bool operator==(const MechanismSpec&, const MechanismSpec&) = default;

    /// Spec with p columns, no rules (complete data) and storage orders.
    static MechanismSpec empty(std::vector<std::string> names)
    {
        MechanismSpec s;
        const int p = static_cast<int>(names.size());
        s.names = std::move(names);
        for (int j = 0; j < p; ++j) {
            s.rules.push_back({j, {}});
        }
        s.simulation_order = detail::identity_order(p);
        s.temporal_order = detail::identity_order(p);
        return s;
    }
};

// ---------------------------------------------------------------------------
// Helpers over components

namespace detail {

template <class F>
void for_each_ref(const Component& c, F&& f)
{
    for (const auto& cond : c.scope) {
        f(cond.ref, false);
    }
    std::visit(
        [&](const auto& form) {
            using T = std::decay_t<decltype(form)>;
            if constexpr (std::is_same_v<T, LogisticForm>) {
                for (const auto& [ref, coef] : form.terms) {
                    if (coef != 0.0) {
                        f(ref, true);
                    }
                }
            } else if constexpr (std::is_same_v<T, TableForm>) {
                for (const auto& ref : form.parents) {
                    f(ref, true);
                }
            } else {
                for (const auto& cond : form.when) {
                    f(cond.ref, true);
                }
            }
        },
        c.form);
}

inline bool compare(double lhs, CompareOp op, double rhs)
{
    switch (op) {
    case CompareOp::lt: return lhs < rhs;
    case CompareOp::le: return lhs <= rhs;
    case CompareOp::gt: return lhs > rhs;
    case CompareOp::ge: return lhs >= rhs;
    case CompareOp::eq: return lhs == rhs;
    case CompareOp::ne: return lhs != rhs;
    }
    return false;
}

/// Values visible to rules while simulating one row.
struct RowContext {
    const MatrixXd* x = nullptr;
    Index row = 0;
    const std::vector<std::uint8_t>* m = nullptr;
    const std::vector<std::uint8_t>* b = nullptr;
    double s = 0.0;

    double value(const PredictorRef& r) const
    {
        double raw = 0.0;
        switch (r.kind) {
        case PredictorRef::Kind::data: raw = (*x)(row, r.index); break;
        case PredictorRef::Kind::indicator: raw = (*m)[static_cast<std::size_t>(r.index)]; break;
        case PredictorRef::Kind::block: raw = (*b)[static_cast<std::size_t>(r.index)]; break;
        case PredictorRef::Kind::subject_effect: raw = s; break;
        case PredictorRef::Kind::constant: raw = 1.0; break;
        }
        return r.scale * raw + r.shift;
    }

    bool holds(const Predicate& p) const
    {
        return std::all_of(p.begin(), p.end(),
                           [&](const Condition& c) { return compare(value(c.ref), c.op, c.value); });
    }
};

/// Whether the predicate (conjunction) requires the indicator/latent to be 1
/// (+1), 0 (-1), or neither (0).
inline int required_bit(const Predicate& when, const PredictorRef& ref)
{
    for (const auto& c : when) {
        if (c.ref.kind != ref.kind || c.ref.index != ref.index) {
            continue;
        }
        const bool at1 = compare(c.ref.scale * 1.0 + c.ref.shift, c.op, c.value);
        const bool at0 = compare(c.ref.scale * 0.0 + c.ref.shift, c.op, c.value);
        if (at1 && !at0) {
            return 1;
        }
        if (at0 && !at1) {
            return -1;
        }
    }
    return 0;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Validation

/// Throws SpecError describing the first violated invariant.
inline void validate(const MechanismSpec& spec)
{
    const int p = spec.columns();
    if (p == 0) {
        throw SpecError("spec: no columns");
    }
    for (const auto& nm : spec.names) {
        if (nm.empty() || nm.find_first_of(" \t,\n") != std::string::npos) {
            throw SpecError("spec: invalid column name '" + nm + "'");
        }
    }
    if (static_cast<int>(spec.rules.size()) != p) {
        throw SpecError("spec: expected one rule per column (" + std::to_string(p) + "), got " +
                        std::to_string(spec.rules.size()));
    }
    detail::check_permutation(spec.simulation_order, p, "spec simulation_order");
    detail::check_permutation(spec.temporal_order, p, "spec temporal_order");
    if (spec.subject_variance && !(*spec.subject_variance >= 0.0 && std::isfinite(*spec.subject_variance))) {
        throw SpecError("spec: subject effect variance must be finite and >= 0");
    }
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const double pr = spec.blocks[b].prob;
        if (!(pr >= 0.0 && pr <= 1.0)) {
            throw SpecError("spec: block " + std::to_string(b) + " probability outside [0,1]");
        }
    }
    for (int j : spec.latent_columns) {
        if (j < 0 || j >= p) {
            throw SpecError("spec: latent column " + std::to_string(j) + " out of range");
        }
    }

    std::vector<int> position(static_cast<std::size_t>(p));
    for (int k = 0; k < p; ++k) {
        position[static_cast<std::size_t>(spec.simulation_order[k])] = k;
    }

    for (int j = 0; j < p; ++j) {
        const auto& rule = spec.rules[static_cast<std::size_t>(j)];
        const std::string where = "spec rule for column " + std::to_string(j) + " (" + spec.names[j] + ")";
        if (rule.target != j) {
            throw SpecError(where + ": target is " + std::to_string(rule.target));
        }
        for (const auto& comp : rule.components) {
            detail::for_each_ref(comp, [&](const PredictorRef& r, bool) {
                if (!std::isfinite(r.scale) || !std::isfinite(r.shift)) {
                    throw SpecError(where + ": non-finite affine transform");
                }
                switch (r.kind) {
                case PredictorRef::Kind::data:
                    if (r.index < 0 || r.index >= p) {
                        throw SpecError(where + ": data column " + std::to_string(r.index) + " out of range");
                    }
                    break;
                case PredictorRef::Kind::indicator:
                    if (r.index < 0 || r.index >= p) {
                        throw SpecError(where + ": indicator " + std::to_string(r.index) + " out of range");
                    }
                    if (r.index == j) {
                        throw SpecError(where + ": rule references its own indicator");
                    }
                    if (position[static_cast<std::size_t>(r.index)] > position[static_cast<std::size_t>(j)]) {
                        throw SpecError(where + ": references indicator of column " + std::to_string(r.index) +
                                        " which is simulated later");
                    }
                    break;
                case PredictorRef::Kind::block:
                    if (r.index < 0 || r.index >= static_cast<int>(spec.blocks.size())) {
                        throw SpecError(where + ": block latent " + std::to_string(r.index) + " not declared");
                    }
                    break;
                case PredictorRef::Kind::subject_effect:
                    if (!spec.subject_variance) {
                        throw SpecError(where + ": references a subject effect but none is declared");
                    }
                    break;
                case PredictorRef::Kind::constant: break;
                }
            });
            std::visit(
                [&](const auto& form) {
                    using T = std::decay_t<decltype(form)>;
                    if constexpr (std::is_same_v<T, LogisticForm>) {
                        if (!std::isfinite(form.intercept)) {
                            throw SpecError(where + ": non-finite logistic intercept");
                        }
                        for (const auto& [ref, coef] : form.terms) {
                            if (!std::isfinite(coef)) {
                                throw SpecError(where + ": non-finite logistic coefficient");
                            }
                        }
                    } else if constexpr (std::is_same_v<T, TableForm>) {
                        if (form.parents.size() > 16) {
                            throw SpecError(where + ": too many table parents");
                        }
                        const std::size_t expected = std::size_t{1} << form.parents.size();
                        if (form.probs.size() != expected) {
                            throw SpecError(where + ": table needs " + std::to_string(expected) + " entries, got " +
                                            std::to_string(form.probs.size()));
                        }
                        for (double pr : form.probs) {
                            if (!(pr >= 0.0 && pr <= 1.0)) {
                                throw SpecError(where + ": table probability outside [0,1]");
                            }
                        }
                        for (const auto& ref : form.parents) {
                            if (!ref.touches_mask() || ref.scale != 1.0 || ref.shift != 0.0) {
                                throw SpecError(where + ": table parents must be plain indicators or block latents");
                            }
                        }
                    } else if constexpr (std::is_same_v<T, LogicalForm>) {
                        for (const auto& c : form.when) {
                            if (c.ref.kind != PredictorRef::Kind::data) {
                                throw SpecError(where + ": logical missingness may only test data columns");
                            }
                        }
                    }
                },
                comp.form);
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation

namespace detail {

struct CellDraw {
    bool missing = false;
    bool logical = false;
};

inline double logistic_probability(const LogisticForm& form, const RowContext& ctx, const std::string& col_name)
{
    double eta = form.intercept;
    for (const auto& [ref, coef] : form.terms) {
        eta += coef * ctx.value(ref);
    }
    if (!std::isfinite(eta)) {
        throw EvaluationError("non-finite linear predictor for column " + col_name + " at row " +
                              std::to_string(ctx.row));
    }
    return 1.0 / (1.0 + std::exp(-eta));
}

/// Evaluates one cell. Always consumes exactly one uniform per probabilistic
/// component so the random stream does not depend on which branch fires.
inline CellDraw draw_cell(const MechanismRule& rule, const RowContext& ctx, Rng& rng, const std::string& col_name)
{
    bool forced_missing = false;
    bool forced_observed = false;
    bool logical = false;
    bool fired = false;
    for (const auto& comp : rule.components) {
        const bool active = ctx.holds(comp.scope);
        std::visit(
            [&](const auto& form) {
                using T = std::decay_t<decltype(form)>;
                if constexpr (std::is_same_v<T, LogisticForm>) {
                    const double u = uniform01(rng);
                    if (!active) {
                        return;
                    }
                    fired = fired || u < logistic_probability(form, ctx, col_name);
                } else if constexpr (std::is_same_v<T, TableForm>) {
                    const double u = uniform01(rng);
                    if (!active) {
                        return;
                    }
                    std::size_t idx = 0;
                    for (std::size_t k = 0; k < form.parents.size(); ++k) {
                        if (ctx.value(form.parents[k]) != 0.0) {
                            idx |= std::size_t{1} << k;
                        }
                    }
                    fired = fired || u < form.probs[idx];
                } else if constexpr (std::is_same_v<T, DeterministicForm>) {
                    if (active && ctx.holds(form.when)) {
                        (form.forced_missing ? forced_missing : forced_observed) = true;
                    }
                } else {
                    if (active && ctx.holds(form.when)) {
                        forced_missing = true;
                        logical = true;
                    }
                }
            },
            comp.form);
    }
    if (forced_missing) {
        return {true, logical};
    }
    if (forced_observed) {
        return {false, false};
    }
    return {fired, false};
}

} // namespace detail

/// Latent per-row draws used during simulation (exposed for diagnostics).
struct RowLatents {
    VectorXd subject;  ///< S_i (zeros when no subject effect)
    BitMatrix blocks;  ///< n x (#blocks)
};

struct SimulatedMask {
    MissMask mask;
    RowLatents latents;
};

/// Draws M given complete data x. Rows are processed in order from a single
/// stream seeded with `seed`, so the result is a pure function of its inputs.
inline SimulatedMask simulate_mask_detailed(const MechanismSpec& spec, const MatrixXd& x, std::uint64_t seed)
{
    validate(spec);
    const int p = spec.columns();
    if (x.cols() != p) {
        throw SpecError("simulate_mask: spec has " + std::to_string(p) + " columns, data has " +
                        std::to_string(x.cols()));
    }
    if (!x.allFinite()) {
        throw SpecError("simulate_mask: data must be complete and finite");
    }
    const Index n = x.rows();
    const auto nb = static_cast<Index>(spec.blocks.size());
    SimulatedMask out{MissMask(n, p), RowLatents{VectorXd::Zero(n), BitMatrix::Zero(n, nb)}};
    const double tau = spec.subject_variance ? std::sqrt(*spec.subject_variance) : 0.0;

    Rng rng(seed);
    std::vector<std::uint8_t> m(static_cast<std::size_t>(p));
    std::vector<std::uint8_t> b(static_cast<std::size_t>(nb));
    for (Index i = 0; i < n; ++i) {
        std::fill(m.begin(), m.end(), 0);
        double s = 0.0;
        if (spec.subject_variance) {
            s = tau * std_normal(rng);
        }
        for (Index k = 0; k < nb; ++k) {
            b[static_cast<std::size_t>(k)] = uniform01(rng) < spec.blocks[static_cast<std::size_t>(k)].prob ? 1 : 0;
            out.latents.blocks(i, k) = b[static_cast<std::size_t>(k)];
        }
        out.latents.subject(i) = s;
        detail::RowContext ctx{&x, i, &m, &b, s};
        for (int j : spec.simulation_order) {
            const auto cell = detail::draw_cell(spec.rules[static_cast<std::size_t>(j)], ctx, rng, spec.names[j]);
            m[static_cast<std::size_t>(j)] = cell.missing ? 1 : 0;
            if (cell.logical) {
                out.mask.set_logical(i, j);
            } else if (cell.missing) {
                out.mask.set(i, j, true);
            }
        }
    }
    return out;
}

inline MissMask simulate_mask(const MechanismSpec& spec, const MatrixXd& x, std::uint64_t seed)
{
    return simulate_mask_detailed(spec, x, seed).mask;
}

inline MissMask simulate_mask(const MechanismSpec& spec, const DataMatrix& x, std::uint64_t seed)
{
    return simulate_mask(spec, x.complete_values(), seed);
}

/// The forced value of cell (i, j) implied by deterministic/logical components
/// given the realized row (data, mask and latents), or nullopt if none fires.
inline std::optional<bool> forced_value(const MechanismSpec& spec, int j, const MatrixXd& x, Index i,
                                        const MissMask& mask, const RowLatents& latents)
{
    const int p = spec.columns();
    std::vector<std::uint8_t> m(static_cast<std::size_t>(p));
    for (int k = 0; k < p; ++k) {
        m[static_cast<std::size_t>(k)] = mask.missing(i, k) ? 1 : 0;
    }
    std::vector<std::uint8_t> b(static_cast<std::size_t>(latents.blocks.cols()));
    for (Index k = 0; k < latents.blocks.cols(); ++k) {
        b[static_cast<std::size_t>(k)] = latents.blocks(i, k);
    }
    detail::RowContext ctx{&x, i, &m, &b, latents.subject.size() ? latents.subject(i) : 0.0};
    bool miss = false;
    bool obs = false;
    for (const auto& comp : spec.rules[static_cast<std::size_t>(j)].components) {
        if (!ctx.holds(comp.scope)) {
            continue;
        }
        if (const auto* d = std::get_if<DeterministicForm>(&comp.form); d && ctx.holds(d->when)) {
            (d->forced_missing ? miss : obs) = true;
        } else if (const auto* l = std::get_if<LogicalForm>(&comp.form); l && ctx.holds(l->when)) {
            miss = true;
        }
    }
    if (miss) {
        return true;
    }
    if (obs) {
        return false;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Classification

namespace detail {

/// Effect of one mask-side parent on a component: +1 raises missingness,
/// -1 lowers it, 2 both (non-monotone), 0 none. `certain` is set when the
/// dependence makes missingness certain for some parent configuration.
struct MaskEffect {
    int direction = 0;
    bool certain = false;
};

inline void merge_direction(int& acc, int d)
{
    if (d == 0) {
        return;
    }
    if (acc == 0) {
        acc = d;
    } else if (acc != d) {
        acc = 2;
    }
}

inline MaskEffect table_effect(const TableForm& t, std::size_t parent)
{
    MaskEffect e;
    const std::size_t bit = std::size_t{1} << parent;
    bool varies = false;
    for (std::size_t idx = 0; idx < t.probs.size(); ++idx) {
        if (idx & bit) {
            continue;
        }
        const double p0 = t.probs[idx];
        const double p1 = t.probs[idx | bit];
        if (p1 > p0) {
            merge_direction(e.direction, 1);
        } else if (p1 < p0) {
            merge_direction(e.direction, -1);
        }
        varies = varies || p0 != p1;
    }
    if (varies) {
        e.certain = std::any_of(t.probs.begin(), t.probs.end(), [](double pr) { return pr == 1.0; });
    }
    return e;
}

} // namespace detail

/// Taxonomy label implied by the rule structure. Total: never throws on a
/// valid spec.
inline TaxonomyLabel classify(const MechanismSpec& spec)
{
    TaxonomyLabel label;
    bool uses_other_data = false;
    bool uses_missing_data = false;
    bool weak = false;
    bool strong = false;
    bool block = false;
    bool data_deterministic = false;
    int sign = 0;

    const int p = spec.columns();
    std::vector<int> tpos(static_cast<std::size_t>(p), 0);
    for (int k = 0; k < p && k < static_cast<int>(spec.temporal_order.size()); ++k) {
        tpos[static_cast<std::size_t>(spec.temporal_order[k])] = k;
    }

    auto note_mask_ref = [&](int target, const PredictorRef& r) {
        if (r.kind == PredictorRef::Kind::block) {
            block = true;
        } else if (r.kind == PredictorRef::Kind::indicator &&
                   tpos[static_cast<std::size_t>(r.index)] > tpos[static_cast<std::size_t>(target)]) {
            block = true;
        }
    };
    auto note_data_ref = [&](int target, const PredictorRef& r) {
        if (r.kind != PredictorRef::Kind::data) {
            return;
        }
        if (r.index == target || spec.is_latent(r.index)) {
            uses_missing_data = true;
        } else {
            uses_other_data = true;
        }
    };

    for (const auto& rule : spec.rules) {
        const int j = rule.target;
        for (const auto& comp : rule.components) {
            detail::for_each_ref(comp, [&](const PredictorRef& r, bool) { note_data_ref(j, r); });
            // A scope that requires a parent indicator gates the whole component on it.
            const bool forcing = [&] {
                const auto* d = std::get_if<DeterministicForm>(&comp.form);
                return std::holds_alternative<LogicalForm>(comp.form) || (d && d->forced_missing);
            }();
            for (const auto& c : comp.scope) {
                if (!c.ref.touches_mask()) {
                    continue;
                }
                const int req = detail::required_bit(comp.scope, c.ref);
                if (req == 0) {
                    continue;
                }
                (forcing ? strong : weak) = true;
                note_mask_ref(j, c.ref);
                detail::merge_direction(sign, req);
            }
            std::visit(
                [&](const auto& form) {
                    using T = std::decay_t<decltype(form)>;
                    if constexpr (std::is_same_v<T, LogisticForm>) {
                        for (const auto& [ref, coef] : form.terms) {
                            if (!ref.touches_mask() || coef * ref.scale == 0.0) {
                                continue;
                            }
                            weak = true;
                            note_mask_ref(j, ref);
                            detail::merge_direction(sign, coef * ref.scale > 0.0 ? 1 : -1);
                        }
                    } else if constexpr (std::is_same_v<T, TableForm>) {
                        for (std::size_t k = 0; k < form.parents.size(); ++k) {
                            const auto e = detail::table_effect(form, k);
                            if (e.direction == 0) {
                                continue;
                            }
                            (e.certain ? strong : weak) = true;
                            note_mask_ref(j, form.parents[k]);
                            detail::merge_direction(sign, e.direction);
                        }
                    } else {
                        const bool forced_missing = [&] {
                            if constexpr (std::is_same_v<T, DeterministicForm>) {
                                return form.forced_missing;
                            } else {
                                return true;
                            }
                        }();
                        bool mask_dep = false;
                        for (const auto& c : form.when) {
                            if (c.ref.kind == PredictorRef::Kind::data) {
                                data_deterministic = true;
                            }
                            if (!c.ref.touches_mask()) {
                                continue;
                            }
                            const int req = detail::required_bit(form.when, c.ref);
                            if (req == 0) {
                                continue;
                            }
                            mask_dep = true;
                            note_mask_ref(j, c.ref);
                            // Requiring the parent missing and forcing missing is positive.
                            detail::merge_direction(sign, (req == 1) == forced_missing ? 1 : -1);
                        }
                        if (mask_dep) {
                            (forced_missing ? strong : weak) = true;
                        }
                    }
                },
                comp.form);
        }
    }

    label.data_dependence = uses_missing_data  ? DataDependence::MNAR
                            : uses_other_data ? DataDependence::MAR
                                              : DataDependence::MCAR;
    label.structure = strong ? Structure::strong : weak ? Structure::weak : Structure::unstructured;
    if (label.structure == Structure::unstructured) {
        label.shape = Shape::none;
    } else {
        label.shape = block ? Shape::block : Shape::sequential;
        label.sign = sign == 1 ? Sign::positive : sign == -1 ? Sign::negative : Sign::mixed;
    }
    label.determinism = data_deterministic ? Determinism::deterministic : Determinism::probabilistic;
    return label;
}

// ---------------------------------------------------------------------------
// Composition

enum class Combiner { union_force_missing };

namespace detail {

inline PredictorRef shift_block(PredictorRef r, int offset)
{
    if (r.kind == PredictorRef::Kind::block) {
        r.index += offset;
    }
    return r;
}

inline Predicate shift_block(Predicate p, int offset)
{
    for (auto& c : p) {
        c.ref = shift_block(c.ref, offset);
    }
    return p;
}

inline Component shift_block(Component c, int offset)
{
    c.scope = shift_block(std::move(c.scope), offset);
    std::visit(
        [&](auto& form) {
            using T = std::decay_t<decltype(form)>;
            if constexpr (std::is_same_v<T, LogisticForm>) {
                for (auto& t : form.terms) {
                    t.first = shift_block(t.first, offset);
                }
            } else if constexpr (std::is_same_v<T, TableForm>) {
                for (auto& r : form.parents) {
                    r = shift_block(r, offset);
                }
            } else {
                form.when = shift_block(std::move(form.when), offset);
            }
        },
        c.form);
    return c;
}

} // namespace detail

/// Union of mechanisms: per column the components of every spec are pooled.
/// Forced-missing components take precedence; probabilistic ones fire
/// independently. The first spec's orders are used and must suit every rule.
inline MechanismSpec compose(const std::vector<MechanismSpec>& specs, Combiner = Combiner::union_force_missing)
{
    if (specs.empty()) {
        throw SpecError("compose: no specs given");
    }
    for (const auto& s : specs) {
        validate(s);
    }
    MechanismSpec out = specs.front();
    out.declared_label.reset();
    for (std::size_t k = 1; k < specs.size(); ++k) {
        const auto& s = specs[k];
        if (s.names.size() != out.names.size()) {
            throw SpecError("compose: specs have different column counts");
        }
        if (s.temporal_order != out.temporal_order) {
            throw SpecError("compose: specs declare different temporal orderings");
        }
        if (s.subject_variance) {
            if (out.subject_variance && *out.subject_variance != *s.subject_variance) {
                throw SpecError("compose: conflicting subject effect variances");
            }
            out.subject_variance = s.subject_variance;
        }
        const int offset = static_cast<int>(out.blocks.size());
        out.blocks.insert(out.blocks.end(), s.blocks.begin(), s.blocks.end());
        for (int lc : s.latent_columns) {
            if (!out.is_latent(lc)) {
                out.latent_columns.push_back(lc);
            }
        }
        for (std::size_t j = 0; j < s.rules.size(); ++j) {
            for (const auto& comp : s.rules[j].components) {
                out.rules[j].components.push_back(detail::shift_block(comp, offset));
            }
        }
    }
    std::sort(out.latent_columns.begin(), out.latent_columns.end());
    try {
        validate(out);
    } catch (const SpecError& e) {
        throw SpecError(std::string("compose: incompatible orderings: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convenience constructors

inline Component bernoulli(double prob, Predicate scope = {})
{
    return {TableForm{{}, {prob}}, std::move(scope)};
}

inline Component table_on(PredictorRef parent, double p_if_0, double p_if_1, Predicate scope = {})
{
    return {TableForm{{parent}, {p_if_0, p_if_1}}, std::move(scope)};
}

inline Component logistic(double intercept, std::vector<std::pair<PredictorRef, double>> terms, Predicate scope = {})
{
    return {LogisticForm{intercept, std::move(terms)}, std::move(scope)};
}

inline Component force_missing_when(Predicate when, Predicate scope = {})
{
    return {DeterministicForm{std::move(when), true}, std::move(scope)};
}

inline Component force_observed_when(Predicate when, Predicate scope = {})
{
    return {DeterministicForm{std::move(when), false}, std::move(scope)};
}

inline Component logical_when(Predicate when)
{
    return {LogicalForm{std::move(when)}, {}};
}

inline Condition is_missing(int j) { return {PredictorRef::indicator(j), CompareOp::eq, 1.0}; }
inline Condition is_observed(int j) { return {PredictorRef::indicator(j), CompareOp::eq, 0.0}; }
inline Condition block_on(int b) { return {PredictorRef::block(b), CompareOp::eq, 1.0}; }

} // namespace smlab
