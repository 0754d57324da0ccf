#pragma once

// Text serialization of MechanismSpec and Graphviz export of its dependency
// graph.
//
// Spec file grammar (line oriented, whitespace separated):
//
//   smspec 1
//   names <name>...
//   order <int>...                  simulation order
//   temporal <int>...               declared variable order
//   subject_variance <real>         optional
//   block <prob>                    zero or more; ids are 0, 1, ...
//   latent <int>...                 optional
//   label <dep> <structure> <shape> <determinism> [<sign>]   optional
//   rule <j>                        one per column, in column order
//     logistic <intercept> | table <ref>... | deterministic missing|observed | logical
//       term <ref> <coef>           logistic only
//       probs <real>...             table only
//       when <ref> <op> <real>      deterministic/logical
//       scope <ref> <op> <real>
//     end
//   end
//
// <ref> is x<j> (data), m<j> (indicator), b<k> (block latent), s (subject
// effect) or 1 (constant), optionally suffixed with :<scale>:<shift>. Reals
// are written in shortest round-trip form, so print(parse(text)) == text for
// any text produced by print.

#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include "smlab/format.hpp"
#include "smlab/mechanism.hpp"

namespace smlab {

namespace detail {

inline std::string ref_token(const PredictorRef& r)
{
    std::string base;
    switch (r.kind) {
    case PredictorRef::Kind::data: base = "x" + std::to_string(r.index); break;
    case PredictorRef::Kind::indicator: base = "m" + std::to_string(r.index); break;
    case PredictorRef::Kind::block: base = "b" + std::to_string(r.index); break;
    case PredictorRef::Kind::subject_effect: base = "s"; break;
    case PredictorRef::Kind::constant: base = "1"; break;
    }
    if (r.scale != 1.0 || r.shift != 0.0) {
        base += ":" + format_double(r.scale) + ":" + format_double(r.shift);
    }
    return base;
}

inline PredictorRef parse_ref(const std::string& tok, const std::string& ctx)
{
    auto parts = split(tok, ':');
    if (parts.size() != 1 && parts.size() != 3) {
        throw FormatError(ctx + ": bad reference '" + tok + "'");
    }
    const std::string& base = parts[0];
    PredictorRef r;
    if (base == "s") {
        r = PredictorRef::subject();
    } else if (base == "1") {
        r = PredictorRef::constant();
    } else if (base.size() >= 2 && (base[0] == 'x' || base[0] == 'm' || base[0] == 'b')) {
        const int idx = static_cast<int>(parse_int(std::string_view(base).substr(1), ctx));
        r = base[0] == 'x' ? PredictorRef::data(idx) : base[0] == 'm' ? PredictorRef::indicator(idx)
                                                                       : PredictorRef::block(idx);
    } else {
        throw FormatError(ctx + ": bad reference '" + tok + "'");
    }
    if (parts.size() == 3) {
        r.scale = parse_double(parts[1], ctx);
        r.shift = parse_double(parts[2], ctx);
    }
    return r;
}

inline const char* op_token(CompareOp op)
{
    switch (op) {
    case CompareOp::lt: return "<";
    case CompareOp::le: return "<=";
    case CompareOp::gt: return ">";
    case CompareOp::ge: return ">=";
    case CompareOp::eq: return "==";
    case CompareOp::ne: return "!=";
    }
    return "?";
}

inline CompareOp parse_op(const std::string& tok, const std::string& ctx)
{
    static const std::map<std::string, CompareOp> ops{{"<", CompareOp::lt},  {"<=", CompareOp::le},
                                                      {">", CompareOp::gt},  {">=", CompareOp::ge},
                                                      {"==", CompareOp::eq}, {"!=", CompareOp::ne}};
    auto it = ops.find(tok);
    if (it == ops.end()) {
        throw FormatError(ctx + ": bad comparison operator '" + tok + "'");
    }
    return it->second;
}

inline void print_conditions(std::ostream& out, const char* keyword, const Predicate& p)
{
    for (const auto& c : p) {
        out << "    " << keyword << ' ' << ref_token(c.ref) << ' ' << op_token(c.op) << ' ' << format_double(c.value)
            << '\n';
    }
}

template <class E>
E parse_enum(const std::string& tok, std::initializer_list<std::pair<const char*, E>> table, const std::string& ctx)
{
    for (const auto& [name, value] : table) {
        if (tok == name) {
            return value;
        }
    }
    throw FormatError(ctx + ": unknown label value '" + tok + "'");
}

} // namespace detail

inline void write_spec(std::ostream& out, const MechanismSpec& spec)
{
    auto ints = [&](const char* key, const std::vector<int>& v) {
        out << key;
        for (int x : v) {
            out << ' ' << x;
        }
        out << '\n';
    };
    out << "smspec 1\n";
    out << "names";
    for (const auto& nm : spec.names) {
        out << ' ' << nm;
    }
    out << '\n';
    ints("order", spec.simulation_order);
    ints("temporal", spec.temporal_order);
    if (spec.subject_variance) {
        out << "subject_variance " << format_double(*spec.subject_variance) << '\n';
    }
    for (const auto& b : spec.blocks) {
        out << "block " << format_double(b.prob) << '\n';
    }
    if (!spec.latent_columns.empty()) {
        ints("latent", spec.latent_columns);
    }
    if (spec.declared_label) {
        const auto& l = *spec.declared_label;
        out << "label " << to_string(l.data_dependence) << ' ' << to_string(l.structure) << ' ' << to_string(l.shape)
            << ' ' << to_string(l.determinism);
        if (l.sign) {
            out << ' ' << to_string(*l.sign);
        }
        out << '\n';
    }
    for (const auto& rule : spec.rules) {
        out << "rule " << rule.target << '\n';
        for (const auto& comp : rule.components) {
            std::visit(
                [&](const auto& form) {
                    using T = std::decay_t<decltype(form)>;
                    if constexpr (std::is_same_v<T, LogisticForm>) {
                        out << "  logistic " << format_double(form.intercept) << '\n';
                        for (const auto& [ref, coef] : form.terms) {
                            out << "    term " << detail::ref_token(ref) << ' ' << format_double(coef) << '\n';
                        }
                    } else if constexpr (std::is_same_v<T, TableForm>) {
                        out << "  table";
                        for (const auto& ref : form.parents) {
                            out << ' ' << detail::ref_token(ref);
                        }
                        out << "\n    probs";
                        for (double pr : form.probs) {
                            out << ' ' << format_double(pr);
                        }
                        out << '\n';
                    } else if constexpr (std::is_same_v<T, DeterministicForm>) {
                        out << "  deterministic " << (form.forced_missing ? "missing" : "observed") << '\n';
                        detail::print_conditions(out, "when", form.when);
                    } else {
                        out << "  logical\n";
                        detail::print_conditions(out, "when", form.when);
                    }
                },
                comp.form);
            detail::print_conditions(out, "scope", comp.scope);
            out << "  end\n";
        }
        out << "end\n";
    }
}

inline std::string spec_to_string(const MechanismSpec& spec)
{
    std::ostringstream os;
    write_spec(os, spec);
    return os.str();
}

inline MechanismSpec read_spec(std::istream& in, const std::string& source = "spec")
{
    MechanismSpec spec;
    std::string line;
    std::size_t line_no = 0;
    auto ctx = [&] { return source + ":" + std::to_string(line_no); };
    auto next = [&](std::vector<std::string>& toks) {
        while (std::getline(in, line)) {
            ++line_no;
            toks = tokenize(chomp(line));
            if (!toks.empty() && toks[0][0] != '#') {
                return true;
            }
        }
        return false;
    };
    auto ints = [&](const std::vector<std::string>& toks) {
        std::vector<int> v;
        for (std::size_t k = 1; k < toks.size(); ++k) {
            v.push_back(static_cast<int>(parse_int(toks[k], ctx())));
        }
        return v;
    };
    auto condition = [&](const std::vector<std::string>& toks) {
        if (toks.size() != 4) {
            throw FormatError(ctx() + ": expected '" + toks[0] + " <ref> <op> <value>'");
        }
        return Condition{detail::parse_ref(toks[1], ctx()), detail::parse_op(toks[2], ctx()),
                         parse_double(toks[3], ctx())};
    };

    std::vector<std::string> toks;
    if (!next(toks) || toks.size() != 2 || toks[0] != "smspec" || toks[1] != "1") {
        throw FormatError(source + ": missing 'smspec 1' header");
    }
    bool have_names = false;
    while (next(toks)) {
        const std::string& key = toks[0];
        if (key == "names") {
            spec.names.assign(toks.begin() + 1, toks.end());
            have_names = true;
        } else if (key == "order") {
            spec.simulation_order = ints(toks);
        } else if (key == "temporal") {
            spec.temporal_order = ints(toks);
        } else if (key == "subject_variance" && toks.size() == 2) {
            spec.subject_variance = parse_double(toks[1], ctx());
        } else if (key == "block" && toks.size() == 2) {
            spec.blocks.push_back({parse_double(toks[1], ctx())});
        } else if (key == "latent") {
            spec.latent_columns = ints(toks);
        } else if (key == "label" && (toks.size() == 5 || toks.size() == 6)) {
            TaxonomyLabel l;
            l.data_dependence = detail::parse_enum<DataDependence>(
                toks[1], {{"MCAR", DataDependence::MCAR}, {"MAR", DataDependence::MAR}, {"MNAR", DataDependence::MNAR}},
                ctx());
            l.structure = detail::parse_enum<Structure>(
                toks[2],
                {{"unstructured", Structure::unstructured}, {"weak", Structure::weak}, {"strong", Structure::strong}},
                ctx());
            l.shape = detail::parse_enum<Shape>(
                toks[3], {{"none", Shape::none}, {"block", Shape::block}, {"sequential", Shape::sequential}}, ctx());
            l.determinism = detail::parse_enum<Determinism>(
                toks[4], {{"probabilistic", Determinism::probabilistic}, {"deterministic", Determinism::deterministic}},
                ctx());
            if (toks.size() == 6) {
                l.sign = detail::parse_enum<Sign>(
                    toks[5], {{"positive", Sign::positive}, {"negative", Sign::negative}, {"mixed", Sign::mixed}},
                    ctx());
            }
            spec.declared_label = l;
        } else if (key == "rule" && toks.size() == 2) {
            MechanismRule rule;
            rule.target = static_cast<int>(parse_int(toks[1], ctx()));
            if (rule.target != static_cast<int>(spec.rules.size())) {
                throw FormatError(ctx() + ": rules must appear in column order");
            }
            while (true) {
                if (!next(toks)) {
                    throw FormatError(source + ": unterminated rule " + std::to_string(rule.target));
                }
                if (toks[0] == "end") {
                    break;
                }
                Component comp;
                if (toks[0] == "logistic" && toks.size() == 2) {
                    comp.form = LogisticForm{parse_double(toks[1], ctx()), {}};
                } else if (toks[0] == "table") {
                    TableForm t;
                    for (std::size_t k = 1; k < toks.size(); ++k) {
                        t.parents.push_back(detail::parse_ref(toks[k], ctx()));
                    }
                    comp.form = t;
                } else if (toks[0] == "deterministic" && toks.size() == 2 &&
                           (toks[1] == "missing" || toks[1] == "observed")) {
                    comp.form = DeterministicForm{{}, toks[1] == "missing"};
                } else if (toks[0] == "logical" && toks.size() == 1) {
                    comp.form = LogicalForm{};
                } else {
                    throw FormatError(ctx() + ": unknown component '" + toks[0] + "'");
                }
                while (true) {
                    if (!next(toks)) {
                        throw FormatError(source + ": unterminated component");
                    }
                    if (toks[0] == "end") {
                        break;
                    }
                    if (toks[0] == "scope") {
                        comp.scope.push_back(condition(toks));
                    } else if (toks[0] == "term" && toks.size() == 3) {
                        auto* f = std::get_if<LogisticForm>(&comp.form);
                        if (!f) {
                            throw FormatError(ctx() + ": 'term' outside a logistic component");
                        }
                        f->terms.emplace_back(detail::parse_ref(toks[1], ctx()), parse_double(toks[2], ctx()));
                    } else if (toks[0] == "probs") {
                        auto* f = std::get_if<TableForm>(&comp.form);
                        if (!f) {
                            throw FormatError(ctx() + ": 'probs' outside a table component");
                        }
                        for (std::size_t k = 1; k < toks.size(); ++k) {
                            f->probs.push_back(parse_double(toks[k], ctx()));
                        }
                    } else if (toks[0] == "when") {
                        if (auto* d = std::get_if<DeterministicForm>(&comp.form)) {
                            d->when.push_back(condition(toks));
                        } else if (auto* l = std::get_if<LogicalForm>(&comp.form)) {
                            l->when.push_back(condition(toks));
                        } else {
                            throw FormatError(ctx() + ": 'when' outside a deterministic/logical component");
                        }
                    } else {
                        throw FormatError(ctx() + ": unexpected '" + toks[0] + "' in component");
                    }
                }
                rule.components.push_back(std::move(comp));
            }
            spec.rules.push_back(std::move(rule));
        } else {
            throw FormatError(ctx() + ": unexpected line '" + line + "'");
        }
    }
    if (!have_names) {
        throw FormatError(source + ": missing 'names' line");
    }
    const auto p = static_cast<int>(spec.names.size());
    if (spec.simulation_order.empty()) {
        spec.simulation_order = detail::identity_order(p);
    }
    if (spec.temporal_order.empty()) {
        spec.temporal_order = detail::identity_order(p);
    }
    // Columns without a rule are never missing.
    while (static_cast<int>(spec.rules.size()) < p) {
        spec.rules.push_back(MechanismRule{static_cast<int>(spec.rules.size()), {}});
    }
    try {
        validate(spec);
    } catch (const SpecError& e) {
        throw FormatError(source + ": " + e.what());
    }
    return spec;
}

inline MechanismSpec spec_from_string(const std::string& text, const std::string& source = "spec")
{
    std::istringstream is(text);
    return read_spec(is, source);
}

// ---------------------------------------------------------------------------
// DOT export

namespace detail {

inline std::string indicator_node(const MechanismSpec& spec, int j)
{
    return "M_" + spec.names[static_cast<std::size_t>(j)];
}

inline std::string ref_node(const MechanismSpec& spec, const PredictorRef& r)
{
    switch (r.kind) {
    case PredictorRef::Kind::data: return spec.names[static_cast<std::size_t>(r.index)];
    case PredictorRef::Kind::indicator: return indicator_node(spec, r.index);
    case PredictorRef::Kind::block: return "B" + std::to_string(r.index);
    case PredictorRef::Kind::subject_effect: return "S";
    case PredictorRef::Kind::constant: return {};
    }
    return {};
}

} // namespace detail

/// Dependency graph in Graphviz DOT. Data columns are blue squares (dashed
/// outline when latent), indicators red diamonds, block latents grey circles
/// and the subject effect a green circle. Dashed edges are probabilistic,
/// solid edges deterministic.
inline void write_dot(std::ostream& out, const MechanismSpec& spec)
{
    validate(spec);
    out << "digraph mechanism {\n";
    out << "  rankdir=LR;\n";
    for (int j = 0; j < spec.columns(); ++j) {
        const bool latent = spec.is_latent(j);
        out << "  \"" << spec.names[j] << "\" [shape=square, color=blue, class=\"" << (latent ? "latent" : "data")
            << '"' << (latent ? ", style=dashed" : "") << "];\n";
    }
    for (int j = 0; j < spec.columns(); ++j) {
        out << "  \"" << detail::indicator_node(spec, j) << "\" [shape=diamond, color=red, class=\"indicator\"];\n";
    }
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        out << "  \"B" << b << "\" [shape=circle, color=gray, class=\"latent\"];\n";
    }
    if (spec.subject_variance) {
        out << "  \"S\" [shape=circle, color=green, class=\"subject-effect\"];\n";
    }

    std::vector<std::tuple<std::string, std::string, bool>> edges;
    std::set<std::tuple<std::string, std::string, bool>> seen;
    auto add = [&](const PredictorRef& r, int target, bool solid) {
        const std::string from = detail::ref_node(spec, r);
        if (from.empty()) {
            return;
        }
        auto e = std::make_tuple(from, detail::indicator_node(spec, target), solid);
        if (seen.insert(e).second) {
            edges.push_back(e);
        }
    };
    for (const auto& rule : spec.rules) {
        for (const auto& comp : rule.components) {
            std::visit(
                [&](const auto& form) {
                    using T = std::decay_t<decltype(form)>;
                    if constexpr (std::is_same_v<T, LogisticForm>) {
                        for (const auto& [ref, coef] : form.terms) {
                            if (coef != 0.0) {
                                add(ref, rule.target, false);
                            }
                        }
                    } else if constexpr (std::is_same_v<T, TableForm>) {
                        for (std::size_t k = 0; k < form.parents.size(); ++k) {
                            const auto e = detail::table_effect(form, k);
                            if (e.direction != 0) {
                                add(form.parents[k], rule.target, e.certain);
                            }
                        }
                    } else {
                        for (const auto& c : form.when) {
                            add(c.ref, rule.target, true);
                        }
                    }
                },
                comp.form);
            const bool solid = !std::holds_alternative<LogisticForm>(comp.form) &&
                               !std::holds_alternative<TableForm>(comp.form);
            for (const auto& c : comp.scope) {
                add(c.ref, rule.target, solid);
            }
        }
    }
    for (const auto& [from, to, solid] : edges) {
        out << "  \"" << from << "\" -> \"" << to << "\" [style=" << (solid ? "solid" : "dashed") << "];\n";
    }
    out << "}\n";
}

inline std::string dot_to_string(const MechanismSpec& spec)
{
    std::ostringstream os;
    write_dot(os, spec);
    return os.str();
}

} // namespace smlab
