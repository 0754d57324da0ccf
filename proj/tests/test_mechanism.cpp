#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace smlab;

namespace {

double se(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

MechanismSpec all_bernoulli(int p, double rate)
{
    auto s = MechanismSpec::empty(DataMatrix::default_names(p));
    for (int j = 0; j < p; ++j) {
        s.rules[j].components.push_back(bernoulli(rate));
    }
    return s;
}

PredictorRef relabel(PredictorRef r, const std::vector<int>& to)
{
    if (r.kind == PredictorRef::Kind::data || r.kind == PredictorRef::Kind::indicator) {
        r.index = to[static_cast<std::size_t>(r.index)];
    }
    return r;
}

Predicate relabel(Predicate p, const std::vector<int>& to)
{
    for (auto& c : p) {
        c.ref = relabel(c.ref, to);
    }
    return p;
}

/// Moves column j to position to[j], rewriting every reference.
MechanismSpec relabel(const MechanismSpec& s, const std::vector<int>& to)
{
    const int p = s.columns();
    MechanismSpec out = s;
    for (int j = 0; j < p; ++j) {
        const auto k = static_cast<std::size_t>(to[static_cast<std::size_t>(j)]);
        out.names[k] = s.names[static_cast<std::size_t>(j)];
        auto rule = s.rules[static_cast<std::size_t>(j)];
        rule.target = static_cast<int>(k);
        for (auto& comp : rule.components) {
            comp.scope = relabel(comp.scope, to);
            std::visit(
                [&](auto& form) {
                    using T = std::decay_t<decltype(form)>;
                    if constexpr (std::is_same_v<T, LogisticForm>) {
                        for (auto& t : form.terms) {
                            t.first = relabel(t.first, to);
                        }
                    } else if constexpr (std::is_same_v<T, TableForm>) {
                        for (auto& r : form.parents) {
                            r = relabel(r, to);
                        }
                    } else {
                        form.when = relabel(form.when, to);
                    }
                },
                comp.form);
        }
        out.rules[k] = rule;
    }
    for (auto& v : out.simulation_order) {
        v = to[static_cast<std::size_t>(v)];
    }
    for (auto& v : out.temporal_order) {
        v = to[static_cast<std::size_t>(v)];
    }
    for (auto& v : out.latent_columns) {
        v = to[static_cast<std::size_t>(v)];
    }
    std::sort(out.latent_columns.begin(), out.latent_columns.end());
    return out;
}

double correlation(const VectorXd& a, const VectorXd& b)
{
    const VectorXd ca = a.array() - a.mean();
    const VectorXd cb = b.array() - b.mean();
    return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

} // namespace

TEST(Simulate, BernoulliRatePerColumn)
{
    const double n = 1e5;
    const auto m = simulate_mask(all_bernoulli(3, 0.45), MatrixXd::Zero(100000, 3), 1);
    for (Index j = 0; j < 3; ++j) {
        EXPECT_NEAR(m.column_rate(j), 0.45, 3.0 * se(0.45, n));
    }
}

TEST(Simulate, LogisticAtZeroIsOneHalf)
{
    const auto spec = sim2_spec(0.3);
    const MatrixXd x = MatrixXd::Zero(1, 3);
    std::vector<std::uint8_t> m(3, 0), b;
    detail::RowContext ctx{&x, 0, &m, &b, 0.0};
    const auto& form = std::get<LogisticForm>(spec.rules[1].components[0].form);
    EXPECT_EQ(detail::logistic_probability(form, ctx, "X2"), 0.5);
}

TEST(Simulate, TableWithQOneGivesComplement)
{
    Rng rng(3);
    const auto m = simulate_mask(sim2_spec(1.0), sim2_data(5000, rng), 4);
    for (Index i = 0; i < m.rows(); ++i) {
        ASSERT_EQ(m.missing(i, 2), !m.missing(i, 1)) << "row " << i;
    }
}

TEST(Simulate, DeterministicGivenSeed)
{
    const auto x = test::normal_matrix(500, 10, 2);
    for (const auto& name : builtin_names()) {
        const auto spec = builtin_structures(name);
        EXPECT_EQ(simulate_mask(spec, x, 77), simulate_mask(spec, x, 77)) << name;
    }
    const auto spec = builtin_structures("mcar_u_1");
    EXPECT_NE(simulate_mask(spec, x, 77), simulate_mask(spec, x, 78));
}

TEST(Simulate, TableFrequenciesMatchProbabilities)
{
    const Index n = 100000;
    const auto x = test::normal_matrix(n, 3, 5);
    const auto spec = sim3_spec(0.3);
    const auto m = simulate_mask(spec, x, 6);
    double hits[2] = {0, 0}, count[2] = {0, 0};
    for (Index i = 0; i < n; ++i) {
        const int parent = m.missing(i, 1) ? 1 : 0;
        count[parent] += 1;
        hits[parent] += m.missing(i, 2) ? 1 : 0;
    }
    EXPECT_NEAR(hits[0] / count[0], 0.3, 3.0 * se(0.3, count[0]));
    EXPECT_NEAR(hits[1] / count[1], 0.5, 3.0 * se(0.5, count[1]));
}

TEST(Simulate, WeakSequentialTableFrequencies)
{
    const Index n = 100000;
    const auto cal = builtin_structure_calibrated("mcar_ws_seq");
    const auto m = simulate_mask(cal.spec, MatrixXd::Zero(n, 10), 8);
    for (int j = 2; j < 10; ++j) {
        double hits[2] = {0, 0}, count[2] = {0, 0};
        for (Index i = 0; i < n; ++i) {
            const int parent = m.missing(i, j - 1) ? 1 : 0;
            count[parent] += 1;
            hits[parent] += m.missing(i, j) ? 1 : 0;
        }
        EXPECT_NEAR(hits[0] / count[0], cal.parameter, 3.0 * se(cal.parameter, count[0]));
        EXPECT_NEAR(hits[1] / count[1], builtin_shape::ws_seq_stay, 3.0 * se(builtin_shape::ws_seq_stay, count[1]));
    }
}

TEST(Simulate, McarMaskUncorrelatedWithData)
{
    const Index n = 100000;
    const double bound = 4.0 / std::sqrt(static_cast<double>(n));
    const auto x = test::normal_matrix(n, 10, 9);
    for (const char* name : {"mcar_u_1", "mcar_ws_block", "mcar_ss_seq"}) {
        const auto m = simulate_mask(builtin_structures(name), x, 10);
        for (Index j = 1; j < 10; ++j) {
            const VectorXd mj = m.bits().col(j).cast<double>();
            for (Index c = 0; c < 10; c += 3) {
                EXPECT_LT(std::abs(correlation(mj, x.col(c))), bound) << name << " M" << j << " X" << c;
            }
        }
    }
}

TEST(Simulate, StrongRulesAreIdempotent)
{
    const auto x = test::normal_matrix(3000, 10, 12);
    std::vector<MechanismSpec> specs{builtin_structures("mcar_ss_seq"), builtin_structures("mcar_ss_block"),
                                     builtin_structures("unit_block"), genomic_testing_example()};
    for (const auto& ns : canonical_taxonomy_specs()) {
        specs.push_back(ns.spec);
    }
    for (const auto& spec : specs) {
        const MatrixXd xs = x.leftCols(spec.columns()).array() * 40.0 + 60.0;
        const auto sim = simulate_mask_detailed(spec, xs, 13);
        for (Index i = 0; i < xs.rows(); ++i) {
            for (int j = 0; j < spec.columns(); ++j) {
                const auto forced = forced_value(spec, j, xs, i, sim.mask, sim.latents);
                if (forced) {
                    ASSERT_EQ(*forced, sim.mask.missing(i, j)) << "row " << i << " col " << j;
                }
            }
        }
    }
}

TEST(Simulate, SubjectEffectVariance)
{
    auto s = all_bernoulli(2, 0.0);
    s.subject_variance = 4.0;
    s.rules[0].components = {logistic(0.0, {{PredictorRef::subject(), 1.0}})};
    const auto sim = simulate_mask_detailed(s, MatrixXd::Zero(50000, 2), 14);
    const double mean = sim.latents.subject.mean();
    const double var = (sim.latents.subject.array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 3.0 * 2.0 / std::sqrt(50000.0));
    EXPECT_NEAR(var, 4.0, 0.1);
    EXPECT_NEAR(sim.mask.column_rate(0), 0.5, 0.01);
    EXPECT_EQ(sim.mask.column_rate(1), 0.0);
}

TEST(Simulate, LogicalCellsAreFlagged)
{
    MatrixXd x(4, 3);
    x << 0, 60, 1, 1, 60, 1, 0, 80, 1, 1, 20, 1;
    const auto m = simulate_mask(psa_logical_example(), x, 15);
    EXPECT_TRUE(m.logical(0, 2));
    EXPECT_TRUE(m.logical(2, 2));
    EXPECT_FALSE(m.logical(1, 2));
    EXPECT_FALSE(m.logical(3, 2));
}

TEST(Simulate, Errors)
{
    auto s = all_bernoulli(2, 0.1);
    s.rules[0].components.push_back(table_on(PredictorRef::indicator(1), 0.1, 0.9));
    EXPECT_THROW(simulate_mask(s, MatrixXd::Zero(3, 2), 1), SpecError);

    auto self = all_bernoulli(2, 0.1);
    self.rules[1].components.push_back(table_on(PredictorRef::indicator(1), 0.1, 0.9));
    EXPECT_THROW(validate(self), SpecError);

    auto blowup = all_bernoulli(2, 0.0);
    blowup.rules[1].components = {logistic(0.0, {{PredictorRef::data(0), 1e300}})};
    MatrixXd x = MatrixXd::Constant(2, 2, 1e300);
    EXPECT_THROW(simulate_mask(blowup, x, 1), EvaluationError);

    auto badprob = all_bernoulli(2, 1.5);
    EXPECT_THROW(validate(badprob), SpecError);
    EXPECT_THROW(simulate_mask(all_bernoulli(2, 0.1), MatrixXd::Zero(3, 3), 1), SpecError);
}

TEST(Classify, ConstantBernoulliIsMcarU)
{
    const auto l = classify(all_bernoulli(4, 0.2));
    EXPECT_EQ(l.data_dependence, DataDependence::MCAR);
    EXPECT_EQ(l.structure, Structure::unstructured);
    EXPECT_EQ(l.shape, Shape::none);
    EXPECT_EQ(l.determinism, Determinism::probabilistic);
    EXPECT_EQ(l.cell(), "MCAR-U");
}

TEST(Classify, Sim2Spec)
{
    for (double q : {0.1, 0.5, 0.9}) {
        const auto l = classify(sim2_spec(q));
        EXPECT_EQ(l.data_dependence, DataDependence::MAR);
        EXPECT_EQ(l.structure, Structure::weak);
        EXPECT_EQ(l.shape, Shape::sequential);
        EXPECT_EQ(l.determinism, Determinism::probabilistic);
    }
    EXPECT_EQ(classify(sim2_spec(1.0)).structure, Structure::strong);
    EXPECT_EQ(classify(sim2_spec(1.0)).cell(), "MAR-SS");
}

TEST(Classify, Sim3Spec)
{
    EXPECT_EQ(classify(sim3_spec(0.25)).cell(), "MNAR-WS");
    EXPECT_EQ(classify(sim3_spec(1.0)).cell(), "MNAR-SS");
    EXPECT_EQ(classify(sim3_spec(0.25)).sign, Sign::positive);
    EXPECT_EQ(classify(sim3_spec(0.75)).sign, Sign::negative);
    EXPECT_EQ(classify(sim3_spec(0.5)).structure, Structure::unstructured);
}

TEST(Classify, CanonicalSpecsMatchDeclaredLabels)
{
    const auto specs = canonical_taxonomy_specs();
    EXPECT_EQ(specs.size(), 12u);
    for (const auto& ns : specs) {
        ASSERT_TRUE(ns.spec.declared_label.has_value());
        EXPECT_EQ(classify(ns.spec), *ns.spec.declared_label) << ns.name << ": " << describe(classify(ns.spec));
    }
}

TEST(Classify, InvariantUnderRelabeling)
{
    const std::vector<std::vector<int>> perms{{2, 0, 1}, {1, 2, 0}, {0, 2, 1}};
    std::vector<MechanismSpec> specs{sim2_spec(0.4), sim3_spec(0.8), psa_logical_example(),
                                     genomic_testing_example()};
    for (const auto& ns : canonical_taxonomy_specs()) {
        specs.push_back(ns.spec);
    }
    for (const auto& spec : specs) {
        for (const auto& to : perms) {
            const auto moved = relabel(spec, to);
            validate(moved);
            EXPECT_EQ(classify(moved), classify(spec));
        }
    }
}

TEST(Compose, ZeroProbabilityComponentChangesNothing)
{
    auto det = MechanismSpec::empty({"age", "bp"});
    det.rules[1].components.push_back(force_missing_when({{PredictorRef::data(0), CompareOp::gt, 80.0}}));
    auto zero = MechanismSpec::empty({"age", "bp"});
    zero.rules[1].components.push_back(bernoulli(0.0));
    const auto both = compose({det, zero});
    const MatrixXd x = (test::normal_matrix(2000, 2, 16).array() * 15.0 + 70.0).matrix();
    EXPECT_EQ(simulate_mask(both, x, 17), simulate_mask(det, x, 17));
    EXPECT_EQ(classify(both), classify(det));
}

TEST(Compose, IndependentUnion)
{
    const auto half = all_bernoulli(1, 0.5);
    const auto m = simulate_mask(compose({half, half}), MatrixXd::Zero(100000, 1), 18);
    EXPECT_NEAR(m.column_rate(0), 0.75, 3.0 * se(0.75, 1e5));
}

TEST(Compose, WeakWithDataDrivenStrong)
{
    auto ws = MechanismSpec::empty({"X1", "X2", "X3"});
    ws.rules[1].components.push_back(bernoulli(0.2));
    ws.rules[2].components.push_back(table_on(PredictorRef::indicator(1), 0.1, 0.6));
    auto ss = MechanismSpec::empty({"X1", "X2", "X3"});
    ss.rules[1].components.push_back(force_missing_when({{PredictorRef::data(0), CompareOp::gt, 1.0}}));
    ss.rules[2].components.push_back(force_missing_when({is_missing(1)}));
    const auto l = classify(compose({ws, ss}));
    EXPECT_EQ(l.data_dependence, DataDependence::MAR);
    EXPECT_EQ(l.structure, Structure::strong);
}

TEST(Compose, BlocksAreRenumbered)
{
    const auto a = builtin_structures("mcar_ss_block");
    const auto b = builtin_structures("unit_block");
    const auto c = compose({a, b});
    EXPECT_EQ(c.blocks.size(), 2u);
    const auto m = simulate_mask(c, MatrixXd::Zero(20000, 10), 19);
    EXPECT_GT(m.overall_rate(), 0.45);
}

TEST(Compose, IncompatibleOrderings)
{
    auto a = all_bernoulli(3, 0.1);
    auto b = all_bernoulli(3, 0.1);
    b.temporal_order = {2, 1, 0};
    EXPECT_THROW(compose({a, b}), SpecError);
    auto c = all_bernoulli(3, 0.1);
    c.rules[0].components.push_back(table_on(PredictorRef::indicator(2), 0.1, 0.9));
    c.simulation_order = {2, 0, 1};
    EXPECT_THROW(compose({a, c}), SpecError);
    EXPECT_THROW(compose({}), SpecError);
}

TEST(Builtins, NamesAndErrors)
{
    EXPECT_EQ(builtin_names().size(), 10u);
    EXPECT_THROW(builtin_structures("mcar_u_9"), SpecError);
    EXPECT_EQ(builtin_structures("complete").rules[0].components.size(), 0u);
}

TEST(Builtins, CalibratedToTarget)
{
    for (const auto& name : builtin_names()) {
        if (name == "complete") {
            continue;
        }
        const auto cal = builtin_structure_calibrated(name);
        EXPECT_NEAR(cal.expected_rate, 0.45, 0.005) << name;
        const auto m = simulate_mask(cal.spec, test::normal_matrix(20000, 10, 20), 21);
        EXPECT_NEAR(m.overall_rate(), cal.expected_rate, 0.01) << name;
    }
}

TEST(Builtins, McarU2AndU3Rates)
{
    const auto u2 = builtin_structures("mcar_u_2");
    const auto u3 = builtin_structures("mcar_u_3");
    const Index n = 20000;
    const auto m2 = simulate_mask(u2, MatrixXd::Zero(n, 10), 22);
    const auto m3 = simulate_mask(u3, MatrixXd::Zero(n, 10), 23);
    for (Index j = 0; j < 10; ++j) {
        const double want2 = 0.1 * static_cast<double>(j);
        EXPECT_NEAR(m2.column_rate(j), want2, 3.0 * se(want2, n) + 1e-12) << j;
        const double want3 = j < 5 ? 0.0 : 0.9;
        EXPECT_NEAR(m3.column_rate(j), want3, 3.0 * se(want3, n) + 1e-12) << j;
    }
}

TEST(Builtins, LabelsMatchStructure)
{
    EXPECT_EQ(classify(builtin_structures("mcar_u_1")).cell(), "MCAR-U");
    EXPECT_EQ(classify(builtin_structures("mcar_ws_block")).cell(), "MCAR-WS");
    EXPECT_EQ(classify(builtin_structures("mcar_ws_block")).shape, Shape::block);
    EXPECT_EQ(classify(builtin_structures("mcar_ws_seq")).shape, Shape::sequential);
    EXPECT_EQ(classify(builtin_structures("mcar_ss_block")).cell(), "MCAR-SS");
    EXPECT_EQ(classify(builtin_structures("mcar_ss_seq")).cell(), "MCAR-SS");
    EXPECT_EQ(classify(builtin_structures("mcar_ss_seq")).shape, Shape::sequential);
}

TEST(SpecIo, RoundTripIsExact)
{
    std::vector<MechanismSpec> specs{sim2_spec(0.9), sim3_spec(0.25), psa_logical_example(),
                                     genomic_testing_example()};
    for (const auto& name : builtin_names()) {
        specs.push_back(builtin_structures(name));
    }
    for (const auto& ns : canonical_taxonomy_specs()) {
        specs.push_back(ns.spec);
    }
    auto odd = all_bernoulli(2, 0.1 + 1e-17);
    odd.rules[1].components = {logistic(1.0 / 3.0, {{PredictorRef::data(0), -2.5e-9}},
                                        {{PredictorRef::data(0), CompareOp::ge, 0.7}})};
    specs.push_back(odd);
    for (const auto& spec : specs) {
        const auto text = spec_to_string(spec);
        const auto back = spec_from_string(text);
        EXPECT_TRUE(back == spec) << text;
        EXPECT_EQ(spec_to_string(back), text);
    }
}

TEST(SpecIo, ShippedSpecsParseAndClassify)
{
    const std::filesystem::path dir = SMLAB_SPEC_DIR;
    int count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".smspec") {
            continue;
        }
        std::ifstream in(entry.path());
        const auto spec = read_spec(in, entry.path().string());
        ASSERT_TRUE(spec.declared_label.has_value()) << entry.path();
        EXPECT_EQ(classify(spec), *spec.declared_label) << entry.path();
        ++count;
    }
    EXPECT_GE(count, 5);
}

TEST(SpecIo, ParseErrors)
{
    EXPECT_THROW(spec_from_string("nonsense"), FormatError);
    EXPECT_THROW(spec_from_string("smspec 1\nnames A B\nrule 0\n  table m5\n    probs 0.1 0.2\n  end\nend\n"),
                 std::exception);
}

TEST(Dot, Sim3Graph)
{
    const auto dot = dot_to_string(sim3_spec(0.25));
    EXPECT_NE(dot.find("\"Z\" -> \"M_X1\" [style=dashed]"), std::string::npos) << dot;
    EXPECT_NE(dot.find("\"M_X1\" -> \"M_X2\""), std::string::npos) << dot;
    EXPECT_NE(dot.find("\"Z\" [shape=square, color=blue, class=\"latent\", style=dashed]"), std::string::npos);
    EXPECT_NE(dot.find("shape=diamond, color=red"), std::string::npos);
}

TEST(Dot, DeterministicEdgesAreSolid)
{
    const auto dot = dot_to_string(sim2_spec(1.0));
    EXPECT_NE(dot.find("\"M_X2\" -> \"M_X3\" [style=solid]"), std::string::npos) << dot;
    const auto block = dot_to_string(builtin_structures("mcar_ss_block"));
    EXPECT_NE(block.find("\"B0\" -> \"M_X2\" [style=solid]"), std::string::npos) << block;
}
