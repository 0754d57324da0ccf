#pragma once

// Command-line front end. dispatch() parses argv, runs one verb and returns
// the exit code: 0 success, 1 validation error, 2 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smlab/csv.hpp"
#include "smlab/errors.hpp"
#include "smlab/experiments.hpp"
#include "smlab/format.hpp"
#include "smlab/imputer.hpp"
#include "smlab/mechanism.hpp"
#include "smlab/mechanism_io.hpp"
#include "smlab/structure.hpp"
#include "smlab/tabular.hpp"

namespace smlab::cli {

/// Validation failure reported with exit code 1.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

namespace detail {

namespace fs = std::filesystem;

inline void require_file(const std::string& flag, const std::string& path)
{
    if (path.empty()) {
        throw UsageError(flag + " is required");
    }
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
        throw UsageError(flag + ": no such file '" + path + "'");
    }
}

inline void require_distinct(const std::string& out_flag, const std::string& out,
                             const std::vector<std::string>& inputs)
{
    std::error_code ec;
    for (const auto& in : inputs) {
        if (!in.empty() && fs::exists(out, ec) && fs::equivalent(in, out, ec)) {
            throw UsageError(out_flag + " would overwrite input '" + in + "'");
        }
    }
}

inline void require_parent(const std::string& flag, const std::string& path)
{
    if (path.empty()) {
        throw UsageError(flag + " is required");
    }
    const auto parent = fs::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty() && !fs::is_directory(parent, ec)) {
        throw UsageError(flag + ": directory '" + parent.string() + "' does not exist");
    }
}

inline std::uint64_t parse_seed(const std::string& s)
{
    if (s.empty()) {
        throw UsageError("--seed is required (no implicit seeding)");
    }
    if (s.find_first_not_of("0123456789") != std::string::npos) {
        throw UsageError("--seed must be a nonnegative integer, got '" + s + "'");
    }
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw UsageError("--seed out of range: '" + s + "'");
    }
}

template <class T>
T parse_number(const std::string& flag, const std::string& s)
{
    try {
        if constexpr (std::is_integral_v<T>) {
            return static_cast<T>(parse_int(s, flag));
        } else {
            return static_cast<T>(parse_double(s, flag));
        }
    } catch (const FormatError&) {
        throw UsageError(flag + ": cannot parse '" + s + "'");
    }
}

template <class T>
std::vector<T> parse_list(const std::string& flag, const std::string& s)
{
    std::vector<T> out;
    for (const auto& tok : split(s, ',')) {
        const auto t = std::string(chomp(tok));
        if (!t.empty()) {
            out.push_back(parse_number<T>(flag, t));
        }
    }
    if (out.empty()) {
        throw UsageError(flag + ": empty list");
    }
    return out;
}

inline std::vector<std::string> parse_names(const std::string& s)
{
    std::vector<std::string> out;
    for (const auto& tok : split(s, ',')) {
        const auto t = std::string(chomp(tok));
        if (!t.empty()) {
            out.push_back(t);
        }
    }
    return out;
}

inline std::ifstream open_in(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw UsageError("cannot read '" + path + "'");
    }
    return f;
}

inline std::ofstream open_out(const std::string& path)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write '" + path + "'");
    }
    return f;
}

inline MechanismSpec load_spec(const std::string& path)
{
    auto f = open_in(path);
    return read_spec(f, path);
}

/// Column ordering: names or 0-based indices separated by commas or blanks.
inline std::vector<int> load_ordering(const std::string& path, const std::vector<std::string>& names)
{
    auto f = open_in(path);
    std::stringstream ss;
    ss << f.rdbuf();
    std::string text = ss.str();
    for (char& c : text) {
        if (c == ',') {
            c = ' ';
        }
    }
    std::vector<int> order;
    for (const auto& tok : tokenize(text)) {
        const auto it = std::find(names.begin(), names.end(), tok);
        if (it != names.end()) {
            order.push_back(static_cast<int>(it - names.begin()));
        } else {
            order.push_back(static_cast<int>(parse_number<long long>("--ordering", tok)));
        }
    }
    try {
        smlab::detail::check_permutation(order, static_cast<Index>(names.size()), "--ordering");
    } catch (const SpecError& e) {
        throw UsageError(e.what());
    }
    return order;
}

/// One 0/1 flag per row, optionally preceded by a header line.
inline std::vector<bool> load_ignore(const std::string& path, Index rows)
{
    auto f = open_in(path);
    std::vector<bool> flags;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        const auto t = std::string(chomp(line));
        if (t.empty()) {
            continue;
        }
        if (t == "0" || t == "1") {
            flags.push_back(t == "1");
        } else if (!first) {
            throw UsageError("--ignore: expected 0 or 1, got '" + t + "'");
        }
        first = false;
    }
    if (static_cast<Index>(flags.size()) != rows) {
        throw UsageError("--ignore: " + std::to_string(flags.size()) + " flags for " + std::to_string(rows) +
                         " data rows");
    }
    return flags;
}

/// `key = value` lines; '#' starts a comment.
inline std::vector<std::string> config_args(const std::string& path)
{
    auto f = open_in(path);
    std::vector<std::string> args;
    std::string line;
    std::size_t no = 0;
    while (std::getline(f, line)) {
        ++no;
        const auto hash = line.find('#');
        const auto body = std::string(chomp(line.substr(0, hash)));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw UsageError("--config " + path + ":" + std::to_string(no) + ": expected 'key = value'");
        }
        auto key = std::string(chomp(body.substr(0, eq)));
        auto value = std::string(chomp(body.substr(eq + 1)));
        while (!key.empty() && key.back() == ' ') key.pop_back();
        while (!value.empty() && value.front() == ' ') value.erase(value.begin());
        if (key.empty() || key == "config") {
            throw UsageError("--config " + path + ":" + std::to_string(no) + ": invalid key '" + key + "'");
        }
        args.push_back("--" + key);
        args.push_back(value);
    }
    return args;
}

/// Splices the contents of any `--config FILE` in front of the command-line
/// flags, so explicit flags (parsed later, last one wins) override it.
inline std::vector<std::string> expand_config(const std::vector<std::string>& argv, std::string& config_path)
{
    std::vector<std::string> rest;
    for (std::size_t k = 0; k < argv.size(); ++k) {
        if (argv[k] == "--config") {
            if (k + 1 >= argv.size()) {
                throw UsageError("--config requires a file");
            }
            config_path = argv[++k];
        } else if (argv[k].rfind("--config=", 0) == 0) {
            config_path = argv[k].substr(9);
        } else {
            rest.push_back(argv[k]);
        }
    }
    if (config_path.empty() || rest.empty()) {
        return rest;
    }
    require_file("--config", config_path);
    std::vector<std::string> out{rest[0]};
    if (rest.size() > 1) {
        out.push_back(rest[1]);  // verb
    }
    const auto extra = config_args(config_path);
    out.insert(out.end(), extra.begin(), extra.end());
    out.insert(out.end(), rest.begin() + std::min<std::ptrdiff_t>(2, static_cast<std::ptrdiff_t>(rest.size())),
               rest.end());
    return out;
}

} // namespace detail

struct Options {
    std::string spec, data, mask, ordering, out, seed, id, method = "pmm", ignore, logical, masked_data;
    std::string maxit, q, rho, structures, m, reps, n, n_test, donors = "5", ridge = "1e-05", alpha = "0.01";
    std::string threads = "1";
};

inline int run_simulate(const Options& o, std::ostream& out)
{
    detail::require_file("--spec", o.spec);
    detail::require_file("--data", o.data);
    detail::require_parent("--out", o.out);
    detail::require_distinct("--out", o.out, {o.spec, o.data});
    if (!o.masked_data.empty()) {
        detail::require_parent("--masked-data", o.masked_data);
        detail::require_distinct("--masked-data", o.masked_data, {o.spec, o.data});
    }
    const auto seed = detail::parse_seed(o.seed);
    const auto spec = detail::load_spec(o.spec);
    auto in = detail::open_in(o.data);
    const auto data = read_csv(in, o.data);
    if (data.cols() != spec.columns()) {
        throw UsageError("--data has " + std::to_string(data.cols()) + " columns but the spec has " +
                         std::to_string(spec.columns()));
    }
    if (!data.is_complete()) {
        throw UsageError("--data must be complete to simulate a mask");
    }
    const auto mask = simulate_mask(spec, data, seed);
    auto f = detail::open_out(o.out);
    write_mask_csv(f, mask, data.names());
    if (!o.masked_data.empty()) {
        auto g = detail::open_out(o.masked_data);
        write_csv(g, data.with_mask(mask));
    }
    out << "wrote " << o.out << " (" << mask.missing_count() << " of " << mask.bits().size()
        << " cells missing, rate " << format_double(mask.overall_rate()) << ")\n";
    return 0;
}

inline int run_classify(const Options& o, std::ostream& out)
{
    detail::require_file("--spec", o.spec);
    const auto spec = detail::load_spec(o.spec);
    const auto label = classify(spec);
    std::ostringstream text;
    text << label.cell() << '\n' << describe(label) << '\n';
    if (spec.declared_label) {
        text << "declared: " << spec.declared_label->cell()
             << (*spec.declared_label == label ? " (matches)" : " (differs)") << '\n';
    }
    if (!o.out.empty()) {
        detail::require_parent("--out", o.out);
        detail::require_distinct("--out", o.out, {o.spec});
        auto f = detail::open_out(o.out);
        f << text.str();
    }
    out << text.str();
    return 0;
}

inline int run_analyze(const Options& o, std::ostream& out)
{
    if (o.mask.empty() == o.data.empty()) {
        throw UsageError("analyze needs exactly one of --mask or --data");
    }
    const double alpha = detail::parse_number<double>("--alpha", o.alpha);
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw UsageError("--alpha must be in (0, 1)");
    }
    MissMask mask;
    std::vector<std::string> names;
    std::optional<DataMatrix> data;
    if (!o.mask.empty()) {
        detail::require_file("--mask", o.mask);
        auto f = detail::open_in(o.mask);
        auto nm = read_mask_csv(f, o.mask);
        mask = std::move(nm.mask);
        names = std::move(nm.names);
    } else {
        detail::require_file("--data", o.data);
        auto f = detail::open_in(o.data);
        data = read_csv(f, o.data);
        mask = data->mask();
        names = data->names();
    }
    std::optional<std::vector<int>> ordering;
    if (!o.ordering.empty()) {
        detail::require_file("--ordering", o.ordering);
        ordering = detail::load_ordering(o.ordering, names);
    }
    if (!o.out.empty()) {
        detail::require_parent("--out", o.out);
        detail::require_distinct("--out", o.out, {o.mask, o.data, o.ordering});
    }

    std::ostringstream text;
    const auto ps = pattern_summary(mask, ordering);
    text << "rows: " << mask.rows() << ", columns: " << mask.cols() << ", missing rate: "
         << format_double(mask.overall_rate()) << '\n';
    text << "distinct patterns: " << ps.distinct_patterns.size() << '\n';
    text << "column rates:";
    for (std::size_t j = 0; j < names.size(); ++j) {
        text << ' ' << names[j] << '=' << format_double(ps.per_column_rate[j]);
    }
    text << '\n';
    text << "monotone: " << (ps.monotone ? "yes" : "no") << '\n';
    text << "file-matching pairs:";
    if (ps.file_matching_pairs.empty()) {
        text << " none";
    }
    for (const auto& [j, k] : ps.file_matching_pairs) {
        text << ' ' << names[static_cast<std::size_t>(j)] << ':' << names[static_cast<std::size_t>(k)];
    }
    text << '\n';
    const auto report = pairwise_dependence(mask, alpha);
    text << report_summary(report, names);
    if (ordering) {
        const auto sig = sequential_signature(mask, *ordering, alpha);
        text << "sequential signature: monotone fraction " << format_double(sig.monotone_fraction)
             << ", forward only " << (sig.forward_only ? "yes" : "no") << '\n';
    }
    if (data) {
        const auto audit = mcar_structure_audit(*data, alpha);
        text << "audit: " << to_string(audit.verdict) << '\n';
        for (const auto& e : audit.evidence) {
            text << "  " << e << '\n';
        }
    }
    if (!o.out.empty()) {
        auto f = detail::open_out(o.out);
        write_report_csv(f, report, names);
    }
    out << text.str();
    return 0;
}

inline int run_impute(const Options& o, std::ostream& out)
{
    detail::require_file("--data", o.data);
    detail::require_parent("--out", o.out);
    const auto seed = detail::parse_seed(o.seed);
    ImputationConfig cfg;
    try {
        cfg.method = parse_method(o.method);
    } catch (const SpecError&) {
        throw UsageError("--method must be norm or pmm, got '" + o.method + "'");
    }
    cfg.m = detail::parse_number<int>("--m", o.m.empty() ? "5" : o.m);
    cfg.maxit = detail::parse_number<int>("--maxit", o.maxit.empty() ? "5" : o.maxit);
    cfg.donors = detail::parse_number<int>("--donors", o.donors);
    cfg.ridge = detail::parse_number<double>("--ridge", o.ridge);
    cfg.threads = detail::parse_number<unsigned>("--threads", o.threads);
    cfg.seed = seed;
    if (cfg.m < 1) throw UsageError("--m must be >= 1");
    if (cfg.maxit < 1) throw UsageError("--maxit must be >= 1");
    if (cfg.donors < 1) throw UsageError("--donors must be >= 1");
    if (!(cfg.ridge >= 0.0)) throw UsageError("--ridge must be >= 0");

    auto in = detail::open_in(o.data);
    auto data = read_csv(in, o.data);
    if (!o.ignore.empty()) {
        detail::require_file("--ignore", o.ignore);
        cfg.ignore = detail::load_ignore(o.ignore, data.rows());
    }
    if (!o.logical.empty()) {
        detail::require_file("--logical", o.logical);
        auto f = detail::open_in(o.logical);
        const auto lm = read_mask_csv(f, o.logical);
        if (lm.mask.rows() != data.rows() || lm.mask.cols() != data.cols()) {
            throw UsageError("--logical mask dimensions do not match --data");
        }
        MissMask mask = data.mask();
        for (Index i = 0; i < data.rows(); ++i) {
            for (Index j = 0; j < data.cols(); ++j) {
                if (lm.mask.missing(i, j)) {
                    if (!mask.missing(i, j)) {
                        throw UsageError("--logical flags observed cell (" + std::to_string(i + 1) + ", " +
                                         data.names()[static_cast<std::size_t>(j)] + ")");
                    }
                    mask.set_logical(i, j);
                }
            }
        }
        data = data.with_mask(mask);
    }
    for (std::size_t k = 1; k <= static_cast<std::size_t>(cfg.m); ++k) {
        detail::require_distinct("--out", o.out + ".imp" + std::to_string(k) + ".csv", {o.data, o.ignore, o.logical});
    }

    const auto result = fcs_impute(data, cfg);
    const auto paths = write_completed(o.out, result);
    if (!result.imputed_columns.empty()) {
        const auto diag = chain_diagnostics(result);
        auto f = detail::open_out(o.out + ".diag.csv");
        write_diagnostics_csv(f, diag, data.names());
        auto g = detail::open_out(o.out + ".spread.csv");
        write_spread_csv(g, diag, data.names());
    }
    auto man = detail::open_out(o.out + ".manifest.txt");
    man << "verb = impute\n"
        << "version = smlab " << smlab_version << '\n'
        << "data = " << o.data << '\n'
        << "method = " << to_string(cfg.method) << '\n'
        << "m = " << cfg.m << '\n'
        << "maxit = " << cfg.maxit << '\n'
        << "donors = " << cfg.donors << '\n'
        << "ridge = " << format_double(cfg.ridge) << '\n'
        << "seed = " << cfg.seed << '\n'
        << "ignore = " << o.ignore << '\n'
        << "logical = " << o.logical << '\n'
        << "model_fits = " << result.model_fits << '\n';
    out << "wrote " << paths.size() << " completed data sets with prefix " << o.out << '\n';
    return 0;
}

inline int run_experiment_verb(const Options& o, const std::string& config_path, std::ostream& out)
{
    if (o.id.empty()) {
        throw UsageError("--id is required (sim1, sim2 or sim3)");
    }
    if (o.out.empty()) {
        throw UsageError("--out is required");
    }
    ExperimentConfig cfg;
    cfg.id = o.id;
    cfg.seed = detail::parse_seed(o.seed);
    cfg.output_dir = o.out;
    if (!o.reps.empty()) cfg.n_replicates = detail::parse_number<int>("--reps", o.reps);
    if (!o.n.empty()) cfg.n = detail::parse_number<int>("--n", o.n);
    if (!o.n_test.empty()) cfg.n_test = detail::parse_number<int>("--n-test", o.n_test);
    if (!o.m.empty()) cfg.m = detail::parse_number<int>("--m", o.m);
    if (!o.maxit.empty()) cfg.maxit = detail::parse_list<int>("--maxit", o.maxit);
    if (!o.q.empty()) cfg.q_grid = detail::parse_list<double>("--q", o.q);
    if (!o.rho.empty()) cfg.rho = detail::parse_list<double>("--rho", o.rho);
    if (!o.structures.empty()) cfg.structures = detail::parse_names(o.structures);
    cfg.threads = detail::parse_number<unsigned>("--threads", o.threads);
    try {
        validate(cfg);
    } catch (const SpecError& e) {
        throw UsageError(e.what());
    }
    std::vector<std::pair<std::string, std::string>> extra;
    if (!config_path.empty()) {
        extra.emplace_back("config_file", config_path);
    }
    const auto files = run_experiment(cfg, extra);
    out << "wrote";
    for (const auto& f : files) {
        out << ' ' << (std::filesystem::path(o.out) / f).string();
    }
    out << '\n';
    return 0;
}

inline int run_export_graph(const Options& o, std::ostream& out)
{
    detail::require_file("--spec", o.spec);
    detail::require_parent("--out", o.out);
    detail::require_distinct("--out", o.out, {o.spec});
    const auto spec = detail::load_spec(o.spec);
    auto f = detail::open_out(o.out);
    write_dot(f, spec);
    out << "wrote " << o.out << '\n';
    return 0;
}

/// Parses argv and runs the selected verb.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    std::vector<std::string> args(argv, argv + argc);
    std::string config_path;
    try {
        args = detail::expand_config(args, config_path);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }

    CLI::App app{"Structured missingness toolkit: simulate, classify and analyze missingness mechanisms, impute, "
                 "and run the simulation experiments.",
                 "smlab"};
    app.require_subcommand(1, 1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    Options o;

    auto* sim = app.add_subcommand("simulate", "Draw a missingness mask for a complete data set from a spec file");
    sim->add_option("--spec", o.spec, "mechanism spec file");
    sim->add_option("--data", o.data, "complete data CSV");
    sim->add_option("--seed", o.seed, "random seed (required)");
    sim->add_option("--out", o.out, "output mask CSV (1 = missing)");
    sim->add_option("--masked-data", o.masked_data, "optional CSV of the data with masked cells blanked");

    auto* cls = app.add_subcommand("classify", "Print the taxonomy label of a spec file");
    cls->add_option("--spec", o.spec, "mechanism spec file");
    cls->add_option("--out", o.out, "optional output file");

    auto* ana = app.add_subcommand("analyze", "Pattern summary and indicator dependence analysis");
    ana->add_option("--mask", o.mask, "mask CSV (1 = missing)");
    ana->add_option("--data", o.data, "data CSV with blank missing cells (adds the MCAR audit)");
    ana->add_option("--ordering", o.ordering, "file listing the temporal column order");
    ana->add_option("--alpha", o.alpha, "significance level (default 0.01)");
    ana->add_option("--out", o.out, "optional pairwise report CSV");

    auto* imp = app.add_subcommand("impute", "Multiple imputation by chained equations");
    imp->add_option("--data", o.data, "data CSV with blank missing cells");
    imp->add_option("--method", o.method, "norm or pmm (default pmm)");
    imp->add_option("--m", o.m, "number of imputations (default 5)");
    imp->add_option("--maxit", o.maxit, "sweeps per chain (default 5)");
    imp->add_option("--donors", o.donors, "pmm donor pool size (default 5)");
    imp->add_option("--ridge", o.ridge, "ridge penalty (default 1e-05)");
    imp->add_option("--ignore", o.ignore, "file of 0/1 row flags; 1 rows are imputed but not used for fitting");
    imp->add_option("--logical", o.logical, "mask CSV of logically missing cells (never imputed)");
    imp->add_option("--seed", o.seed, "random seed (required)");
    imp->add_option("--out", o.out, "output prefix");
    imp->add_option("--threads", o.threads, "worker threads (default 1)");

    auto* exp = app.add_subcommand("experiment", "Run a simulation experiment and write its CSVs");
    exp->add_option("--id", o.id, "sim1, sim2 or sim3");
    exp->add_option("--reps", o.reps, "replicates (default 200)");
    exp->add_option("--seed", o.seed, "base seed (required)");
    exp->add_option("--out", o.out, "output directory");
    exp->add_option("--n", o.n, "rows per replicate (training rows for sim1)");
    exp->add_option("--n-test", o.n_test, "sim1 test rows");
    exp->add_option("--m", o.m, "imputations (default 5)");
    exp->add_option("--maxit", o.maxit, "comma-separated sweep counts");
    exp->add_option("--q", o.q, "comma-separated q grid");
    exp->add_option("--rho", o.rho, "comma-separated correlations (sim1)");
    exp->add_option("--structures", o.structures, "comma-separated builtin structures (sim1)");
    exp->add_option("--threads", o.threads, "worker threads (default 1)");
    exp->footer("Flags may also come from --config FILE (key = value lines); explicit flags win.");

    auto* gra = app.add_subcommand("export-graph", "Write the mechanism dependency graph as Graphviz DOT");
    gra->add_option("--spec", o.spec, "mechanism spec file");
    gra->add_option("--out", o.out, "output .dot file");

    std::vector<const char*> cargs;
    for (const auto& a : args) {
        cargs.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed()) return run_simulate(o, out);
        if (cls->parsed()) return run_classify(o, out);
        if (ana->parsed()) return run_analyze(o, out);
        if (imp->parsed()) return run_impute(o, out);
        if (exp->parsed()) return run_experiment_verb(o, config_path, out);
        if (gra->parsed()) return run_export_graph(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const SpecError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return 2;
    }
    err << app.help();
    return 1;
}

} // namespace smlab::cli
