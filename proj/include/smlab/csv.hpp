#pragma once

// CSV I/O: header row of column names, empty field = missing, period-decimal
// reals written in shortest round-trip form.

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "smlab/format.hpp"
#include "smlab/tabular.hpp"

namespace smlab {

namespace detail {

inline std::vector<std::string> read_header(std::istream& in, const std::string& source)
{
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(source + ": empty file, expected a header row");
    }
    auto names = split(chomp(line), ',');
    for (const auto& nm : names) {
        if (nm.empty()) {
            throw FormatError(source + ": empty column name in header");
        }
    }
    return names;
}

inline void write_header(std::ostream& out, const std::vector<std::string>& names)
{
    for (std::size_t j = 0; j < names.size(); ++j) {
        out << (j ? "," : "") << names[j];
    }
    out << '\n';
}

} // namespace detail

inline DataMatrix read_csv(std::istream& in, const std::string& source = "csv")
{
    auto names = detail::read_header(in, source);
    const auto p = static_cast<Index>(names.size());
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<std::uint8_t>> miss;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        auto view = chomp(line);
        if (view.empty()) {
            continue;
        }
        auto fields = split(view, ',');
        if (static_cast<Index>(fields.size()) != p) {
            throw FormatError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(p) +
                              " fields, got " + std::to_string(fields.size()));
        }
        std::vector<double> r(static_cast<std::size_t>(p), 0.0);
        std::vector<std::uint8_t> m(static_cast<std::size_t>(p), 0);
        for (Index j = 0; j < p; ++j) {
            const auto& f = fields[static_cast<std::size_t>(j)];
            if (f.empty()) {
                m[static_cast<std::size_t>(j)] = 1;
            } else {
                r[static_cast<std::size_t>(j)] =
                    parse_double(f, source + ":" + std::to_string(line_no) + " column " + names[j]);
            }
        }
        rows.push_back(std::move(r));
        miss.push_back(std::move(m));
    }
    const auto n = static_cast<Index>(rows.size());
    MatrixXd values(n, p);
    BitMatrix bits(n, p);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) {
            values(i, j) = rows[i][j];
            bits(i, j) = miss[i][j];
        }
    }
    return DataMatrix(std::move(values), MissMask(std::move(bits)), std::move(names));
}

inline DataMatrix read_csv_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open '" + path + "' for reading");
    }
    return read_csv(in, path);
}

/// Writes a matrix; NaN cells are written as empty fields.
inline void write_matrix_csv(std::ostream& out, const MatrixXd& values, const std::vector<std::string>& names)
{
    detail::write_header(out, names);
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) {
            if (j) {
                out << ',';
            }
            if (!std::isnan(values(i, j))) {
                out << format_double(values(i, j));
            }
        }
        out << '\n';
    }
}

inline void write_csv(std::ostream& out, const DataMatrix& d)
{
    write_matrix_csv(out, d.filled(std::numeric_limits<double>::quiet_NaN()), d.names());
}

inline void write_mask_csv(std::ostream& out, const MissMask& m, const std::vector<std::string>& names)
{
    detail::write_header(out, names);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            out << (j ? "," : "") << (m.missing(i, j) ? '1' : '0');
        }
        out << '\n';
    }
}

struct NamedMask {
    MissMask mask;
    std::vector<std::string> names;
};

inline NamedMask read_mask_csv(std::istream& in, const std::string& source = "mask")
{
    auto names = detail::read_header(in, source);
    const auto p = static_cast<Index>(names.size());
    std::vector<std::vector<std::uint8_t>> rows;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        auto view = chomp(line);
        if (view.empty()) {
            continue;
        }
        auto fields = split(view, ',');
        if (static_cast<Index>(fields.size()) != p) {
            throw FormatError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(p) + " fields");
        }
        std::vector<std::uint8_t> r;
        for (const auto& f : fields) {
            if (f != "0" && f != "1") {
                throw FormatError(source + ":" + std::to_string(line_no) + ": mask entries must be 0 or 1, got '" +
                                  f + "'");
            }
            r.push_back(f == "1" ? 1 : 0);
        }
        rows.push_back(std::move(r));
    }
    BitMatrix bits(static_cast<Index>(rows.size()), p);
    for (Index i = 0; i < bits.rows(); ++i) {
        for (Index j = 0; j < p; ++j) {
            bits(i, j) = rows[i][j];
        }
    }
    return {MissMask(std::move(bits)), std::move(names)};
}

} // namespace smlab
