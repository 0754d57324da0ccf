#pragma once

// Numeric table with per-cell missingness, plus pattern extraction over masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "smlab/errors.hpp"

namespace smlab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using BitMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

inline void check_permutation(const std::vector<int>& perm, Index p, const char* what)
{
    if (static_cast<Index>(perm.size()) != p) {
        throw SpecError(std::string(what) + ": expected a permutation of length " + std::to_string(p) +
                        ", got length " + std::to_string(perm.size()));
    }
    std::vector<bool> seen(perm.size(), false);
    for (int v : perm) {
        if (v < 0 || v >= p || seen[v]) {
            throw SpecError(std::string(what) + ": not a permutation of 0.." + std::to_string(p - 1));
        }
        seen[v] = true;
    }
}

inline std::vector<int> identity_order(Index p)
{
    std::vector<int> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    return order;
}

} // namespace detail

/// Missingness indicator matrix M (1 = missing). Cells may additionally be
/// flagged as logically missing: values that cannot exist and must never be
/// imputed. Logical cells are always a subset of the missing cells.
class MissMask {
public:
    MissMask() = default;

    MissMask(Index rows, Index cols)
        : bits_(BitMatrix::Zero(rows, cols)), logical_(BitMatrix::Zero(rows, cols))
    {}

    explicit MissMask(BitMatrix bits) : MissMask(std::move(bits), BitMatrix{}) {}

    MissMask(BitMatrix bits, BitMatrix logical) : bits_(std::move(bits)), logical_(std::move(logical))
    {
        if (logical_.size() == 0) {
            logical_ = BitMatrix::Zero(bits_.rows(), bits_.cols());
        }
        if (logical_.rows() != bits_.rows() || logical_.cols() != bits_.cols()) {
            throw SpecError("MissMask: logical flags do not match mask dimensions");
        }
        for (Index j = 0; j < bits_.cols(); ++j) {
            for (Index i = 0; i < bits_.rows(); ++i) {
                if (bits_(i, j) > 1 || logical_(i, j) > 1) {
                    throw SpecError("MissMask: entries must be 0 or 1");
                }
                if (logical_(i, j) && !bits_(i, j)) {
                    throw SpecError("MissMask: logical cell (" + std::to_string(i) + "," + std::to_string(j) +
                                    ") is not flagged missing");
                }
            }
        }
    }

    Index rows() const noexcept { return bits_.rows(); }
    Index cols() const noexcept { return bits_.cols(); }

    bool missing(Index i, Index j) const { return bits_(i, j) != 0; }
    bool logical(Index i, Index j) const { return logical_(i, j) != 0; }

    void set(Index i, Index j, bool is_missing)
    {
        bits_(i, j) = is_missing ? 1 : 0;
        if (!is_missing) {
            logical_(i, j) = 0;
        }
    }

    void set_logical(Index i, Index j)
    {
        bits_(i, j) = 1;
        logical_(i, j) = 1;
    }

    const BitMatrix& bits() const noexcept { return bits_; }
    const BitMatrix& logical_bits() const noexcept { return logical_; }

    Index column_missing_count(Index j) const { return bits_.col(j).cast<Index>().sum(); }
    Index row_missing_count(Index i) const { return bits_.row(i).cast<Index>().sum(); }
    Index missing_count() const { return bits_.cast<Index>().sum(); }

    double column_rate(Index j) const
    {
        return rows() == 0 ? 0.0 : static_cast<double>(column_missing_count(j)) / static_cast<double>(rows());
    }

    double overall_rate() const
    {
        return bits_.size() == 0 ? 0.0 : static_cast<double>(missing_count()) / static_cast<double>(bits_.size());
    }

    bool any_missing() const { return missing_count() > 0; }

    MissMask select_rows(const std::vector<Index>& rows_to_keep) const
    {
        MissMask out(static_cast<Index>(rows_to_keep.size()), cols());
        for (std::size_t r = 0; r < rows_to_keep.size(); ++r) {
            out.bits_.row(static_cast<Index>(r)) = bits_.row(rows_to_keep[r]);
            out.logical_.row(static_cast<Index>(r)) = logical_.row(rows_to_keep[r]);
        }
        return out;
    }

    friend bool operator==(const MissMask& a, const MissMask& b)
    {
        return a.bits_ == b.bits_ && a.logical_ == b.logical_;
    }

private:
    BitMatrix bits_;
    BitMatrix logical_;
};

/// n x p table of reals with a missingness mask. Missing cells hold a NaN
/// sentinel that is only reachable through the fill/observed accessors.
class DataMatrix {
public:
    DataMatrix() = default;

    DataMatrix(MatrixXd values, MissMask mask, std::vector<std::string> names,
               std::optional<std::vector<int>> ordering = std::nullopt)
        : values_(std::move(values)), mask_(std::move(mask)), names_(std::move(names)), ordering_(std::move(ordering))
    {
        if (mask_.rows() != values_.rows() || mask_.cols() != values_.cols()) {
            throw SpecError("DataMatrix: mask is " + std::to_string(mask_.rows()) + "x" +
                            std::to_string(mask_.cols()) + " but values are " + std::to_string(values_.rows()) +
                            "x" + std::to_string(values_.cols()));
        }
        if (static_cast<Index>(names_.size()) != values_.cols()) {
            throw SpecError("DataMatrix: " + std::to_string(names_.size()) + " column names for " +
                            std::to_string(values_.cols()) + " columns");
        }
        if (ordering_) {
            detail::check_permutation(*ordering_, values_.cols(), "DataMatrix ordering");
        }
        for (Index j = 0; j < values_.cols(); ++j) {
            for (Index i = 0; i < values_.rows(); ++i) {
                if (mask_.missing(i, j)) {
                    values_(i, j) = std::numeric_limits<double>::quiet_NaN();
                } else if (!std::isfinite(values_(i, j))) {
                    throw SpecError("DataMatrix: non-finite observed value at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
                }
            }
        }
    }

    static DataMatrix complete(MatrixXd values, std::vector<std::string> names)
    {
        MissMask mask(values.rows(), values.cols());
        return DataMatrix(std::move(values), std::move(mask), std::move(names));
    }

    static std::vector<std::string> default_names(Index p, const std::string& prefix = "X")
    {
        std::vector<std::string> names;
        for (Index j = 0; j < p; ++j) {
            names.push_back(prefix + std::to_string(j + 1));
        }
        return names;
    }

    Index rows() const noexcept { return values_.rows(); }
    Index cols() const noexcept { return values_.cols(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const MissMask& mask() const noexcept { return mask_; }
    const std::optional<std::vector<int>>& ordering() const noexcept { return ordering_; }

    /// Declared temporal order, or storage order when none was declared.
    std::vector<int> effective_ordering() const
    {
        return ordering_ ? *ordering_ : detail::identity_order(cols());
    }

    bool is_missing(Index i, Index j) const { return mask_.missing(i, j); }

    std::optional<double> observed(Index i, Index j) const
    {
        if (mask_.missing(i, j)) {
            return std::nullopt;
        }
        return values_(i, j);
    }

    double at(Index i, Index j) const
    {
        if (mask_.missing(i, j)) {
            throw SpecError("DataMatrix: read of missing cell (" + std::to_string(i) + "," + std::to_string(j) + ")");
        }
        return values_(i, j);
    }

    bool is_complete() const { return !mask_.any_missing(); }

    /// Copy of the values with every missing cell replaced by `fill`.
    MatrixXd filled(double fill) const
    {
        MatrixXd out = values_;
        for (Index j = 0; j < cols(); ++j) {
            for (Index i = 0; i < rows(); ++i) {
                if (mask_.missing(i, j)) {
                    out(i, j) = fill;
                }
            }
        }
        return out;
    }

    /// Values of a complete table. Throws if any cell is missing.
    const MatrixXd& complete_values() const
    {
        if (!is_complete()) {
            throw SpecError("DataMatrix: complete values requested but the table has missing cells");
        }
        return values_;
    }

    std::vector<double> observed_column(Index j) const
    {
        std::vector<double> out;
        for (Index i = 0; i < rows(); ++i) {
            if (!mask_.missing(i, j)) {
                out.push_back(values_(i, j));
            }
        }
        return out;
    }

    /// Same values with a new mask imposed. Only valid on a complete table or
    /// when the new mask does not reveal previously missing cells.
    DataMatrix with_mask(MissMask mask) const
    {
        if (mask.rows() != rows() || mask.cols() != cols()) {
            throw SpecError("DataMatrix::with_mask: dimension mismatch");
        }
        for (Index j = 0; j < cols(); ++j) {
            for (Index i = 0; i < rows(); ++i) {
                if (mask_.missing(i, j) && !mask.missing(i, j)) {
                    throw SpecError("DataMatrix::with_mask: mask reveals missing cell (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
                }
            }
        }
        return DataMatrix(values_, std::move(mask), names_, ordering_);
    }

    DataMatrix with_ordering(std::vector<int> ordering) const
    {
        return DataMatrix(values_, mask_, names_, std::move(ordering));
    }

    DataMatrix select_rows(const std::vector<Index>& rows_to_keep) const
    {
        MatrixXd v(static_cast<Index>(rows_to_keep.size()), cols());
        for (std::size_t r = 0; r < rows_to_keep.size(); ++r) {
            v.row(static_cast<Index>(r)) = values_.row(rows_to_keep[r]);
        }
        return DataMatrix(std::move(v), mask_.select_rows(rows_to_keep), names_, ordering_);
    }

    DataMatrix select_cols(const std::vector<Index>& cols_to_keep) const
    {
        const auto q = static_cast<Index>(cols_to_keep.size());
        MatrixXd v(rows(), q);
        BitMatrix b(rows(), q);
        BitMatrix l(rows(), q);
        std::vector<std::string> nm;
        for (Index c = 0; c < q; ++c) {
            v.col(c) = values_.col(cols_to_keep[c]);
            b.col(c) = mask_.bits().col(cols_to_keep[c]);
            l.col(c) = mask_.logical_bits().col(cols_to_keep[c]);
            nm.push_back(names_[cols_to_keep[c]]);
        }
        return DataMatrix(std::move(v), MissMask(std::move(b), std::move(l)), std::move(nm));
    }

private:
    MatrixXd values_;
    MissMask mask_;
    std::vector<std::string> names_;
    std::optional<std::vector<int>> ordering_;
};

struct ObservedCell {
    Index row;
    Index col;
    double value;
};

struct CellIndex {
    Index row;
    Index col;
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct ObsMisSplit {
    std::vector<ObservedCell> observed;
    std::vector<CellIndex> missing;
};

/// Partition every cell into the observed list (with values) or the missing list.
inline ObsMisSplit split_obs_mis(const DataMatrix& d)
{
    ObsMisSplit out;
    for (Index i = 0; i < d.rows(); ++i) {
        for (Index j = 0; j < d.cols(); ++j) {
            if (auto v = d.observed(i, j)) {
                out.observed.push_back({i, j, *v});
            } else {
                out.missing.push_back({i, j});
            }
        }
    }
    return out;
}

struct PatternSummary {
    /// Distinct row patterns (1 = missing) with counts, in lexicographic order.
    std::vector<std::pair<std::vector<std::uint8_t>, Index>> distinct_patterns;
    std::vector<double> per_column_rate;
    bool monotone = true;
    /// Column pairs (j < k) never observed together in any row.
    std::vector<std::pair<int, int>> file_matching_pairs;
};

/// True iff the row's missing cells form a suffix of `ordering`.
inline bool row_is_monotone(const MissMask& m, Index i, const std::vector<int>& ordering)
{
    bool seen_missing = false;
    for (int j : ordering) {
        if (m.missing(i, j)) {
            seen_missing = true;
        } else if (seen_missing) {
            return false;
        }
    }
    return true;
}

inline PatternSummary pattern_summary(const MissMask& m, const std::optional<std::vector<int>>& ordering = std::nullopt)
{
    const Index n = m.rows();
    const Index p = m.cols();
    std::vector<int> order = ordering ? *ordering : detail::identity_order(p);
    detail::check_permutation(order, p, "pattern_summary ordering");

    PatternSummary s;
    std::map<std::vector<std::uint8_t>, Index> patterns;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(p));
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) {
            row[static_cast<std::size_t>(j)] = m.missing(i, j) ? 1 : 0;
        }
        ++patterns[row];
        if (s.monotone && !row_is_monotone(m, i, order)) {
            s.monotone = false;
        }
    }
    s.distinct_patterns.assign(patterns.begin(), patterns.end());

    for (Index j = 0; j < p; ++j) {
        s.per_column_rate.push_back(m.column_rate(j));
    }

    for (Index j = 0; j < p; ++j) {
        for (Index k = j + 1; k < p; ++k) {
            bool jointly_observed = false;
            for (Index i = 0; i < n && !jointly_observed; ++i) {
                jointly_observed = !m.missing(i, j) && !m.missing(i, k);
            }
            if (!jointly_observed) {
                s.file_matching_pairs.emplace_back(static_cast<int>(j), static_cast<int>(k));
            }
        }
    }
    return s;
}

struct DisplayOrder {
    std::vector<Index> rows;
    std::vector<Index> cols;
};

/// Row and column permutations by increasing missing count (stable on ties).
/// Sorting an unstructured mask this way is what produces apparent structure.
inline DisplayOrder sort_for_display(const MissMask& m)
{
    DisplayOrder out;
    out.rows.resize(static_cast<std::size_t>(m.rows()));
    out.cols.resize(static_cast<std::size_t>(m.cols()));
    std::iota(out.rows.begin(), out.rows.end(), Index{0});
    std::iota(out.cols.begin(), out.cols.end(), Index{0});

    std::vector<Index> row_counts(out.rows.size());
    for (Index i = 0; i < m.rows(); ++i) {
        row_counts[static_cast<std::size_t>(i)] = m.row_missing_count(i);
    }
    std::vector<Index> col_counts(out.cols.size());
    for (Index j = 0; j < m.cols(); ++j) {
        col_counts[static_cast<std::size_t>(j)] = m.column_missing_count(j);
    }
    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [&](Index a, Index b) { return row_counts[a] < row_counts[b]; });
    std::stable_sort(out.cols.begin(), out.cols.end(),
                     [&](Index a, Index b) { return col_counts[a] < col_counts[b]; });
    return out;
}

} // namespace smlab
