#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rapt/error.hpp"
#include "rapt/rng.hpp"

namespace rapt {

/// One observation: outcome, binary treatment, full covariate vector.
struct Sample {
    double y = 0.0;
    int d = 0;
    Eigen::VectorXd x;
};

/// The training sample, stored column-wise. `w_idx` selects the covariate
/// columns the policy is allowed to condition on (may be empty: the policy
/// is then a single population-wide fraction).
class Dataset {
public:
    Dataset() = default;

    Dataset(Eigen::VectorXd y, std::vector<int> d, Eigen::MatrixXd x, std::vector<int> w_idx)
        : y_(std::move(y)), d_(std::move(d)), x_(std::move(x)), w_idx_(std::move(w_idx)) {
        if (y_.size() != x_.rows() || static_cast<Eigen::Index>(d_.size()) != y_.size())
            throw DataError("DimensionMismatch", "y, d and x must have the same number of rows");
        std::vector<bool> seen(static_cast<std::size_t>(x_.cols()), false);
        for (int j : w_idx_) {
            if (j < 0 || j >= x_.cols())
                throw DataError("DimensionMismatch", "w index " + std::to_string(j) + " out of range");
            if (seen[static_cast<std::size_t>(j)])
                throw DataError("DimensionMismatch", "duplicate w index " + std::to_string(j));
            seen[static_cast<std::size_t>(j)] = true;
        }
        for (Eigen::Index i = 0; i < y_.size(); ++i) {
            if (d_[static_cast<std::size_t>(i)] != 0 && d_[static_cast<std::size_t>(i)] != 1)
                throw DataError("NonBinaryTreatment",
                                "treatment must be 0 or 1 (row " + std::to_string(i + 1) + ")");
        }
    }

    Eigen::Index n() const { return y_.size(); }
    Eigen::Index dim_x() const { return x_.cols(); }
    Eigen::Index dim_w() const { return static_cast<Eigen::Index>(w_idx_.size()); }

    const Eigen::VectorXd& y() const { return y_; }
    const std::vector<int>& d() const { return d_; }
    const Eigen::MatrixXd& x() const { return x_; }
    const std::vector<int>& w_idx() const { return w_idx_; }

    Sample row(Eigen::Index i) const {
        return Sample{y_[i], d_[static_cast<std::size_t>(i)], x_.row(i).transpose()};
    }

    /// n x d_W matrix of the policy-usable covariates.
    Eigen::MatrixXd w_matrix() const {
        Eigen::MatrixXd w(n(), dim_w());
        for (Eigen::Index j = 0; j < dim_w(); ++j) w.col(j) = x_.col(w_idx_[static_cast<std::size_t>(j)]);
        return w;
    }

    Eigen::VectorXd w_row(Eigen::Index i) const {
        Eigen::VectorXd w(dim_w());
        for (Eigen::Index j = 0; j < dim_w(); ++j) w[j] = x_(i, w_idx_[static_cast<std::size_t>(j)]);
        return w;
    }

private:
    Eigen::VectorXd y_;
    std::vector<int> d_;
    Eigen::MatrixXd x_;
    std::vector<int> w_idx_;
};

/// Deterministic K-fold partition. fold_of uses 1-based fold labels.
struct FoldAssignment {
    int k_folds = 0;
    std::uint64_t seed = 0;
    std::vector<int> fold_of;

    std::size_t n() const { return fold_of.size(); }

    std::vector<Eigen::Index> fold_indices(int k) const {
        std::vector<Eigen::Index> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] == k) out.push_back(static_cast<Eigen::Index>(i));
        return out;
    }

    std::vector<Eigen::Index> complement_indices(int k) const {
        std::vector<Eigen::Index> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] != k) out.push_back(static_cast<Eigen::Index>(i));
        return out;
    }
};

/// Splits a uniform random permutation of [0, n) into K contiguous blocks.
/// The first (n mod K) folds take the extra row, so sizes differ by at most
/// one and the assignment is a pure function of (n, k, seed).
inline FoldAssignment partition_folds(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2 || n < 2 * static_cast<std::size_t>(k))
        throw ConfigError("InvalidFoldCount",
                          "need k >= 2 and n >= 2k (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    CounterRng rng(derive_seed(seed, 0x666f6c64ULL));  // "fold" substream
    rng.shuffle(perm);

    FoldAssignment folds;
    folds.k_folds = k;
    folds.seed = seed;
    folds.fold_of.assign(n, 0);
    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (int f = 1; f <= k; ++f) {
        std::size_t size = base + (static_cast<std::size_t>(f) <= extra ? 1 : 0);
        for (std::size_t j = 0; j < size; ++j) folds.fold_of[perm[pos++]] = f;
    }
    return folds;
}

/// Column mapping for CSV ingestion. `w` must be a subset of `x`.
struct CsvSchema {
    std::string y;
    std::string d;
    std::vector<std::string> x;
    std::vector<std::string> w;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    for (auto& cell : cells) {
        std::size_t b = cell.find_first_not_of(" \t");
        std::size_t e = cell.find_last_not_of(" \t");
        cell = (b == std::string::npos) ? std::string{} : cell.substr(b, e - b + 1);
    }
    return cells;
}

inline double parse_number(const std::string& cell, std::size_t row) {
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end)
        throw DataError("ParseError", "non-numeric cell '" + cell + "' in row " + std::to_string(row));
    return value;
}

}  // namespace detail

/// Reads a header-first CSV into a Dataset, keeping file order. Treatment
/// values must be exactly 0 or 1; any non-numeric cell is rejected with its
/// (1-based, header excluded) row number.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("ParseError", "cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("ParseError", "empty file: " + path);
    const std::vector<std::string> header = detail::split_csv_line(line);

    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("MissingColumn", name);
        return static_cast<std::size_t>(it - header.begin());
    };

    const std::size_t y_col = column(schema.y);
    const std::size_t d_col = column(schema.d);
    std::vector<std::size_t> x_cols;
    for (const auto& name : schema.x) x_cols.push_back(column(name));
    std::vector<int> w_idx;
    for (const auto& name : schema.w) {
        auto it = std::find(schema.x.begin(), schema.x.end(), name);
        if (it == schema.x.end()) throw DataError("MissingColumn", name + " (w columns must be among x columns)");
        w_idx.push_back(static_cast<int>(it - schema.x.begin()));
    }

    std::vector<double> ys;
    std::vector<int> ds;
    std::vector<double> xs;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("ParseError", "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                              " cells, expected " + std::to_string(header.size()));
        const double yv = detail::parse_number(cells[y_col], row);
        const double dv = detail::parse_number(cells[d_col], row);
        if (dv != 0.0 && dv != 1.0)
            throw DataError("NonBinaryTreatment", "row " + std::to_string(row));
        ys.push_back(yv);
        ds.push_back(static_cast<int>(dv));
        for (std::size_t c : x_cols) xs.push_back(detail::parse_number(cells[c], row));
    }

    const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
    const Eigen::Index dx = static_cast<Eigen::Index>(x_cols.size());
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
    Eigen::MatrixXd x(n, dx);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < dx; ++j) x(i, j) = xs[static_cast<std::size_t>(i * dx + j)];
    return Dataset(std::move(y), std::move(ds), std::move(x), std::move(w_idx));
}

/// Inverse of load_csv (17 significant digits, so numeric round-trips are
/// exact).
inline void write_csv(const Dataset& data, const std::string& path, const CsvSchema& schema) {
    if (static_cast<Eigen::Index>(schema.x.size()) != data.dim_x())
        throw DataError("DimensionMismatch", "schema.x size does not match dataset");
    std::ofstream out(path);
    if (!out) throw DataError("ParseError", "cannot write file: " + path);
    out << schema.y << "," << schema.d;
    for (const auto& name : schema.x) out << "," << name;
    out << "\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
    };
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        put(data.y()[i]);
        out << "," << data.d()[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < data.dim_x(); ++j) {
            out << ",";
            put(data.x()(i, j));
        }
        out << "\n";
    }
}

}  // namespace rapt
