#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rapt/error.hpp"
#include "rapt/parallel.hpp"

namespace rapt {

enum class BasisKind { bspline, bracket };

enum class KnotRule { quantile, uniform };

/// Per-dimension settings of the policy basis.
struct BasisDimSpec {
    int degree = 3;
    int degrees_of_freedom = 5;          // bspline: basis count; >= degree + 1
    KnotRule knots = KnotRule::quantile;
    std::optional<double> lo;            // domain; resolved from data if unset
    std::optional<double> hi;
    std::vector<double> cuts;            // bracket: ascending cut points
};

/// User-facing description of the sieve policy class: tensor-product cubic
/// B-splines by default, or indicator cells ("brackets") for discrete
/// conditioning variables. Zero dimensions degenerate to the intercept-only
/// class (a single population-wide fraction).
struct BasisSpec {
    BasisKind kind = BasisKind::bspline;
    std::vector<BasisDimSpec> dims;
    bool clamp = true;  // clamp out-of-domain points into [lo, hi] instead of erroring

    void validate() const {
        for (const auto& d : dims) {
            if (kind == BasisKind::bspline) {
                if (d.degree < 0) throw ConfigError("InvalidBasisSpec", "degree must be >= 0");
                if (d.degrees_of_freedom < d.degree + 1)
                    throw ConfigError("InvalidBasisSpec", "degrees_of_freedom must be >= degree + 1");
            } else {
                if (!std::is_sorted(d.cuts.begin(), d.cuts.end()))
                    throw ConfigError("InvalidBasisSpec", "bracket cuts must be ascending");
            }
        }
    }
};

/// Counts clamped evaluation points (shared across threads).
struct ClampStats {
    std::atomic<long> clamped{0};
};

namespace detail {

/// Non-zero B-spline basis values at x by the Cox-de Boor triangular
/// recurrence. `knots` is a clamped knot vector; returns the span start so
/// that basis functions [span, span + degree] are the non-zero ones.
inline int bspline_nonzero(const std::vector<double>& knots, int degree, double x,
                           Eigen::VectorXd& values) {
    const int order = degree + 1;
    const int n_basis = static_cast<int>(knots.size()) - order;
    // Knot span: largest i with knots[i] <= x < knots[i+1]; the right
    // boundary belongs to the last non-degenerate span.
    int span;
    if (x >= knots[static_cast<std::size_t>(n_basis)]) {
        span = n_basis - 1;
    } else {
        span = static_cast<int>(std::upper_bound(knots.begin() + degree, knots.begin() + n_basis + 1, x) -
                                knots.begin()) - 1;
    }
    values.setZero(order);
    values[0] = 1.0;
    std::vector<double> left(static_cast<std::size_t>(order)), right(static_cast<std::size_t>(order));
    for (int j = 1; j <= degree; ++j) {
        left[static_cast<std::size_t>(j)] = x - knots[static_cast<std::size_t>(span + 1 - j)];
        right[static_cast<std::size_t>(j)] = knots[static_cast<std::size_t>(span + j)] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
            const double temp = values[r] / denom;
            values[r] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
            saved = left[static_cast<std::size_t>(j - r)] * temp;
        }
        values[j] = saved;
    }
    return span - degree;
}

}  // namespace detail

/// A basis with resolved knots/cuts, ready to evaluate at arbitrary points.
/// Immutable once built; evaluation is pure.
class Basis {
public:
    /// Resolves a spec against the data the basis will be used on
    /// (n x d_W matrix). Quantile knots and unset domain bounds come from
    /// these values.
    static Basis resolve(const BasisSpec& spec, const Eigen::MatrixXd& w_values) {
        spec.validate();
        if (w_values.cols() != static_cast<Eigen::Index>(spec.dims.size()))
            throw DataError("DimensionMismatch", "w has " + std::to_string(w_values.cols()) +
                                                     " columns, spec has " + std::to_string(spec.dims.size()));
        Basis basis;
        basis.kind_ = spec.kind;
        basis.clamp_ = spec.clamp;
        basis.dim_count_.reserve(spec.dims.size());
        for (std::size_t d = 0; d < spec.dims.size(); ++d) {
            const auto& ds = spec.dims[d];
            if (spec.kind == BasisKind::bracket) {
                basis.cuts_.push_back(ds.cuts);
                basis.dim_count_.push_back(static_cast<int>(ds.cuts.size()) + 1);
                basis.degree_.push_back(0);
                basis.lo_.push_back(0.0);
                basis.hi_.push_back(0.0);
                continue;
            }
            Eigen::VectorXd col = w_values.col(static_cast<Eigen::Index>(d));
            double lo = ds.lo ? *ds.lo : (col.size() > 0 ? col.minCoeff() : 0.0);
            double hi = ds.hi ? *ds.hi : (col.size() > 0 ? col.maxCoeff() : 1.0);
            if (!(lo < hi)) {
                if (lo == hi) hi = lo + 1.0;  // degenerate column; any knot layout works
                else throw ConfigError("InvalidBasisSpec", "domain lo must be < hi");
            }
            basis.knots_.push_back(make_knots(ds, lo, hi, col));
            basis.dim_count_.push_back(ds.degrees_of_freedom);
            basis.degree_.push_back(ds.degree);
            basis.lo_.push_back(lo);
            basis.hi_.push_back(hi);
        }
        basis.d_p_ = 1;
        for (int c : basis.dim_count_) basis.d_p_ *= c;
        return basis;
    }

    BasisKind kind() const { return kind_; }
    int dimension() const { return d_p_; }
    int input_dims() const { return static_cast<int>(dim_count_.size()); }
    const std::vector<double>& knots(int dim) const { return knots_[static_cast<std::size_t>(dim)]; }
    const std::vector<double>& cuts(int dim) const { return cuts_[static_cast<std::size_t>(dim)]; }
    double domain_lo(int dim) const { return lo_[static_cast<std::size_t>(dim)]; }
    double domain_hi(int dim) const { return hi_[static_cast<std::size_t>(dim)]; }

    /// p(w) for a single point.
    Eigen::VectorXd eval_point(const Eigen::VectorXd& w, ClampStats* stats = nullptr) const {
        if (w.size() != input_dims())
            throw DataError("DimensionMismatch", "point has wrong dimension");
        Eigen::VectorXd out = Eigen::VectorXd::Zero(d_p_);
        if (kind_ == BasisKind::bracket) {
            int flat = 0, stride = 1;
            for (int d = 0; d < input_dims(); ++d) {
                const auto& cuts = cuts_[static_cast<std::size_t>(d)];
                // Bins (-inf, c1], (c1, c2], ..., (cK, inf).
                const int cell = static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), w[d]) - cuts.begin());
                flat += cell * stride;
                stride *= dim_count_[static_cast<std::size_t>(d)];
            }
            out[flat] = 1.0;
            return out;
        }
        // Tensor-product B-spline: accumulate over the non-zero block.
        std::vector<Eigen::VectorXd> vals(static_cast<std::size_t>(input_dims()));
        std::vector<int> start(static_cast<std::size_t>(input_dims()));
        for (int d = 0; d < input_dims(); ++d) {
            double x = w[d];
            const double lo = lo_[static_cast<std::size_t>(d)], hi = hi_[static_cast<std::size_t>(d)];
            if (x < lo || x > hi) {
                if (!clamp_)
                    throw DataError("DomainViolation",
                                    "w[" + std::to_string(d) + "]=" + std::to_string(x) + " outside [" +
                                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
                x = std::clamp(x, lo, hi);
                if (stats) stats->clamped.fetch_add(1, std::memory_order_relaxed);
            }
            start[static_cast<std::size_t>(d)] =
                detail::bspline_nonzero(knots_[static_cast<std::size_t>(d)],
                                        degree_[static_cast<std::size_t>(d)], x, vals[static_cast<std::size_t>(d)]);
        }
        std::vector<int> idx(static_cast<std::size_t>(input_dims()), 0);
        for (;;) {
            double v = 1.0;
            int flat = 0, stride = 1;
            for (int d = 0; d < input_dims(); ++d) {
                v *= vals[static_cast<std::size_t>(d)][idx[static_cast<std::size_t>(d)]];
                flat += (start[static_cast<std::size_t>(d)] + idx[static_cast<std::size_t>(d)]) * stride;
                stride *= dim_count_[static_cast<std::size_t>(d)];
            }
            out[flat] += v;
            int d = 0;
            for (; d < input_dims(); ++d) {
                if (++idx[static_cast<std::size_t>(d)] <= degree_[static_cast<std::size_t>(d)]) break;
                idx[static_cast<std::size_t>(d)] = 0;
            }
            if (d == input_dims()) break;
        }
        if (input_dims() == 0) out[0] = 1.0;
        return out;
    }

    /// n x d_p matrix of rows p(W_i)'.
    Eigen::MatrixXd eval_matrix(const Eigen::MatrixXd& w_values, ClampStats* stats = nullptr,
                                int threads = 1) const {
        Eigen::MatrixXd m(w_values.rows(), d_p_);
        parallel_for(static_cast<std::size_t>(w_values.rows()), threads, [&](std::size_t i) {
            m.row(static_cast<Eigen::Index>(i)) =
                eval_point(w_values.row(static_cast<Eigen::Index>(i)).transpose(), stats).transpose();
        });
        return m;
    }

    /// Diagnostic upper bound on the dimension of the squared policy space
    /// {f^2 : f in span p}: per dimension (degree+1)*interior + 2*degree + 1
    /// for splines, the cell count itself for brackets.
    int squared_space_dim_bound() const {
        int bound = 1;
        for (int d = 0; d < input_dims(); ++d) {
            if (kind_ == BasisKind::bracket) {
                bound *= dim_count_[static_cast<std::size_t>(d)];
            } else {
                const int deg = degree_[static_cast<std::size_t>(d)];
                const int interior = dim_count_[static_cast<std::size_t>(d)] - deg - 1;
                bound *= (deg + 1) * interior + 2 * deg + 1;
            }
        }
        return bound;
    }

private:
    static std::vector<double> make_knots(const BasisDimSpec& ds, double lo, double hi,
                                          const Eigen::VectorXd& col) {
        const int degree = ds.degree;
        const int interior = ds.degrees_of_freedom - degree - 1;
        std::vector<double> knots;
        knots.insert(knots.end(), static_cast<std::size_t>(degree + 1), lo);
        if (interior > 0) {
            std::vector<double> inner;
            if (ds.knots == KnotRule::uniform || col.size() == 0) {
                for (int j = 1; j <= interior; ++j)
                    inner.push_back(lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(interior + 1));
            } else {
                std::vector<double> sorted(col.data(), col.data() + col.size());
                std::sort(sorted.begin(), sorted.end());
                for (int j = 1; j <= interior; ++j) {
                    const double q = static_cast<double>(j) / static_cast<double>(interior + 1);
                    const double pos = q * static_cast<double>(sorted.size() - 1);
                    const std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
                    const std::size_t i1 = std::min(i0 + 1, sorted.size() - 1);
                    const double frac = pos - std::floor(pos);
                    double v = sorted[i0] * (1.0 - frac) + sorted[i1] * frac;
                    inner.push_back(std::clamp(v, lo, hi));
                }
            }
            for (std::size_t j = 0; j + 1 < inner.size(); ++j)
                if (!(inner[j] < inner[j + 1]))
                    throw DataError("DegenerateKnots", "coincident interior knots; use uniform placement or fewer dof");
            if (!(lo < inner.front()) || !(inner.back() < hi))
                throw DataError("DegenerateKnots", "interior knot on the domain boundary");
            knots.insert(knots.end(), inner.begin(), inner.end());
        }
        knots.insert(knots.end(), static_cast<std::size_t>(degree + 1), hi);
        return knots;
    }

    BasisKind kind_ = BasisKind::bspline;
    bool clamp_ = true;
    int d_p_ = 1;
    std::vector<int> dim_count_;
    std::vector<int> degree_;
    std::vector<double> lo_, hi_;
    std::vector<std::vector<double>> knots_;  // bspline, per dim
    std::vector<std::vector<double>> cuts_;   // bracket, per dim
};

/// Basis evaluations for a sample plus the reported sup-norm bound
/// sup_i ||p(W_i)||_2 (<= 1 for B-splines by partition of unity).
struct BasisMatrix {
    Eigen::MatrixXd values;
    int d_p = 0;
    double zeta_p = 0.0;
};

inline BasisMatrix build_basis(const Basis& basis, const Eigen::MatrixXd& w_values,
                               ClampStats* stats = nullptr, int threads = 1) {
    BasisMatrix out;
    out.values = basis.eval_matrix(w_values, stats, threads);
    out.d_p = basis.dimension();
    out.zeta_p = 0.0;
    for (Eigen::Index i = 0; i < out.values.rows(); ++i)
        out.zeta_p = std::max(out.zeta_p, out.values.row(i).norm());
    return out;
}

inline BasisMatrix build_basis(const BasisSpec& spec, const Eigen::MatrixXd& w_values,
                               ClampStats* stats = nullptr, int threads = 1) {
    return build_basis(Basis::resolve(spec, w_values), w_values, stats, threads);
}

/// beta' p(w), untrimmed.
inline double evaluate_policy(const Eigen::VectorXd& beta, const Basis& basis, const Eigen::VectorXd& w,
                              ClampStats* stats = nullptr) {
    if (beta.size() != basis.dimension())
        throw DataError("DimensionMismatch", "beta has " + std::to_string(beta.size()) +
                                                 " coefficients, basis dimension is " +
                                                 std::to_string(basis.dimension()));
    return beta.dot(basis.eval_point(w, stats));
}

}  // namespace rapt
