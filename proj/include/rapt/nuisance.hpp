#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rapt/basis.hpp"
#include "rapt/core_data.hpp"
#include "rapt/error.hpp"
#include "rapt/linalg.hpp"
#include "rapt/parallel.hpp"
#include "rapt/rng.hpp"

namespace rapt {

// ---------------------------------------------------------------------------
// Outcome regressions
// ---------------------------------------------------------------------------

enum class LearnerKind { ols, ridge, lasso };

enum class FeatureMap { raw, interactions_squares };

struct OutcomeLearnerSpec {
    LearnerKind kind = LearnerKind::lasso;
    FeatureMap feature_map = FeatureMap::interactions_squares;
    std::vector<double> grid = default_grid();
    int cv_folds = 10;

    static std::vector<double> default_grid() {
        std::vector<double> g;
        for (int i = 0; i < 20; ++i) g.push_back(std::pow(10.0, -4.0 + 5.0 * i / 19.0));
        return g;
    }

    void validate() const {
        if (grid.empty()) throw ConfigError("InvalidLearnerSpec", "penalty grid must be non-empty");
        for (double v : grid)
            if (v < 0.0) throw ConfigError("InvalidLearnerSpec", "penalty values must be >= 0");
        if (cv_folds < 2) throw ConfigError("InvalidLearnerSpec", "inner cv folds must be >= 2");
    }
};

inline Eigen::Index expanded_dim(Eigen::Index d, FeatureMap map) {
    if (map == FeatureMap::raw) return d;
    return d + d + d * (d - 1) / 2;  // x_j, x_j^2, x_i x_j (i < j)
}

inline void expand_row(const Eigen::VectorXd& x, FeatureMap map, Eigen::Ref<Eigen::VectorXd> out) {
    const Eigen::Index d = x.size();
    out.head(d) = x;
    if (map == FeatureMap::raw) return;
    out.segment(d, d) = x.cwiseProduct(x);
    Eigen::Index pos = 2 * d;
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i + 1; j < d; ++j) out[pos++] = x[i] * x[j];
}

inline Eigen::MatrixXd expand_features(const Eigen::MatrixXd& x, FeatureMap map) {
    Eigen::MatrixXd out(x.rows(), expanded_dim(x.cols(), map));
    Eigen::VectorXd row(out.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        expand_row(x.row(i).transpose(), map, row);
        out.row(i) = row.transpose();
    }
    return out;
}

/// Linear predictor on the expanded feature map, coefficients on the
/// original (unstandardized) scale.
struct LinearModel {
    double intercept = 0.0;
    Eigen::VectorXd coef;
    FeatureMap feature_map = FeatureMap::raw;
    double selected_penalty = std::numeric_limits<double>::quiet_NaN();  // NaN for ols

    double predict(const Eigen::VectorXd& x) const {
        Eigen::VectorXd f(expanded_dim(x.size(), feature_map));
        expand_row(x, feature_map, f);
        return intercept + coef.dot(f);
    }

    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& x) const {
        Eigen::VectorXd out(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i).transpose());
        return out;
    }
};

namespace detail {

struct Standardized {
    Eigen::MatrixXd z;       // centered/scaled columns (constant columns zeroed)
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;   // 0 marks a dropped constant column
    double y_mean = 0.0;
};

inline Standardized standardize(const Eigen::MatrixXd& f, const Eigen::VectorXd& y) {
    Standardized s;
    const Eigen::Index n = f.rows(), p = f.cols();
    s.mean = f.colwise().mean();
    s.scale.resize(p);
    s.z.resize(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const Eigen::VectorXd c = f.col(j).array() - s.mean[j];
        const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(n));
        s.scale[j] = sd > 1e-12 ? sd : 0.0;
        s.z.col(j) = s.scale[j] > 0.0 ? (c / s.scale[j]).eval() : Eigen::VectorXd::Zero(n);
    }
    s.y_mean = y.mean();
    return s;
}

inline LinearModel unstandardize(const Standardized& s, const Eigen::VectorXd& b, FeatureMap map) {
    LinearModel m;
    m.feature_map = map;
    m.coef.resize(b.size());
    for (Eigen::Index j = 0; j < b.size(); ++j) m.coef[j] = s.scale[j] > 0.0 ? b[j] / s.scale[j] : 0.0;
    m.intercept = s.y_mean - m.coef.dot(s.mean);
    return m;
}

inline double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

/// Cyclic coordinate descent with covariance updates on standardized
/// features; stops when the coefficient sup-norm change drops below 1e-7.
inline Eigen::VectorXd lasso_path_fit(const Eigen::MatrixXd& gram, const Eigen::VectorXd& corr,
                                      double lambda, Eigen::VectorXd warm) {
    const Eigen::Index p = corr.size();
    Eigen::VectorXd b = std::move(warm);
    Eigen::VectorXd gb = gram * b;
    for (int sweep = 0; sweep < 100000; ++sweep) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double diag = gram(j, j);
            if (diag <= 1e-14) continue;
            const double rho = corr[j] - (gb[j] - diag * b[j]);
            const double next = soft_threshold(rho, lambda) / diag;
            const double delta = next - b[j];
            if (delta != 0.0) {
                gb += gram.col(j) * delta;
                b[j] = next;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        if (max_delta < 1e-7) break;
    }
    return b;
}

inline Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& gram, const Eigen::VectorXd& corr, double lambda) {
    Eigen::MatrixXd m = gram;
    m.diagonal().array() += lambda;
    return m.ldlt().solve(corr);
}

/// Fits one penalized model at every grid value (descending, warm-started
/// for lasso) and returns coefficients indexed like `grid`.
inline std::vector<Eigen::VectorXd> penalized_path(LearnerKind kind, const Eigen::MatrixXd& z,
                                                   const Eigen::VectorXd& yc,
                                                   const std::vector<double>& grid) {
    const double n = static_cast<double>(z.rows());
    const Eigen::MatrixXd gram = z.transpose() * z / n;
    const Eigen::VectorXd corr = z.transpose() * yc / n;

    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return grid[i] > grid[j]; });

    std::vector<Eigen::VectorXd> out(grid.size());
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(z.cols());
    for (std::size_t idx : order) {
        if (kind == LearnerKind::lasso) {
            warm = lasso_path_fit(gram, corr, grid[idx], warm);
            out[idx] = warm;
        } else {
            out[idx] = ridge_fit(gram, corr, grid[idx]);
        }
    }
    return out;
}

inline LinearModel fit_ols(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, FeatureMap map) {
    Eigen::MatrixXd design(features.rows(), features.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(features.cols()) = features;
    Eigen::VectorXd sol = design.colPivHouseholderQr().solve(y);
    LinearModel m;
    m.feature_map = map;
    m.intercept = sol[0];
    m.coef = sol.tail(features.cols());
    return m;
}

}  // namespace detail

/// Fits one arm's outcome regression on the given raw-covariate rows.
/// Penalized learners pick the penalty by inner K-fold cross validation on
/// squared prediction error (ties resolved toward the smallest penalty).
inline LinearModel fit_outcome_model(const Eigen::MatrixXd& x_rows, const Eigen::VectorXd& y_rows,
                                     const OutcomeLearnerSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Eigen::MatrixXd features = expand_features(x_rows, spec.feature_map);
    if (spec.kind == LearnerKind::ols) return detail::fit_ols(features, y_rows, spec.feature_map);

    detail::Standardized s = detail::standardize(features, y_rows);
    const Eigen::VectorXd yc = y_rows.array() - s.y_mean;

    std::size_t chosen = 0;
    if (spec.grid.size() > 1) {
        const std::size_t n = static_cast<std::size_t>(x_rows.rows());
        const int folds = std::max(2, std::min<int>(spec.cv_folds, static_cast<int>(n / 2)));
        std::vector<int> fold_of(n);
        {
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            CounterRng rng(derive_seed(seed, 0x63766cULL));  // "cvl" substream
            rng.shuffle(perm);
            for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
        }
        std::vector<double> cv_error(spec.grid.size(), 0.0);
        for (int f = 0; f < folds; ++f) {
            std::vector<Eigen::Index> train, held;
            for (std::size_t i = 0; i < n; ++i)
                (fold_of[i] == f ? held : train).push_back(static_cast<Eigen::Index>(i));
            if (train.empty() || held.empty()) continue;
            Eigen::MatrixXd ft(static_cast<Eigen::Index>(train.size()), features.cols());
            Eigen::VectorXd yt(static_cast<Eigen::Index>(train.size()));
            for (std::size_t r = 0; r < train.size(); ++r) {
                ft.row(static_cast<Eigen::Index>(r)) = features.row(train[r]);
                yt[static_cast<Eigen::Index>(r)] = y_rows[train[r]];
            }
            detail::Standardized st = detail::standardize(ft, yt);
            const std::vector<Eigen::VectorXd> path =
                detail::penalized_path(spec.kind, st.z, (yt.array() - st.y_mean).matrix(), spec.grid);
            for (std::size_t g = 0; g < spec.grid.size(); ++g) {
                LinearModel m = detail::unstandardize(st, path[g], spec.feature_map);
                for (Eigen::Index i : held) {
                    const double pred = m.intercept + m.coef.dot(features.row(i));
                    cv_error[g] += (y_rows[i] - pred) * (y_rows[i] - pred);
                }
            }
        }
        std::vector<std::size_t> by_value(spec.grid.size());
        std::iota(by_value.begin(), by_value.end(), std::size_t{0});
        std::sort(by_value.begin(), by_value.end(),
                  [&](std::size_t i, std::size_t j) { return spec.grid[i] < spec.grid[j]; });
        chosen = by_value[0];
        for (std::size_t g : by_value)
            if (cv_error[g] < cv_error[chosen]) chosen = g;
    }

    const std::vector<Eigen::VectorXd> path =
        detail::penalized_path(spec.kind, s.z, yc, {spec.grid[chosen]});
    LinearModel m = detail::unstandardize(s, path[0], spec.feature_map);
    m.selected_penalty = spec.grid[chosen];
    return m;
}

// ---------------------------------------------------------------------------
// Balancing weights and the cross-fitted nuisance bundle
// ---------------------------------------------------------------------------

struct BalancingSpec {
    BasisSpec basis;  // dictionary b(x) over the full covariates
    std::vector<double> lambda_grid = default_lambda_grid();
    int cv_folds = 10;

    static std::vector<double> default_lambda_grid() {
        std::vector<double> g;
        for (int i = 1; i <= 50; ++i) g.push_back(0.1 * i);
        return g;
    }

    void validate() const {
        if (lambda_grid.empty()) throw ConfigError("InvalidBalancingSpec", "lambda grid must be non-empty");
        for (double v : lambda_grid)
            if (v < 0.0) throw ConfigError("InvalidBalancingSpec", "lambda values must be >= 0");
        if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end()))
            throw ConfigError("InvalidBalancingSpec", "lambda grid must be ascending");
        if (cv_folds < 2) throw ConfigError("InvalidBalancingSpec", "cv folds must be >= 2");
    }
};

enum class OmegaMode { balancing, known_propensity };

struct GramDiagnostics {
    double condition = 0.0;
    bool used_pseudo_inverse = false;
};

struct FoldNuisance {
    LinearModel gamma1, gamma0;
    Eigen::VectorXd a1, a0;  // balancing coefficients on b(x)
    double lambda1 = std::numeric_limits<double>::quiet_NaN();
    double lambda0 = std::numeric_limits<double>::quiet_NaN();
    GramDiagnostics gram1, gram0;
};

/// Cross-fitted nuisances: fold-k models are trained only on rows outside
/// fold k and queried only for rows inside it. Carries its own learner
/// recipe so downstream steps can refit with the identical procedure.
struct NuisanceFit {
    FoldAssignment folds;
    OutcomeLearnerSpec outcome_spec;
    std::vector<FoldNuisance> per_fold;  // index k-1
    OmegaMode mode = OmegaMode::balancing;
    std::shared_ptr<const Basis> balance_basis;
    std::function<double(const Eigen::VectorXd&)> propensity;  // known-propensity mode

    double gamma1_at(int k, const Eigen::VectorXd& x) const { return per_fold[static_cast<std::size_t>(k - 1)].gamma1.predict(x); }
    double gamma0_at(int k, const Eigen::VectorXd& x) const { return per_fold[static_cast<std::size_t>(k - 1)].gamma0.predict(x); }
    double tau_at(int k, const Eigen::VectorXd& x) const { return gamma1_at(k, x) - gamma0_at(k, x); }

    double omega1_at(int k, const Eigen::VectorXd& x) const {
        if (mode == OmegaMode::known_propensity) return 2.0 * tau_at(k, x) / propensity(x);
        return per_fold[static_cast<std::size_t>(k - 1)].a1.dot(balance_basis->eval_point(x));
    }
    double omega0_at(int k, const Eigen::VectorXd& x) const {
        if (mode == OmegaMode::known_propensity) return 2.0 * tau_at(k, x) / (1.0 - propensity(x));
        return per_fold[static_cast<std::size_t>(k - 1)].a0.dot(balance_basis->eval_point(x));
    }
};

namespace detail {

inline void gather_arm(const Dataset& data, const std::vector<Eigen::Index>& rows, int arm,
                       Eigen::MatrixXd& x_out, Eigen::VectorXd& y_out) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i : rows)
        if (data.d()[static_cast<std::size_t>(i)] == arm) keep.push_back(i);
    x_out.resize(static_cast<Eigen::Index>(keep.size()), data.dim_x());
    y_out.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
        x_out.row(static_cast<Eigen::Index>(r)) = data.x().row(keep[r]);
        y_out[static_cast<Eigen::Index>(r)] = data.y()[keep[r]];
    }
}

inline void require_arm_size(Eigen::Index rows, const OutcomeLearnerSpec& spec, Eigen::Index dim_x,
                             int fold, int arm) {
    const Eigen::Index needed =
        spec.kind == LearnerKind::ols ? expanded_dim(dim_x, spec.feature_map) + 1 : 2;
    if (rows < needed)
        throw DataError("InsufficientArm", "fold " + std::to_string(fold) + ", arm " + std::to_string(arm) +
                                               ": " + std::to_string(rows) + " rows, need " +
                                               std::to_string(needed));
}

inline LinearModel fit_arm(const Dataset& data, const std::vector<Eigen::Index>& rows, int arm,
                           const OutcomeLearnerSpec& spec, std::uint64_t seed, int fold) {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    gather_arm(data, rows, arm, x, y);
    require_arm_size(x.rows(), spec, data.dim_x(), fold, arm);
    return fit_outcome_model(x, y, spec, seed);
}

struct BalanceMoments {
    Eigen::MatrixXd gram1, gram0;  // mean[D b b'], mean[(1-D) b b']
    Eigen::VectorXd target;        // mean[2 (g1 - g0) b]
};

inline BalanceMoments balance_moments(const Dataset& data, const std::vector<Eigen::Index>& rows,
                                      const Basis& basis, const LinearModel& gamma1,
                                      const LinearModel& gamma0) {
    const Eigen::Index dim = basis.dimension();
    BalanceMoments m;
    m.gram1 = Eigen::MatrixXd::Zero(dim, dim);
    m.gram0 = Eigen::MatrixXd::Zero(dim, dim);
    m.target = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i : rows) {
        const Eigen::VectorXd x = data.x().row(i).transpose();
        const Eigen::VectorXd b = basis.eval_point(x);
        if (data.d()[static_cast<std::size_t>(i)] == 1)
            m.gram1.selfadjointView<Eigen::Lower>().rankUpdate(b, 1.0);
        else
            m.gram0.selfadjointView<Eigen::Lower>().rankUpdate(b, 1.0);
        m.target += 2.0 * (gamma1.predict(x) - gamma0.predict(x)) * b;
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    m.gram1 = m.gram1.selfadjointView<Eigen::Lower>();
    m.gram0 = m.gram0.selfadjointView<Eigen::Lower>();
    m.gram1 *= inv;
    m.gram0 *= inv;
    m.target *= inv;
    return m;
}

/// a = (G G + lambda G)^- G P (Tikhonov-penalized minimum distance).
inline Eigen::VectorXd tikhonov_coef(const Eigen::MatrixXd& gram, const Eigen::VectorXd& target,
                                     double lambda, GramDiagnostics* diag = nullptr) {
    Eigen::MatrixXd m = gram * gram + lambda * gram;
    SymSolveInfo info;
    Eigen::VectorXd a = pinv_solve_sym(m, gram * target, &info);
    if (diag) {
        diag->condition = info.condition;
        diag->used_pseudo_inverse = info.truncated;
    }
    return a;
}

}  // namespace detail

/// Fits gamma_1 on treated rows and gamma_0 on control rows of each fold
/// complement. Randomness (inner CV splits) derives from the fold seed.
inline NuisanceFit fit_outcome_regressions(const Dataset& data, const FoldAssignment& folds,
                                           const OutcomeLearnerSpec& spec, int threads = 1) {
    spec.validate();
    NuisanceFit fit;
    fit.folds = folds;
    fit.outcome_spec = spec;
    fit.per_fold.resize(static_cast<std::size_t>(folds.k_folds));
    parallel_for(static_cast<std::size_t>(folds.k_folds), threads, [&](std::size_t ki) {
        const int k = static_cast<int>(ki) + 1;
        const std::vector<Eigen::Index> rows = folds.complement_indices(k);
        FoldNuisance& fold = fit.per_fold[ki];
        fold.gamma1 = detail::fit_arm(data, rows, 1, spec, derive_seed(folds.seed, static_cast<std::uint64_t>(k), 1), k);
        fold.gamma0 = detail::fit_arm(data, rows, 0, spec, derive_seed(folds.seed, static_cast<std::uint64_t>(k), 2), k);
    });
    return fit;
}

/// Penalty selection for fold k's balancing weights: the fold complement is
/// split into inner folds, the outcome regressions are refit per inner fold
/// with the same procedure that produced them, and each candidate penalty is
/// scored by the out-of-sample moment-prediction error. Smallest penalty
/// wins ties.
inline std::pair<double, double> cv_select_lambda(const Dataset& data, const FoldAssignment& folds,
                                                  int k, const BalancingSpec& spec,
                                                  const NuisanceFit& gammas, const Basis& basis) {
    spec.validate();
    if (spec.lambda_grid.size() == 1)  // nothing to compare
        return {spec.lambda_grid[0], spec.lambda_grid[0]};
    const std::vector<Eigen::Index> comp = folds.complement_indices(k);
    if (comp.size() < 20)
        throw ConfigError("InsufficientData", "fold complement has " + std::to_string(comp.size()) +
                                                  " rows; balancing cross validation needs at least 20");
    const int inner_folds = std::min<int>(spec.cv_folds, static_cast<int>(comp.size() / 2));
    std::vector<int> inner_of(comp.size());
    {
        std::vector<std::size_t> perm(comp.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        CounterRng rng(derive_seed(folds.seed, static_cast<std::uint64_t>(k), 0x62616cULL));
        rng.shuffle(perm);
        for (std::size_t i = 0; i < perm.size(); ++i)
            inner_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(inner_folds));
    }

    std::vector<double> tcv1(spec.lambda_grid.size(), 0.0), tcv0(spec.lambda_grid.size(), 0.0);
    for (int j = 0; j < inner_folds; ++j) {
        std::vector<Eigen::Index> train, held;
        for (std::size_t i = 0; i < comp.size(); ++i)
            (inner_of[i] == j ? held : train).push_back(comp[i]);

        const std::uint64_t seed1 = derive_seed(folds.seed, static_cast<std::uint64_t>(k), 0x100ULL + static_cast<std::uint64_t>(j));
        const std::uint64_t seed0 = derive_seed(folds.seed, static_cast<std::uint64_t>(k), 0x200ULL + static_cast<std::uint64_t>(j));
        const LinearModel g1 = detail::fit_arm(data, train, 1, gammas.outcome_spec, seed1, k);
        const LinearModel g0 = detail::fit_arm(data, train, 0, gammas.outcome_spec, seed0, k);
        const detail::BalanceMoments moments = detail::balance_moments(data, train, basis, g1, g0);

        for (std::size_t g = 0; g < spec.lambda_grid.size(); ++g) {
            const Eigen::VectorXd a1 = detail::tikhonov_coef(moments.gram1, moments.target, spec.lambda_grid[g]);
            const Eigen::VectorXd a0 = detail::tikhonov_coef(moments.gram0, moments.target, spec.lambda_grid[g]);
            for (Eigen::Index i : held) {
                const Eigen::VectorXd x = data.x().row(i).transpose();
                const Eigen::VectorXd b = basis.eval_point(x);
                const double p1 = g1.predict(x), p0 = g0.predict(x);
                const double d = static_cast<double>(data.d()[static_cast<std::size_t>(i)]);
                const double e1 = d * a1.dot(b) * data.y()[i] - 2.0 * (p1 - p0) * p1;
                const double e0 = (1.0 - d) * a0.dot(b) * data.y()[i] - 2.0 * (p1 - p0) * p0;
                tcv1[g] += e1 * e1;
                tcv0[g] += e0 * e0;
            }
        }
    }
    std::size_t best1 = 0, best0 = 0;
    for (std::size_t g = 1; g < spec.lambda_grid.size(); ++g) {
        if (tcv1[g] < tcv1[best1]) best1 = g;
        if (tcv0[g] < tcv0[best0]) best0 = g;
    }
    return {spec.lambda_grid[best1], spec.lambda_grid[best0]};
}

/// Minimum-distance balancing weights with a Tikhonov penalty for every
/// fold, with the penalty chosen per fold by cv_select_lambda. The basis
/// b(x) is resolved once on the full covariate sample.
inline void fit_balancing_weights(const Dataset& data, const FoldAssignment& folds,
                                  const BalancingSpec& spec, NuisanceFit& fit, int threads = 1) {
    spec.validate();
    fit.mode = OmegaMode::balancing;
    fit.balance_basis = std::make_shared<Basis>(Basis::resolve(spec.basis, data.x()));
    parallel_for(static_cast<std::size_t>(folds.k_folds), threads, [&](std::size_t ki) {
        const int k = static_cast<int>(ki) + 1;
        FoldNuisance& fold = fit.per_fold[ki];
        auto [l1, l0] = cv_select_lambda(data, folds, k, spec, fit, *fit.balance_basis);
        fold.lambda1 = l1;
        fold.lambda0 = l0;
        const std::vector<Eigen::Index> comp = folds.complement_indices(k);
        const detail::BalanceMoments moments =
            detail::balance_moments(data, comp, *fit.balance_basis, fold.gamma1, fold.gamma0);
        fold.a1 = detail::tikhonov_coef(moments.gram1, moments.target, l1, &fold.gram1);
        fold.a0 = detail::tikhonov_coef(moments.gram0, moments.target, l0, &fold.gram0);
    });
}

/// Known-propensity shortcut: omega_1 = 2 tau / pi, omega_0 = 2 tau / (1 - pi),
/// skipping the minimum-distance step entirely.
inline void set_known_propensity(NuisanceFit& fit, std::function<double(const Eigen::VectorXd&)> pi) {
    fit.mode = OmegaMode::known_propensity;
    fit.propensity = std::move(pi);
}

/// Out-of-fold debiased weights and CATE estimates, plus diagnostics on the
/// (possibly negative) weights.
struct DebiasedWeights {
    Eigen::VectorXd xi;
    Eigen::VectorXd tau;
    double frac_negative = 0.0;
    double min_xi = 0.0;
    double max_xi = 0.0;
};

inline DebiasedWeights compute_debiased_weights(const Dataset& data, const FoldAssignment& folds,
                                                const NuisanceFit& fit) {
    DebiasedWeights w;
    const Eigen::Index n = data.n();
    w.xi.resize(n);
    w.tau.resize(n);
    long negatives = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int k = folds.fold_of[static_cast<std::size_t>(i)];
        const Eigen::VectorXd x = data.x().row(i).transpose();
        const double g1 = fit.gamma1_at(k, x);
        const double g0 = fit.gamma0_at(k, x);
        const double tau = g1 - g0;
        const double d = static_cast<double>(data.d()[static_cast<std::size_t>(i)]);
        const double correction = d * fit.omega1_at(k, x) * (data.y()[i] - g1) -
                                  (1.0 - d) * fit.omega0_at(k, x) * (data.y()[i] - g0);
        w.tau[i] = tau;
        w.xi[i] = tau * tau + correction;
        if (w.xi[i] < 0.0) ++negatives;
    }
    w.frac_negative = n > 0 ? static_cast<double>(negatives) / static_cast<double>(n) : 0.0;
    w.min_xi = n > 0 ? w.xi.minCoeff() : 0.0;
    w.max_xi = n > 0 ? w.xi.maxCoeff() : 0.0;
    return w;
}

}  // namespace rapt
