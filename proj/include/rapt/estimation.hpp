#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rapt/basis.hpp"
#include "rapt/core_data.hpp"
#include "rapt/error.hpp"
#include "rapt/linalg.hpp"
#include "rapt/nuisance.hpp"
#include "rapt/population.hpp"

namespace rapt {

enum class EstimateMethod { debiased, plugin };

/// Weighted-least-squares sieve policy fit: beta solves A beta = B with
/// A = mean[weight * p p'], B = mean[weight * p * 1{tau_hat >= 0}].
struct SievePolicyEstimate {
    Eigen::VectorXd beta;
    std::shared_ptr<const Basis> basis;
    Eigen::MatrixXd a_hat;
    Eigen::VectorXd b_hat;
    double min_eig_a_hat = 0.0;
    double max_eig_a_hat = 0.0;
    bool used_pseudo_inverse = false;
    EstimateMethod method = EstimateMethod::debiased;

    double evaluate_untrimmed(const Eigen::VectorXd& w, ClampStats* stats = nullptr) const {
        return evaluate_policy(beta, *basis, w, stats);
    }
};

namespace detail {

inline SievePolicyEstimate solve_wls(const Eigen::MatrixXd& p_rows, const Eigen::VectorXd& weights,
                                     const Eigen::VectorXd& treat_indicator,
                                     std::shared_ptr<const Basis> basis, EstimateMethod method) {
    const Eigen::Index n = p_rows.rows();
    const Eigen::Index d = p_rows.cols();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd p = p_rows.row(i).transpose();
        a.selfadjointView<Eigen::Lower>().rankUpdate(p, weights[i]);
        b += weights[i] * treat_indicator[i] * p;
    }
    a = a.selfadjointView<Eigen::Lower>();
    a /= static_cast<double>(n);
    b /= static_cast<double>(n);

    SymSolveInfo info;
    SievePolicyEstimate est;
    est.beta = pinv_solve_sym(a, b, &info);
    est.basis = std::move(basis);
    est.a_hat = std::move(a);
    est.b_hat = std::move(b);
    est.min_eig_a_hat = info.min_eig;
    est.max_eig_a_hat = info.max_eig;
    est.used_pseudo_inverse = info.truncated;
    est.method = method;
    return est;
}

}  // namespace detail

/// Debiased fit: weights are the cross-fitted xi, the response is
/// 1{tau_hat >= 0}. A non-positive-definite A is handled by the symmetric
/// Moore-Penrose pseudo-inverse and flagged, never a failure.
inline SievePolicyEstimate estimate_debiased(const Dataset& data, std::shared_ptr<const Basis> basis,
                                             const DebiasedWeights& weights) {
    if (weights.xi.size() != data.n())
        throw DataError("DimensionMismatch", "weights do not match the dataset");
    if (data.n() < basis->dimension())
        throw DataError("DimensionMismatch", "need n >= basis dimension");
    const Eigen::MatrixXd p_rows = basis->eval_matrix(data.w_matrix());
    Eigen::VectorXd treat(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) treat[i] = indicator_treat(weights.tau[i]);
    return detail::solve_wls(p_rows, weights.xi, treat, std::move(basis), EstimateMethod::debiased);
}

/// Plug-in fit: weights tau_hat^2 >= 0, so the normal matrix is positive
/// semidefinite by construction.
inline SievePolicyEstimate estimate_plugin(const Dataset& data, std::shared_ptr<const Basis> basis,
                                           const Eigen::VectorXd& tau_hat) {
    if (tau_hat.size() != data.n())
        throw DataError("DimensionMismatch", "tau_hat does not match the dataset");
    if (data.n() < basis->dimension())
        throw DataError("DimensionMismatch", "need n >= basis dimension");
    const Eigen::MatrixXd p_rows = basis->eval_matrix(data.w_matrix());
    Eigen::VectorXd treat(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) treat[i] = indicator_treat(tau_hat[i]);
    return detail::solve_wls(p_rows, tau_hat.cwiseProduct(tau_hat), treat, std::move(basis),
                             EstimateMethod::plugin);
}

/// Final decision rule: the sieve fit clamped into [0, 1].
struct TrimmedPolicy {
    SievePolicyEstimate inner;

    double evaluate(const Eigen::VectorXd& w, ClampStats* stats = nullptr) const {
        return std::clamp(inner.evaluate_untrimmed(w, stats), 0.0, 1.0);
    }
};

inline TrimmedPolicy trim(SievePolicyEstimate estimate) { return TrimmedPolicy{std::move(estimate)}; }

/// Empirical restricted singleton rule: per group, treat everyone iff the
/// group mean of xi * sgn(tau_hat) is nonnegative.
inline PolicyRule estimate_restricted(const Dataset& data, const DebiasedWeights& weights,
                                      const std::vector<std::string>& group_of_row,
                                      const std::vector<std::string>& expected_groups = {}) {
    if (static_cast<Eigen::Index>(group_of_row.size()) != data.n())
        throw DataError("DimensionMismatch", "grouping does not match the dataset");
    std::map<std::string, double> stat;
    for (Eigen::Index i = 0; i < data.n(); ++i)
        stat[group_of_row[static_cast<std::size_t>(i)]] += weights.xi[i] * sgn_treat(weights.tau[i]);
    for (const auto& g : expected_groups)
        if (!stat.count(g)) throw DataError("EmptyGroup", g);
    PolicyRule rule;
    for (const auto& [label, value] : stat) rule.set(label, value >= 0.0 ? 1.0 : 0.0);
    return rule;
}

/// Capacity-constrained empirical program on a bracket basis. The cells make
/// the objective separable, so the population KKT routine solves it with
/// p_j = n_j / n, a_j = mean(xi | cell j), b_j = mean(xi 1{tau_hat >= 0} | cell j).
/// Debiased weights can make a cell's a_j non-positive; the fit then falls
/// back to plug-in weights and says so.
struct CapacityEstimate {
    PolicyRule rule;
    double lambda = 0.0;
    bool binding = false;
    bool plugin_fallback = false;   // IndefiniteHessian: debiased weights rejected
    bool trimmed_above_one = false; // some cell solution exceeded 1 and was clamped
};

inline CapacityEstimate estimate_capacity_constrained(const Dataset& data, const Basis& basis,
                                                      const DebiasedWeights& weights, double t) {
    if (basis.kind() != BasisKind::bracket)
        throw ConfigError("InvalidBasisSpec", "the capacity program needs a bracket basis");
    if (!(t > 0.0) || !(t < 1.0)) throw ConfigError("InfeasibleCapacity", "capacity t must lie in (0, 1)");

    const Eigen::MatrixXd p_rows = basis.eval_matrix(data.w_matrix());
    const Eigen::Index cells = basis.dimension();

    CapacityEstimate out;
    auto build = [&](const Eigen::VectorXd& xi) {
        Eigen::VectorXd count = Eigen::VectorXd::Zero(cells);
        Eigen::VectorXd sum_xi = Eigen::VectorXd::Zero(cells);
        Eigen::VectorXd sum_pos = Eigen::VectorXd::Zero(cells);
        for (Eigen::Index i = 0; i < data.n(); ++i) {
            Eigen::Index cell;
            p_rows.row(i).maxCoeff(&cell);
            count[cell] += 1.0;
            sum_xi[cell] += xi[i];
            sum_pos[cell] += xi[i] * indicator_treat(weights.tau[i]);
        }
        std::vector<CapacityProblem::Entry> entries;
        bool indefinite = false;
        for (Eigen::Index j = 0; j < cells; ++j) {
            if (count[j] == 0.0) continue;  // unobserved cell: no mass, no decision
            CapacityProblem::Entry e;
            e.label = "cell" + std::to_string(j);
            e.p = count[j] / static_cast<double>(data.n());
            e.a = sum_xi[j] / count[j];
            e.b = sum_pos[j] / count[j];
            if (e.a < 0.0 || (e.a == 0.0 && e.b != 0.0)) indefinite = true;
            entries.push_back(e);
        }
        return std::pair{entries, indefinite};
    };

    auto [entries, indefinite] = build(weights.xi);
    if (indefinite) {
        out.plugin_fallback = true;
        auto rebuilt = build(weights.tau.cwiseProduct(weights.tau));
        entries = rebuilt.first;
    }

    CapacityProblem solved = capacity_optimal(CapacityProblem(std::move(entries), t, /*strict=*/false));
    out.lambda = solved.lambda;
    out.binding = solved.binding;
    for (std::size_t j = 0; j < solved.groups.size(); ++j) {
        double delta = solved.delta[j];
        if (delta > 1.0) {
            out.trimmed_above_one = true;
            delta = 1.0;
        }
        out.rule.set(solved.groups[j].label, delta);
    }
    return out;
}

/// Numerical health of a sieve fit: eigenvalue range of A, the negative-xi
/// share, and whether the pseudo-inverse fallback fired.
struct ConditioningReport {
    double min_eig = 0.0;
    double max_eig = 0.0;
    double frac_negative_xi = 0.0;
    bool used_pseudo_inverse = false;
    bool warning = false;
    double epsilon = 1e-6;
};

inline ConditioningReport conditioning_report(const SievePolicyEstimate& estimate,
                                              const DebiasedWeights* weights = nullptr,
                                              double epsilon = 1e-6) {
    ConditioningReport report;
    report.min_eig = estimate.min_eig_a_hat;
    report.max_eig = estimate.max_eig_a_hat;
    report.used_pseudo_inverse = estimate.used_pseudo_inverse;
    report.frac_negative_xi = weights ? weights->frac_negative : 0.0;
    report.epsilon = epsilon;
    report.warning = estimate.min_eig_a_hat < epsilon || estimate.used_pseudo_inverse;
    return report;
}

}  // namespace rapt
