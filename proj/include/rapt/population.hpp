#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "rapt/error.hpp"

namespace rapt {

/// Treat-on-ties convention used everywhere: sgn(0) := 1.
inline double sgn_treat(double tau) { return tau >= 0.0 ? 1.0 : -1.0; }
inline double indicator_treat(double tau) { return tau >= 0.0 ? 1.0 : 0.0; }

/// Welfare regret of fraction `delta` for a subgroup with effect `tau`:
/// tau * (1{tau >= 0} - delta). Nonnegative for delta in [0, 1].
inline double cell_regret(double tau, double delta) { return tau * (indicator_treat(tau) - delta); }

struct DgpCell {
    std::string w_id;
    std::string x_id;
    double mass = 0.0;
    double tau = 0.0;
};

/// Finite-support joint law of (W, X, tau(X)); supports exact population
/// computations. Groups keep first-appearance order for deterministic output.
class DiscreteDGP {
public:
    struct Group {
        std::string label;
        double mass = 0.0;
        std::vector<std::size_t> cells;
    };

    explicit DiscreteDGP(std::vector<DgpCell> cells) : cells_(std::move(cells)) {
        if (cells_.empty()) throw DataError("InvalidDgp", "a DGP needs at least one cell");
        double total = 0.0;
        std::map<std::string, std::size_t> group_of;
        std::map<std::string, std::string> w_of_x;
        for (std::size_t c = 0; c < cells_.size(); ++c) {
            const auto& cell = cells_[c];
            if (!(cell.mass > 0.0)) throw DataError("InvalidDgp", "cell mass must be > 0 (" + cell.x_id + ")");
            total += cell.mass;
            auto [it, fresh] = w_of_x.emplace(cell.x_id, cell.w_id);
            if (!fresh)
                throw DataError("InvalidDgp", "x_id '" + cell.x_id + "' appears more than once");
            auto g = group_of.find(cell.w_id);
            if (g == group_of.end()) {
                group_of.emplace(cell.w_id, groups_.size());
                groups_.push_back(Group{cell.w_id, cell.mass, {c}});
            } else {
                groups_[g->second].mass += cell.mass;
                groups_[g->second].cells.push_back(c);
            }
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw DataError("InvalidDgp", "cell masses sum to " + std::to_string(total) + ", expected 1");
        for (const auto& g : groups_) group_index_.emplace(g.label, &g - groups_.data());
    }

    const std::vector<DgpCell>& cells() const { return cells_; }
    const std::vector<Group>& groups() const { return groups_; }

    const Group& group(const std::string& w_id) const {
        auto it = group_index_.find(w_id);
        if (it == group_index_.end()) throw DataError("MissingGroup", w_id);
        return groups_[it->second];
    }

    /// E[f(tau) | W = w].
    template <typename F>
    double cond_mean(const std::string& w_id, F&& f) const {
        const Group& g = group(w_id);
        double acc = 0.0;
        for (std::size_t c : g.cells) acc += cells_[c].mass * f(cells_[c].tau);
        return acc / g.mass;
    }

private:
    std::vector<DgpCell> cells_;
    std::vector<Group> groups_;
    std::map<std::string, std::size_t> group_index_;
};

/// Tabular W-individualized rule: treated fraction per group label.
class PolicyRule {
public:
    PolicyRule() = default;
    explicit PolicyRule(std::map<std::string, double> values) : values_(std::move(values)) {}

    static PolicyRule constant(const DiscreteDGP& dgp, double delta) {
        std::map<std::string, double> v;
        for (const auto& g : dgp.groups()) v.emplace(g.label, delta);
        return PolicyRule(std::move(v));
    }

    double at(const std::string& w_id) const {
        auto it = values_.find(w_id);
        if (it == values_.end()) throw DataError("MissingGroup", w_id);
        return it->second;
    }

    void set(const std::string& w_id, double delta) { values_[w_id] = delta; }
    const std::map<std::string, double>& values() const { return values_; }

private:
    std::map<std::string, double> values_;
};

/// Per-cell regrets of a rule plus the derived aggregate measures.
class RegretProfile {
public:
    RegretProfile(std::vector<double> masses, std::vector<double> regrets)
        : masses_(std::move(masses)), regrets_(std::move(regrets)) {}

    const std::vector<double>& regrets() const { return regrets_; }
    const std::vector<double>& masses() const { return masses_; }

    double mean_regret() const {
        double acc = 0.0;
        for (std::size_t i = 0; i < regrets_.size(); ++i) acc += masses_[i] * regrets_[i];
        return acc;
    }

    /// E[Reg^alpha].
    double loss(double alpha) const {
        check_alpha(alpha);
        double acc = 0.0;
        for (std::size_t i = 0; i < regrets_.size(); ++i) acc += masses_[i] * std::pow(regrets_[i], alpha);
        return acc;
    }

    /// Equally distributed equivalent {E[Reg^alpha]}^{1/alpha}.
    double equally_distributed_equivalent(double alpha) const {
        return std::pow(loss(alpha), 1.0 / alpha);
    }

    /// {E[Reg^a]}^{1/a} / E[Reg] - 1; zero by convention when E[Reg] = 0.
    double atkinson_index(double alpha) const {
        check_alpha(alpha);
        const double mean = mean_regret();
        if (mean == 0.0) return 0.0;
        return equally_distributed_equivalent(alpha) / mean - 1.0;
    }

private:
    static void check_alpha(double alpha) {
        if (alpha < 1.0) throw ConfigError("InvalidAlpha", "alpha must be >= 1");
    }
    std::vector<double> masses_;
    std::vector<double> regrets_;
};

/// Per-cell regrets Reg(x, delta) = tau(x)[1{tau >= 0} - delta(w)].
/// Requires delta(w) in [0, 1] for every group.
inline RegretProfile regret(const DiscreteDGP& dgp, const PolicyRule& rule) {
    std::vector<double> masses, regrets;
    masses.reserve(dgp.cells().size());
    regrets.reserve(dgp.cells().size());
    for (const auto& cell : dgp.cells()) {
        const double delta = rule.at(cell.w_id);
        if (delta < 0.0 || delta > 1.0)
            throw DataError("InvalidRule", "rule value " + std::to_string(delta) + " outside [0, 1]");
        masses.push_back(cell.mass);
        regrets.push_back(cell_regret(cell.tau, delta));
    }
    return RegretProfile(std::move(masses), std::move(regrets));
}

/// E[Reg^alpha]; equals mean regret at alpha = 1.
inline double loss_alpha(const DiscreteDGP& dgp, const PolicyRule& rule, double alpha) {
    return regret(dgp, rule).loss(alpha);
}

inline double atkinson_index(const RegretProfile& profile, double alpha) {
    return profile.atkinson_index(alpha);
}

/// E[tau^2 (1{tau >= 0} - delta(w))^2], defined for any real delta (used by
/// the trimming comparison and excess-risk computations, where rules may
/// stray outside [0, 1] before trimming).
inline double squared_regret_loss_unclamped(const DiscreteDGP& dgp, const PolicyRule& rule) {
    double acc = 0.0;
    for (const auto& cell : dgp.cells()) {
        const double gap = indicator_treat(cell.tau) - rule.at(cell.w_id);
        acc += cell.mass * cell.tau * cell.tau * gap * gap;
    }
    return acc;
}

/// A fraction plus a non-uniqueness flag (E[tau^2 | w] = 0 makes every
/// action optimal; 0.5 is reported by convention).
struct FractionResult {
    double value = 0.0;
    bool non_unique = false;
};

/// Closed-form alpha = 2 optimum E[tau^2 1{tau>=0} | w] / E[tau^2 | w].
inline FractionResult optimal_fraction_sq(const DiscreteDGP& dgp, const std::string& w_id) {
    const double a = dgp.cond_mean(w_id, [](double t) { return t * t; });
    if (a == 0.0) return {0.5, true};
    const double b = dgp.cond_mean(w_id, [](double t) { return t * t * indicator_treat(t); });
    return {b / a, false};
}

/// Signed first-order condition at delta: alpha * E[tau * Reg^{alpha-1} | w],
/// the negative of d E[Reg^alpha | w] / d delta. Zero at the optimum;
/// negative values push delta down.
inline double foc_residual(const DiscreteDGP& dgp, const PolicyRule& rule, double alpha,
                           const std::string& w_id) {
    if (alpha <= 1.0) throw ConfigError("InvalidAlpha", "foc_residual needs alpha > 1");
    const double delta = rule.at(w_id);
    return alpha * dgp.cond_mean(w_id, [&](double t) {
        return t * std::pow(cell_regret(t, delta), alpha - 1.0);
    });
}

namespace detail {

/// FOC value as a function of delta for a fixed group; strictly decreasing
/// on [0, 1] whenever E[tau^2 | w] > 0.
inline double group_foc(const DiscreteDGP& dgp, const std::string& w_id, double alpha, double delta) {
    return alpha * dgp.cond_mean(w_id, [&](double t) {
        return t * std::pow(cell_regret(t, delta), alpha - 1.0);
    });
}

}  // namespace detail

/// Minimizer of E[Reg^alpha | w] over delta in [0, 1] for alpha > 1 by
/// bisection on the monotone FOC.
inline FractionResult optimal_fraction_alpha(const DiscreteDGP& dgp, const std::string& w_id,
                                             double alpha) {
    if (alpha <= 1.0) throw ConfigError("InvalidAlpha", "optimal_fraction_alpha needs alpha > 1");
    if (dgp.cond_mean(w_id, [](double t) { return t * t; }) == 0.0) return {0.5, true};
    double lo = 0.0, hi = 1.0;
    if (detail::group_foc(dgp, w_id, alpha, lo) <= 0.0) return {0.0, false};
    if (detail::group_foc(dgp, w_id, alpha, hi) >= 0.0) return {1.0, false};
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (detail::group_foc(dgp, w_id, alpha, mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return {0.5 * (lo + hi), false};
}

/// Restricted singleton rule 1{E[tau^2 sgn(tau) | w] >= 0}.
inline int restricted_rule(const DiscreteDGP& dgp, const std::string& w_id) {
    const double stat = dgp.cond_mean(w_id, [](double t) { return t * t * sgn_treat(t); });
    return stat >= 0.0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Capacity-constrained optima
// ---------------------------------------------------------------------------

/// alpha = 2 problem over discrete W groups: masses p_j, second moments
/// a_j = E[tau^2 | w_j], positive parts b_j = E[tau^2 1{tau>=0} | w_j],
/// capacity E[delta(W)] <= t.
struct CapacityProblem {
    struct Entry {
        std::string label;
        double p = 0.0;
        double a = 0.0;
        double b = 0.0;
    };
    std::vector<Entry> groups;
    double t = 0.0;

    // Filled by capacity_optimal.
    std::vector<double> delta;
    std::vector<double> h;  // multipliers of delta_j >= 0, recovered
    double lambda = 0.0;
    std::size_t j_star = 0;  // retained groups (in the b-descending order)
    bool binding = false;

    /// Population problems satisfy a_j >= b_j >= 0 by construction; the
    /// non-strict form admits estimated per-cell moments, where debiasing can
    /// push b_j outside that range (a_j < 0 is rejected either way).
    CapacityProblem(std::vector<Entry> entries, double capacity, bool strict = true)
        : groups(std::move(entries)), t(capacity) {
        if (!(t > 0.0) || !(t < 1.0))
            throw ConfigError("InfeasibleCapacity", "capacity t must lie in (0, 1)");
        double total = 0.0;
        for (const auto& g : groups) {
            if (!(g.p > 0.0)) throw DataError("InvalidDgp", "group mass must be > 0");
            if (g.a < 0.0) throw NumericError("IndefiniteHessian", "negative second moment in group " + g.label);
            if (strict && (g.b < 0.0 || g.b > g.a + 1e-12))
                throw DataError("InvalidDgp", "need a_j >= b_j >= 0 in group " + g.label);
            total += g.p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw DataError("InvalidDgp", "group masses sum to " + std::to_string(total) + ", expected 1");
    }
};

/// KKT solution of the capacity problem. Groups with a_j = 0 get 0 (any
/// action is costless; 0 spends no capacity). If the unconstrained optimum
/// b_j / a_j fits, it is returned with lambda = 0. Otherwise groups are
/// ordered by b_j descending (ties by input order) and scanned for the
/// cutoff J* with lambda = (sum_{j<=J*} p_j b_j / a_j - t) / (sum_{j<=J*}
/// p_j / (2 a_j)); every KKT condition is re-verified on the result.
inline CapacityProblem capacity_optimal(CapacityProblem problem) {
    const std::size_t m = problem.groups.size();
    problem.delta.assign(m, 0.0);
    problem.h.assign(m, 0.0);
    problem.lambda = 0.0;
    problem.binding = false;

    std::vector<std::size_t> active;
    for (std::size_t j = 0; j < m; ++j)
        if (problem.groups[j].a > 0.0) active.push_back(j);

    double unconstrained_load = 0.0;
    for (std::size_t j : active)
        unconstrained_load += problem.groups[j].p * std::max(0.0, problem.groups[j].b / problem.groups[j].a);

    if (unconstrained_load <= problem.t) {
        for (std::size_t j : active) problem.delta[j] = std::max(0.0, problem.groups[j].b / problem.groups[j].a);
        problem.j_star = active.size();
        for (std::size_t j = 0; j < m; ++j)
            problem.h[j] = (problem.delta[j] > 0.0) ? 0.0 : 2.0 * problem.groups[j].p * (problem.groups[j].a * problem.delta[j] - problem.groups[j].b);
        return problem;
    }

    problem.binding = true;
    std::stable_sort(active.begin(), active.end(), [&](std::size_t i, std::size_t j) {
        return problem.groups[i].b > problem.groups[j].b;
    });

    bool solved = false;
    for (std::size_t keep = active.size(); keep >= 1; --keep) {
        double load = 0.0, weight = 0.0;
        for (std::size_t r = 0; r < keep; ++r) {
            const auto& g = problem.groups[active[r]];
            load += g.p * g.b / g.a;
            weight += g.p / (2.0 * g.a);
        }
        const double lambda = (load - problem.t) / weight;
        const double b_edge = problem.groups[active[keep - 1]].b;
        const double b_next = keep < active.size() ? problem.groups[active[keep]].b : -1.0;
        if (lambda >= 0.0 && lambda <= 2.0 * b_edge + 1e-12 && (keep == active.size() || lambda >= 2.0 * b_next - 1e-12)) {
            problem.lambda = lambda;
            problem.j_star = keep;
            for (std::size_t r = 0; r < keep; ++r) {
                const auto& g = problem.groups[active[r]];
                problem.delta[active[r]] = std::max(0.0, g.b / g.a - lambda / (2.0 * g.a));
            }
            solved = true;
            break;
        }
    }
    if (!solved) throw NumericError("CapacityKktFailure", "no valid cutoff found");

    for (std::size_t j = 0; j < m; ++j) {
        const auto& g = problem.groups[j];
        problem.h[j] = 2.0 * g.p * g.a * problem.delta[j] - 2.0 * g.p * g.b + problem.lambda * g.p;
        if (problem.delta[j] > 1e-12 && std::abs(problem.h[j]) > 1e-8)
            throw NumericError("CapacityKktFailure", "complementary slackness violated");
        if (problem.h[j] < -1e-8) throw NumericError("CapacityKktFailure", "negative multiplier");
    }
    double load = 0.0;
    for (std::size_t j = 0; j < m; ++j) load += problem.groups[j].p * problem.delta[j];
    if (load > problem.t + 1e-8) throw NumericError("CapacityKktFailure", "capacity violated");
    return problem;
}

/// Capacity-constrained optimum for a general regret-aversion level.
/// alpha = 1 uses the priority rule (largest positive group effect first);
/// alpha = 2 maps to the KKT form above; other alpha > 1 solve the dual by
/// bisection on the capacity multiplier.
struct CapacityAlphaSolution {
    PolicyRule rule;
    double lambda = 0.0;
    bool binding = false;
    std::vector<std::string> non_unique_groups;
};

inline CapacityAlphaSolution capacity_optimal_alpha(const DiscreteDGP& dgp, double t, double alpha) {
    if (!(t > 0.0) || !(t < 1.0))
        throw ConfigError("InfeasibleCapacity", "capacity t must lie in (0, 1)");
    if (alpha < 1.0) throw ConfigError("InvalidAlpha", "alpha must be >= 1");
    CapacityAlphaSolution out;

    if (alpha == 1.0) {
        std::vector<std::pair<double, const DiscreteDGP::Group*>> ranked;
        for (const auto& g : dgp.groups()) {
            const double mean_tau = dgp.cond_mean(g.label, [](double x) { return x; });
            out.rule.set(g.label, 0.0);
            if (mean_tau > 0.0) ranked.emplace_back(mean_tau, &g);
            if (mean_tau == 0.0) out.non_unique_groups.push_back(g.label);
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        double remaining = t;
        for (const auto& [mean_tau, g] : ranked) {
            const double take = std::min(1.0, remaining / g->mass);
            out.rule.set(g->label, take);
            remaining -= take * g->mass;
            if (remaining <= 0.0) {
                out.binding = true;
                out.lambda = mean_tau;
                break;
            }
        }
        return out;
    }

    if (alpha == 2.0) {
        std::vector<CapacityProblem::Entry> entries;
        for (const auto& g : dgp.groups()) {
            CapacityProblem::Entry e;
            e.label = g.label;
            e.p = g.mass;
            e.a = dgp.cond_mean(g.label, [](double x) { return x * x; });
            e.b = dgp.cond_mean(g.label, [](double x) { return x * x * indicator_treat(x); });
            if (e.a == 0.0) out.non_unique_groups.push_back(g.label);
            entries.push_back(e);
        }
        CapacityProblem solved = capacity_optimal(CapacityProblem(std::move(entries), t));
        for (std::size_t j = 0; j < solved.groups.size(); ++j)
            out.rule.set(solved.groups[j].label, solved.delta[j]);
        out.lambda = solved.lambda;
        out.binding = solved.binding;
        return out;
    }

    // General alpha: delta_j(lambda) solves group_foc = lambda; the group FOC
    // is strictly decreasing, so both levels bisect.
    auto delta_at = [&](const std::string& label, double lambda) {
        double g0 = detail::group_foc(dgp, label, alpha, 0.0);
        if (g0 <= lambda) return 0.0;
        if (detail::group_foc(dgp, label, alpha, 1.0) >= lambda) return 1.0;
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (detail::group_foc(dgp, label, alpha, mid) > lambda)
                lo = mid;
            else
                hi = mid;
        }
        return 0.5 * (lo + hi);
    };
    auto load_at = [&](double lambda) {
        double load = 0.0;
        for (const auto& g : dgp.groups()) load += g.mass * delta_at(g.label, lambda);
        return load;
    };

    for (const auto& g : dgp.groups())
        if (dgp.cond_mean(g.label, [](double x) { return x * x; }) == 0.0)
            out.non_unique_groups.push_back(g.label);

    if (load_at(0.0) <= t) {
        for (const auto& g : dgp.groups()) out.rule.set(g.label, delta_at(g.label, 0.0));
        return out;
    }
    out.binding = true;
    double lam_hi = 0.0;
    for (const auto& g : dgp.groups())
        lam_hi = std::max(lam_hi, detail::group_foc(dgp, g.label, alpha, 0.0));
    double lam_lo = 0.0;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lam_lo + lam_hi);
        if (load_at(mid) > t)
            lam_lo = mid;
        else
            lam_hi = mid;
    }
    out.lambda = 0.5 * (lam_lo + lam_hi);
    for (const auto& g : dgp.groups()) out.rule.set(g.label, delta_at(g.label, out.lambda));
    return out;
}

}  // namespace rapt
