#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "rapt/core_data.hpp"
#include "rapt/error.hpp"
#include "rapt/estimation.hpp"
#include "rapt/nuisance.hpp"
#include "rapt/parallel.hpp"
#include "rapt/population.hpp"
#include "rapt/rng.hpp"

namespace rapt {

enum class DgpKind { two_group, parametric_sieve, lower_bound_smooth };

/// Shape of the conditional treated-share function m(w) for the smooth kinds.
enum class MeanFunction { constant, sine, sieve };

/// Optional scaling kappa(w) of the effect size: `dip` drags |tau| toward
/// zero around w1 = 1/2, thinning the margin between the two signs.
enum class MarginProfile { none, dip };

/// Synthetic experiment with a known optimal rule.
///
/// two_group: no usable W; a benefiting and a hurt subgroup with fixed
/// shares. The smooth kinds draw W uniform on [0,1]^d, a sign covariate
/// X1 = sgn(m(W) + e) with e uniform on [-1, 0], and effect tau = X1 *
/// kappa(W), so the squared-regret optimal rule is m(w) itself; with
/// m = beta' p(w) it lies exactly inside the fitted policy class.
struct SyntheticDGP {
    DgpKind kind = DgpKind::parametric_sieve;

    // two_group parameters
    double share_low = 0.4601;
    double tau_low = 0.6347;
    double tau_high = -0.2177;

    // smooth-kind parameters
    int d_w = 1;
    MeanFunction mean_fn = MeanFunction::sieve;
    double mean_const = 0.5;
    double sine_level = 0.5;
    double sine_amplitude = 0.3;
    BasisSpec sieve_basis = default_sieve_basis();
    Eigen::VectorXd sieve_beta = default_sieve_beta();
    MarginProfile margin = MarginProfile::none;

    // sampling
    double propensity = 2.0 / 3.0;
    double noise_half_width = 0.5;  // outcome noise uniform on [-h, h]
    double baseline_level = 0.0;    // untreated conditional mean

    static BasisSpec default_sieve_basis() {
        BasisSpec spec;
        spec.kind = BasisKind::bspline;
        BasisDimSpec dim;
        dim.degree = 3;
        dim.degrees_of_freedom = 4;
        dim.knots = KnotRule::uniform;
        dim.lo = 0.0;
        dim.hi = 1.0;
        spec.dims = {dim};
        return spec;
    }

    static Eigen::VectorXd default_sieve_beta() {
        Eigen::VectorXd b(4);
        b << 0.9, 0.2, 0.8, 0.3;
        return b;
    }

    const Basis& resolved_sieve_basis() const {
        if (!sieve_basis_cache_)
            sieve_basis_cache_ = std::make_shared<Basis>(Basis::resolve(sieve_basis, Eigen::MatrixXd(0, d_w)));
        return *sieve_basis_cache_;
    }

    double mean_function(const Eigen::VectorXd& w) const {
        switch (mean_fn) {
            case MeanFunction::constant:
                return mean_const;
            case MeanFunction::sine:
                return sine_level + sine_amplitude * std::sin(2.0 * std::numbers::pi * w[0]);
            case MeanFunction::sieve:
                return sieve_beta.dot(resolved_sieve_basis().eval_point(w));
        }
        return 0.0;
    }

    double effect_scale(const Eigen::VectorXd& w) const {
        if (margin == MarginProfile::none) return 1.0;
        return std::sqrt(std::abs(2.0 * w[0] - 1.0));
    }

    void validate() const {
        if (!(propensity > 0.0) || !(propensity < 1.0))
            throw ConfigError("InvalidDgp", "propensity must lie strictly inside (0, 1)");
        if (kind == DgpKind::two_group) {
            if (!(share_low > 0.0) || !(share_low < 1.0))
                throw ConfigError("InvalidDgp", "share_low must lie in (0, 1)");
            return;
        }
        if (d_w < 1) throw ConfigError("InvalidDgp", "smooth kinds need d_w >= 1");
        if (mean_fn == MeanFunction::sieve) {
            if (static_cast<int>(sieve_basis.dims.size()) != d_w)
                throw ConfigError("InvalidDgp", "sieve basis dimensions must match d_w");
            if (sieve_beta.size() != resolved_sieve_basis().dimension())
                throw ConfigError("InvalidDgp", "sieve_beta length must match the basis dimension");
            if (sieve_beta.minCoeff() < 0.0 || sieve_beta.maxCoeff() > 1.0)
                throw ConfigError("InvalidDgp", "sieve_beta entries must lie in [0, 1] to keep m(w) a share");
        }
    }

private:
    mutable std::shared_ptr<Basis> sieve_basis_cache_;
};

/// Draws the observed sample (Y, D, X) with D ~ Bernoulli(pi) independent of
/// the potential outcomes given X.
inline Dataset sample_dataset(const SyntheticDGP& dgp, std::size_t n, std::uint64_t seed) {
    dgp.validate();
    if (n < 1) throw ConfigError("InvalidDgp", "need n >= 1");
    CounterRng rng(derive_seed(seed, 0x73616d70ULL));  // "samp" substream

    if (dgp.kind == DgpKind::two_group) {
        Eigen::MatrixXd x(n, 1);
        Eigen::VectorXd y(static_cast<Eigen::Index>(n));
        std::vector<int> d(n);
        for (std::size_t i = 0; i < n; ++i) {
            const bool low = rng.bernoulli(dgp.share_low);
            const double tau = low ? dgp.tau_low : dgp.tau_high;
            x(static_cast<Eigen::Index>(i), 0) = low ? 1.0 : 0.0;
            const int di = rng.bernoulli(dgp.propensity) ? 1 : 0;
            d[i] = di;
            const double e = rng.uniform(-dgp.noise_half_width, dgp.noise_half_width);
            y[static_cast<Eigen::Index>(i)] = dgp.baseline_level + di * tau + e;
        }
        return Dataset(std::move(y), std::move(d), std::move(x), {});
    }

    const int dw = dgp.d_w;
    Eigen::MatrixXd x(n, 1 + dw);  // column 0: the sign covariate X1; then W
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    std::vector<int> d(n);
    std::vector<int> w_idx;
    for (int j = 0; j < dw; ++j) w_idx.push_back(1 + j);
    Eigen::VectorXd w(dw);
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < dw; ++j) w[j] = rng.uniform();
        const double eps = rng.uniform(-1.0, 0.0);
        const double x1 = sgn_treat(dgp.mean_function(w) + eps);
        x(static_cast<Eigen::Index>(i), 0) = x1;
        for (int j = 0; j < dw; ++j) x(static_cast<Eigen::Index>(i), 1 + j) = w[j];
        const double tau = x1 * dgp.effect_scale(w);
        const int di = rng.bernoulli(dgp.propensity) ? 1 : 0;
        d[i] = di;
        const double e = rng.uniform(-dgp.noise_half_width, dgp.noise_half_width);
        y[static_cast<Eigen::Index>(i)] = dgp.baseline_level + di * tau + e;
    }
    return Dataset(std::move(y), std::move(d), std::move(x), std::move(w_idx));
}

/// The squared-regret optimal treated share at w.
inline double oracle_policy(const SyntheticDGP& dgp, const Eigen::VectorXd& w) {
    switch (dgp.kind) {
        case DgpKind::two_group: {
            const double a = dgp.share_low * dgp.tau_low * dgp.tau_low +
                             (1.0 - dgp.share_low) * dgp.tau_high * dgp.tau_high;
            const double b = dgp.share_low * dgp.tau_low * dgp.tau_low * indicator_treat(dgp.tau_low) +
                             (1.0 - dgp.share_low) * dgp.tau_high * dgp.tau_high * indicator_treat(dgp.tau_high);
            if (a == 0.0) throw NumericError("NoClosedFormOracle", "degenerate two-group population");
            return b / a;
        }
        case DgpKind::parametric_sieve:
        case DgpKind::lower_bound_smooth:
            return dgp.mean_function(w);
    }
    throw NumericError("NoClosedFormOracle", "unknown dgp kind");
}

namespace detail {

// 8-point Gauss-Legendre rule on [-1, 1].
inline constexpr double kGl8Nodes[8] = {
    -0.9602898564975362, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975362};
inline constexpr double kGl8Weights[8] = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

/// Composite rule with 512 panels x 8 nodes = 4096 evaluations on [0, 1].
inline void composite_gl_nodes(std::vector<double>& nodes, std::vector<double>& weights) {
    const int panels = 512;
    nodes.clear();
    weights.clear();
    for (int p = 0; p < panels; ++p) {
        const double lo = static_cast<double>(p) / panels;
        const double half = 0.5 / panels;
        for (int q = 0; q < 8; ++q) {
            nodes.push_back(lo + half * (kGl8Nodes[q] + 1.0));
            weights.push_back(half * kGl8Weights[q]);
        }
    }
}

inline double halton(std::uint64_t index, int base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= base;
        r += f * static_cast<double>(index % static_cast<std::uint64_t>(base));
        index /= static_cast<std::uint64_t>(base);
    }
    return r;
}

}  // namespace detail

/// Excess squared-regret risk L(delta) - L(delta*) of a rule. Exact for the
/// two-group kind; deterministic quadrature for smooth kinds with d_w <= 2
/// (the identity L(delta) - L(delta*) = int kappa^2 (delta - m)^2 dF_W);
/// quasi-random integration with a reported standard error above that.
inline double excess_risk(const SyntheticDGP& dgp,
                          const std::function<double(const Eigen::VectorXd&)>& rule,
                          double* qmc_standard_error = nullptr) {
    dgp.validate();
    if (qmc_standard_error) *qmc_standard_error = 0.0;

    if (dgp.kind == DgpKind::two_group) {
        DiscreteDGP pop({{"all", "low", dgp.share_low, dgp.tau_low},
                         {"all", "high", 1.0 - dgp.share_low, dgp.tau_high}});
        const double delta = rule(Eigen::VectorXd(0));
        PolicyRule fitted;
        fitted.set("all", delta);
        PolicyRule best;
        best.set("all", optimal_fraction_sq(pop, "all").value);
        return squared_regret_loss_unclamped(pop, fitted) - squared_regret_loss_unclamped(pop, best);
    }

    const int dw = dgp.d_w;
    auto integrand = [&](const Eigen::VectorXd& w) {
        const double gap = rule(w) - dgp.mean_function(w);
        const double scale = dgp.effect_scale(w);
        return scale * scale * gap * gap;
    };

    if (dw <= 2) {
        std::vector<double> nodes, weights;
        detail::composite_gl_nodes(nodes, weights);
        Eigen::VectorXd w(dw);
        if (dw == 1) {
            double acc = 0.0;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                w[0] = nodes[i];
                acc += weights[i] * integrand(w);
            }
            return acc;
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < nodes.size(); ++j) {
                w[0] = nodes[i];
                w[1] = nodes[j];
                inner += weights[j] * integrand(w);
            }
            acc += weights[i] * inner;
        }
        return acc;
    }

    static constexpr int primes[] = {2, 3, 5, 7, 11, 13, 17, 19};
    if (dw > 8) throw ConfigError("InvalidDgp", "excess_risk supports d_w <= 8");
    const std::uint64_t points = 1 << 15;
    double acc = 0.0, acc2 = 0.0;
    Eigen::VectorXd w(dw);
    for (std::uint64_t i = 1; i <= points; ++i) {
        for (int j = 0; j < dw; ++j) w[j] = detail::halton(i, primes[j]);
        const double v = integrand(w);
        acc += v;
        acc2 += v * v;
    }
    const double mean = acc / static_cast<double>(points);
    if (qmc_standard_error) {
        const double var = std::max(0.0, acc2 / static_cast<double>(points) - mean * mean);
        *qmc_standard_error = std::sqrt(var / static_cast<double>(points));
    }
    return mean;
}

inline double excess_risk(const SyntheticDGP& dgp, const TrimmedPolicy& policy,
                          double* qmc_standard_error = nullptr) {
    return excess_risk(
        dgp, [&](const Eigen::VectorXd& w) { return policy.evaluate(w); }, qmc_standard_error);
}

// ---------------------------------------------------------------------------
// Monte Carlo rate harness
// ---------------------------------------------------------------------------

struct EstimatorConfig {
    int k_folds = 5;
    OutcomeLearnerSpec outcome;
    bool known_propensity = true;  // use the dgp's propensity for the weights
    std::optional<BalancingSpec> balancing;
    BasisSpec policy_basis;        // sieve class for the fitted rule, over W
    EstimateMethod method = EstimateMethod::debiased;
    bool paired_methods = false;   // also run the other method on the same data

    void validate() const {
        if (k_folds < 2) throw ConfigError("InvalidFoldCount", "k_folds must be >= 2");
        outcome.validate();
        if (!known_propensity && !balancing)
            throw ConfigError("InvalidConfig", "either known_propensity or a balancing spec is required");
    }
};

struct MonteCarloReport {
    std::vector<long> n_of_record;
    std::vector<int> replication;
    std::vector<double> excess;       // excess risk of config.method, NaN on failure
    std::vector<double> excess_alt;   // the other method when paired_methods, else empty

    std::vector<long> n_grid;
    std::vector<double> mean_excess;  // per n-grid entry, failures excluded
    std::vector<double> stderr_excess;

    bool slope_available = false;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double slope_stderr = std::numeric_limits<double>::quiet_NaN();
    double slope_ci_lo = std::numeric_limits<double>::quiet_NaN();
    double slope_ci_hi = std::numeric_limits<double>::quiet_NaN();

    long failures = 0;
    std::vector<std::string> notes;
};

/// Runs the full pipeline (sample -> folds -> nuisances -> weights -> sieve
/// fit -> trim -> excess risk) per replication, over an ascending n grid,
/// then fits the log-log slope of the mean excess risk. Replications run in
/// parallel; each derives its seed from (seed, n, replication), so reports
/// are bit-identical for any thread count.
inline MonteCarloReport run_rate_experiment(const SyntheticDGP& dgp, const EstimatorConfig& config,
                                            const std::vector<long>& n_grid, int replications,
                                            std::uint64_t seed, int threads = 0) {
    dgp.validate();
    config.validate();
    if (n_grid.empty() || replications < 1)
        throw ConfigError("InvalidConfig", "need at least one n value and one replication");
    if (!std::is_sorted(n_grid.begin(), n_grid.end()))
        throw ConfigError("InvalidConfig", "n grid must be ascending");

    MonteCarloReport report;
    report.n_grid = n_grid;
    const std::size_t total = n_grid.size() * static_cast<std::size_t>(replications);
    report.n_of_record.resize(total);
    report.replication.resize(total);
    report.excess.assign(total, std::numeric_limits<double>::quiet_NaN());
    if (config.paired_methods) report.excess_alt.assign(total, std::numeric_limits<double>::quiet_NaN());
    std::vector<char> failed(total, 0);

    parallel_for(total, threads, [&](std::size_t slot) {
        const std::size_t ni = slot / static_cast<std::size_t>(replications);
        const int rep = static_cast<int>(slot % static_cast<std::size_t>(replications));
        const long n = n_grid[ni];
        report.n_of_record[slot] = n;
        report.replication[slot] = rep;
        const std::uint64_t rep_seed = derive_seed(seed, static_cast<std::uint64_t>(n),
                                                   static_cast<std::uint64_t>(rep) + 1);
        try {
            Dataset data = sample_dataset(dgp, static_cast<std::size_t>(n), rep_seed);
            FoldAssignment folds =
                partition_folds(static_cast<std::size_t>(n), config.k_folds, derive_seed(rep_seed, 2));
            NuisanceFit fit = fit_outcome_regressions(data, folds, config.outcome);
            if (config.known_propensity) {
                const double pi = dgp.propensity;
                set_known_propensity(fit, [pi](const Eigen::VectorXd&) { return pi; });
            } else {
                fit_balancing_weights(data, folds, *config.balancing, fit);
            }
            DebiasedWeights weights = compute_debiased_weights(data, folds, fit);
            auto basis = std::make_shared<const Basis>(Basis::resolve(config.policy_basis, data.w_matrix()));

            auto run_method = [&](EstimateMethod method) {
                SievePolicyEstimate est = method == EstimateMethod::debiased
                                              ? estimate_debiased(data, basis, weights)
                                              : estimate_plugin(data, basis, weights.tau);
                return excess_risk(dgp, trim(std::move(est)));
            };
            report.excess[slot] = run_method(config.method);
            if (config.paired_methods) {
                const EstimateMethod other = config.method == EstimateMethod::debiased
                                                 ? EstimateMethod::plugin
                                                 : EstimateMethod::debiased;
                report.excess_alt[slot] = run_method(other);
            }
        } catch (const std::exception&) {
            failed[slot] = 1;
        }
    });

    for (char f : failed) report.failures += f;

    report.mean_excess.assign(n_grid.size(), 0.0);
    report.stderr_excess.assign(n_grid.size(), 0.0);
    for (std::size_t ni = 0; ni < n_grid.size(); ++ni) {
        double sum = 0.0, sum2 = 0.0;
        long count = 0;
        for (int rep = 0; rep < replications; ++rep) {
            const std::size_t slot = ni * static_cast<std::size_t>(replications) + static_cast<std::size_t>(rep);
            if (failed[slot]) continue;
            sum += report.excess[slot];
            sum2 += report.excess[slot] * report.excess[slot];
            ++count;
        }
        if (count > 0) {
            const double mean = sum / static_cast<double>(count);
            report.mean_excess[ni] = mean;
            if (count > 1) {
                const double var = std::max(0.0, (sum2 - count * mean * mean) / static_cast<double>(count - 1));
                report.stderr_excess[ni] = std::sqrt(var / static_cast<double>(count));
            }
        }
    }

    if (replications < 50)
        report.notes.push_back("replications < 50: rate estimates are indicative only");

    // log-log slope of mean excess risk against n
    std::vector<double> lx, ly;
    for (std::size_t ni = 0; ni < n_grid.size(); ++ni) {
        if (report.mean_excess[ni] > 0.0) {
            lx.push_back(std::log(static_cast<double>(n_grid[ni])));
            ly.push_back(std::log(report.mean_excess[ni]));
        }
    }
    if (lx.size() >= 3) {
        const double n_pts = static_cast<double>(lx.size());
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            mx += lx[i];
            my += ly[i];
        }
        mx /= n_pts;
        my /= n_pts;
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxx += (lx[i] - mx) * (lx[i] - mx);
            sxy += (lx[i] - mx) * (ly[i] - my);
        }
        report.slope = sxy / sxx;
        const double intercept = my - report.slope * mx;
        double rss = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            const double r = ly[i] - intercept - report.slope * lx[i];
            rss += r * r;
        }
        if (lx.size() > 2) report.slope_stderr = std::sqrt(rss / (n_pts - 2.0) / sxx);
        report.slope_ci_lo = report.slope - 1.96 * report.slope_stderr;
        report.slope_ci_hi = report.slope + 1.96 * report.slope_stderr;
        report.slope_available = true;
    } else {
        report.notes.push_back("slope omitted: needs at least 3 n values with positive mean excess risk");
    }
    return report;
}

}  // namespace rapt
