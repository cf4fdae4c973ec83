#include <catch2/catch_amalgamated.hpp>

#include "rapt/population.hpp"
#include "rapt/rng.hpp"
#include "test_util.hpp"

using namespace rapt;
using testutil::two_group_dgp;

namespace {

DiscreteDGP random_dgp(CounterRng& rng, int max_groups = 4, int max_cells = 4) {
    std::vector<DgpCell> cells;
    const int groups = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_groups)));
    double total = 0.0;
    for (int g = 0; g < groups; ++g) {
        const int n_cells = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_cells)));
        for (int c = 0; c < n_cells; ++c) {
            DgpCell cell;
            cell.w_id = "g" + std::to_string(g);
            cell.x_id = "g" + std::to_string(g) + "x" + std::to_string(c);
            cell.mass = 0.05 + rng.uniform();
            cell.tau = rng.normal();
            total += cell.mass;
            cells.push_back(cell);
        }
    }
    for (auto& cell : cells) cell.mass /= total;
    return DiscreteDGP(std::move(cells));
}

}  // namespace

TEST_CASE("two-group reference table: regrets, means, inequality indices") {
    DiscreteDGP dgp = two_group_dgp();

    // treat all
    RegretProfile all = regret(dgp, PolicyRule::constant(dgp, 1.0));
    CHECK(all.regrets()[0] == 0.0);
    CHECK(all.regrets()[1] == Catch::Approx(0.22).margin(0.01));
    CHECK(all.mean_regret() == Catch::Approx(0.12).margin(0.01));
    CHECK(all.atkinson_index(1.0) == 0.0);
    CHECK(all.atkinson_index(2.0) == Catch::Approx(0.36).margin(0.01));
    CHECK(all.atkinson_index(3.0) == Catch::Approx(0.51).margin(0.01));

    RegretProfile t88 = regret(dgp, PolicyRule::constant(dgp, 0.88));
    CHECK(t88.regrets()[0] == Catch::Approx(0.08).margin(0.01));
    CHECK(t88.regrets()[1] == Catch::Approx(0.19).margin(0.01));
    CHECK(t88.mean_regret() == Catch::Approx(0.14).margin(0.01));
    CHECK(t88.atkinson_index(2.0) == Catch::Approx(0.08).margin(0.01));
    CHECK(t88.atkinson_index(3.0) == Catch::Approx(0.14).margin(0.01));

    RegretProfile t82 = regret(dgp, PolicyRule::constant(dgp, 0.82));
    CHECK(t82.regrets()[0] == Catch::Approx(0.12).margin(0.01));
    CHECK(t82.regrets()[1] == Catch::Approx(0.18).margin(0.01));
    CHECK(t82.mean_regret() == Catch::Approx(0.15).margin(0.01));
    CHECK(t82.atkinson_index(2.0) == Catch::Approx(0.02).margin(0.01));
    CHECK(t82.atkinson_index(3.0) == Catch::Approx(0.05).margin(0.01));
}

TEST_CASE("oracle rule has zero regret when the sign is constant within groups") {
    DiscreteDGP dgp({{"a", "a1", 0.3, 0.5}, {"a", "a2", 0.2, 0.1}, {"b", "b1", 0.5, -0.4}});
    PolicyRule rule;
    rule.set("a", 1.0);
    rule.set("b", 0.0);
    RegretProfile profile = regret(dgp, rule);
    for (double r : profile.regrets()) CHECK(r == 0.0);
    CHECK(profile.mean_regret() == 0.0);
    CHECK(profile.atkinson_index(2.0) == 0.0);  // convention at zero mean
}

TEST_CASE("regret requires the rule to cover every group") {
    DiscreteDGP dgp = two_group_dgp();
    PolicyRule empty;
    CHECK_THROWS_AS(regret(dgp, empty), DataError);
}

TEST_CASE("loss_alpha hand values") {
    DiscreteDGP dgp = two_group_dgp();
    // treat all, alpha = 2: only the hurt group carries regret
    const double expect = testutil::kShareHigh * testutil::kTauHigh * testutil::kTauHigh;
    CHECK(loss_alpha(dgp, PolicyRule::constant(dgp, 1.0), 2.0) == Catch::Approx(expect).epsilon(1e-12));
    // alpha = 1 equals the mean regret
    RegretProfile p = regret(dgp, PolicyRule::constant(dgp, 0.6));
    CHECK(loss_alpha(dgp, PolicyRule::constant(dgp, 0.6), 1.0) == Catch::Approx(p.mean_regret()).epsilon(1e-12));
    // single cell, alpha = 1 -> the regret itself
    DiscreteDGP single({{"w", "x", 1.0, -0.7}});
    CHECK(loss_alpha(single, PolicyRule::constant(single, 0.5), 1.0) == Catch::Approx(0.35).epsilon(1e-12));
    CHECK_THROWS_AS(loss_alpha(dgp, PolicyRule::constant(dgp, 1.0), 0.5), ConfigError);
}

TEST_CASE("loss decomposition L = [mean (1 + I_alpha)]^alpha") {
    CounterRng rng(101);
    for (int rep = 0; rep < 200; ++rep) {
        DiscreteDGP dgp = random_dgp(rng);
        PolicyRule rule;
        for (const auto& g : dgp.groups()) rule.set(g.label, rng.uniform());
        const double alpha = 1.0 + 3.0 * rng.uniform();
        RegretProfile profile = regret(dgp, rule);
        const double lhs = profile.loss(alpha);
        const double rhs = std::pow(profile.mean_regret() * (1.0 + profile.atkinson_index(alpha)), alpha);
        CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
        CHECK(profile.atkinson_index(alpha) >= -1e-12);
        for (double r : profile.regrets()) CHECK(r >= 0.0);
    }
}

TEST_CASE("optimal fractions on the two-group population") {
    DiscreteDGP dgp = two_group_dgp();
    FractionResult sq = optimal_fraction_sq(dgp, "all");
    CHECK_FALSE(sq.non_unique);
    CHECK(sq.value == Catch::Approx(0.88).margin(0.005));
    FractionResult a3 = optimal_fraction_alpha(dgp, "all", 3.0);
    CHECK(a3.value == Catch::Approx(0.82).margin(0.005));
    FractionResult a2 = optimal_fraction_alpha(dgp, "all", 2.0);
    CHECK(a2.value == Catch::Approx(sq.value).margin(1e-8));
}

TEST_CASE("optimal fraction corner and symmetry cases") {
    DiscreteDGP sym({{"w", "p", 0.5, 1.0}, {"w", "m", 0.5, -1.0}});
    CHECK(optimal_fraction_sq(sym, "w").value == Catch::Approx(0.5).margin(1e-12));

    DiscreteDGP pos({{"w", "a", 0.5, 0.3}, {"w", "b", 0.5, 1.1}});
    CHECK(optimal_fraction_sq(pos, "w").value == 1.0);
    CHECK(optimal_fraction_alpha(pos, "w", 2.7).value == Catch::Approx(1.0).margin(1e-9));

    DiscreteDGP neg({{"w", "a", 1.0, -0.4}});
    for (double alpha : {1.5, 2.0, 3.0, 6.0})
        CHECK(optimal_fraction_alpha(neg, "w", alpha).value == Catch::Approx(0.0).margin(1e-9));

    DiscreteDGP zero({{"w", "a", 1.0, 0.0}});
    FractionResult z = optimal_fraction_sq(zero, "w");
    CHECK(z.non_unique);
    CHECK(z.value == 0.5);
    CHECK(optimal_fraction_alpha(zero, "w", 2.0).non_unique);
}

TEST_CASE("closed form agrees with the FOC bisection at alpha = 2") {
    CounterRng rng(2024);
    for (int rep = 0; rep < 2000; ++rep) {
        DiscreteDGP dgp = random_dgp(rng, 2, 5);
        for (const auto& g : dgp.groups()) {
            FractionResult sq = optimal_fraction_sq(dgp, g.label);
            FractionResult bi = optimal_fraction_alpha(dgp, g.label, 2.0);
            REQUIRE(std::abs(sq.value - bi.value) <= 1e-8);
        }
    }
}

TEST_CASE("foc residual: sign at treat-all, zero at the optimum") {
    DiscreteDGP dgp = two_group_dgp();
    const double at_one = foc_residual(dgp, PolicyRule::constant(dgp, 1.0), 2.0, "all");
    const double hand = -2.0 * testutil::kShareHigh * testutil::kTauHigh * testutil::kTauHigh;
    CHECK(at_one == Catch::Approx(hand).epsilon(1e-12));
    CHECK(at_one < 0.0);

    for (double alpha : {1.5, 2.0, 3.0, 4.5}) {
        FractionResult opt = optimal_fraction_alpha(dgp, "all", alpha);
        const double res = foc_residual(dgp, PolicyRule::constant(dgp, opt.value), alpha, "all");
        CHECK(std::abs(res) <= 1e-8);
    }

    DiscreteDGP pos({{"w", "a", 1.0, 0.9}});
    CHECK(foc_residual(pos, PolicyRule::constant(pos, 1.0), 2.0, "w") == 0.0);
}

TEST_CASE("loss increases when moving away from the interior optimum") {
    CounterRng rng(555);
    for (int rep = 0; rep < 100; ++rep) {
        DiscreteDGP dgp = random_dgp(rng, 1, 5);
        const auto& g = dgp.groups()[0];
        const double alpha = 1.2 + 3.0 * rng.uniform();
        FractionResult opt = optimal_fraction_alpha(dgp, g.label, alpha);
        if (opt.non_unique) continue;
        const double base = loss_alpha(dgp, PolicyRule::constant(dgp, opt.value), alpha);
        for (double eps : {0.05, 0.2}) {
            if (opt.value + eps <= 1.0)
                CHECK(loss_alpha(dgp, PolicyRule::constant(dgp, opt.value + eps), alpha) > base - 1e-13);
            if (opt.value - eps >= 0.0)
                CHECK(loss_alpha(dgp, PolicyRule::constant(dgp, opt.value - eps), alpha) > base - 1e-13);
        }
    }
}

TEST_CASE("restricted rule") {
    DiscreteDGP dgp = two_group_dgp();
    CHECK(restricted_rule(dgp, "all") == 1);  // 0.4601 * 0.6347^2 > 0.5399 * 0.2177^2

    DiscreteDGP tie({{"w", "p", 0.5, 1.0}, {"w", "m", 0.5, -1.0}});
    CHECK(restricted_rule(tie, "w") == 1);  // tie broken toward treatment

    DiscreteDGP neg({{"w", "a", 0.6, -0.2}, {"w", "b", 0.4, -1.0}});
    CHECK(restricted_rule(neg, "w") == 0);
}

TEST_CASE("capacity: single group and hand-solved two-group problems") {
    SECTION("non-binding capacity keeps the unconstrained optimum") {
        CapacityProblem p({{"g", 1.0, 1.0, 0.88}}, 0.9);
        CapacityProblem s = capacity_optimal(std::move(p));
        CHECK_FALSE(s.binding);
        CHECK(s.delta[0] == Catch::Approx(0.88).margin(1e-12));
        CHECK(s.lambda == 0.0);
    }
    SECTION("interior cutoff") {
        CapacityProblem p({{"g1", 0.5, 1.0, 0.8}, {"g2", 0.5, 1.0, 0.4}}, 0.5);
        CapacityProblem s = capacity_optimal(std::move(p));
        CHECK(s.binding);
        CHECK(s.lambda == Catch::Approx(0.2).margin(1e-10));
        CHECK(s.delta[0] == Catch::Approx(0.7).margin(1e-10));
        CHECK(s.delta[1] == Catch::Approx(0.3).margin(1e-10));
    }
    SECTION("severe capacity drops the weakest group") {
        CapacityProblem p({{"g1", 0.5, 1.0, 0.9}, {"g2", 0.5, 1.0, 0.1}}, 0.2);
        CapacityProblem s = capacity_optimal(std::move(p));
        CHECK(s.j_star == 1);
        CHECK(s.lambda == Catch::Approx(1.0).margin(1e-10));
        CHECK(s.delta[0] == Catch::Approx(0.4).margin(1e-10));
        CHECK(s.delta[1] == 0.0);
        CHECK(s.h[1] == Catch::Approx(0.4).margin(1e-10));
    }
    SECTION("t outside (0,1) is rejected at construction") {
        CHECK_THROWS_AS(CapacityProblem({{"g", 1.0, 1.0, 0.5}}, 0.0), ConfigError);
        CHECK_THROWS_AS(CapacityProblem({{"g", 1.0, 1.0, 0.5}}, 1.0), ConfigError);
    }
}

TEST_CASE("capacity KKT matches the projected-gradient oracle and reduces all groups") {
    CounterRng rng(77);
    for (int rep = 0; rep < 300; ++rep) {
        const std::size_t m = 1 + rng.uniform_int(10);
        std::vector<double> p(m), a(m), b(m);
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            p[j] = 0.05 + rng.uniform();
            total += p[j];
        }
        for (std::size_t j = 0; j < m; ++j) p[j] /= total;
        std::vector<CapacityProblem::Entry> entries;
        for (std::size_t j = 0; j < m; ++j) {
            a[j] = 0.1 + 2.0 * rng.uniform();
            b[j] = a[j] * rng.uniform();
            entries.push_back({"g" + std::to_string(j), p[j], a[j], b[j]});
        }
        const double t = 0.05 + 0.9 * rng.uniform();
        CapacityProblem s = capacity_optimal(CapacityProblem(std::move(entries), t));
        std::vector<double> oracle = testutil::capacity_qp_oracle(p, a, b, t);

        double load = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            CHECK(std::abs(s.delta[j] - oracle[j]) <= 1e-6);
            CHECK(s.delta[j] <= b[j] / a[j] + 1e-12);  // capacity never raises treatment
            load += p[j] * s.delta[j];
            CHECK(std::abs(s.h[j] * s.delta[j]) <= 1e-10);
            CHECK(s.h[j] >= -1e-10);
            // stationarity
            CHECK(std::abs(-2.0 * p[j] * b[j] + 2.0 * p[j] * a[j] * s.delta[j] + s.lambda * p[j] - s.h[j]) <= 1e-10);
        }
        CHECK(load <= t + 1e-10);
        CHECK(std::abs(s.lambda * (load - t)) <= 1e-8);
    }
}

TEST_CASE("zero second-moment groups are parked at zero treatment") {
    CapacityProblem p({{"g1", 0.5, 0.0, 0.0}, {"g2", 0.5, 1.0, 0.9}}, 0.3);
    CapacityProblem s = capacity_optimal(std::move(p));
    CHECK(s.delta[0] == 0.0);
    CHECK(s.delta[1] == Catch::Approx(0.6).margin(1e-10));
}

TEST_CASE("general-alpha capacity matches the closed forms") {
    DiscreteDGP dgp = two_group_dgp();
    const double d2 = optimal_fraction_sq(dgp, "all").value;
    const double d3 = optimal_fraction_alpha(dgp, "all", 3.0).value;

    for (double t : {0.95, 0.85, 0.5}) {
        CapacityAlphaSolution s1 = capacity_optimal_alpha(dgp, t, 1.0);
        CHECK(s1.rule.at("all") == Catch::Approx(std::min(t, 1.0)).margin(1e-9));
        CapacityAlphaSolution s2 = capacity_optimal_alpha(dgp, t, 2.0);
        CHECK(s2.rule.at("all") == Catch::Approx(std::min(t, d2)).margin(1e-9));
        CapacityAlphaSolution s3 = capacity_optimal_alpha(dgp, t, 3.0);
        CHECK(s3.rule.at("all") == Catch::Approx(std::min(t, d3)).margin(1e-9));
    }

    // multi-group alpha = 2 cross-check against the KKT path
    CounterRng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        DiscreteDGP random = random_dgp(rng, 3, 3);
        const double t = 0.1 + 0.8 * rng.uniform();
        CapacityAlphaSolution dual = capacity_optimal_alpha(random, t, 2.0);
        std::vector<CapacityProblem::Entry> entries;
        for (const auto& g : random.groups())
            entries.push_back({g.label, g.mass,
                               random.cond_mean(g.label, [](double x) { return x * x; }),
                               random.cond_mean(g.label, [](double x) { return x * x * indicator_treat(x); })});
        CapacityProblem kkt = capacity_optimal(CapacityProblem(std::move(entries), t));
        for (std::size_t j = 0; j < kkt.groups.size(); ++j)
            CHECK(std::abs(dual.rule.at(kkt.groups[j].label) - kkt.delta[j]) <= 1e-8);
    }

    // alpha = 1 priority rule on a two-group population
    DiscreteDGP multi({{"hi", "h", 0.4, 0.8}, {"lo", "l", 0.6, 0.2}});
    CapacityAlphaSolution pri = capacity_optimal_alpha(multi, 0.5, 1.0);
    CHECK(pri.rule.at("hi") == Catch::Approx(1.0).margin(1e-12));
    CHECK(pri.rule.at("lo") == Catch::Approx(0.1 / 0.6).margin(1e-12));
}

TEST_CASE("dgp validation") {
    CHECK_THROWS_AS(DiscreteDGP({{"w", "x", 0.5, 0.1}}), DataError);                         // masses must sum to 1
    CHECK_THROWS_AS(DiscreteDGP({{"a", "x", 0.5, 0.1}, {"b", "x", 0.5, 0.2}}), DataError);   // x in two groups
    CHECK_THROWS_AS(DiscreteDGP({{"w", "x", 1.0, 0.1}, {"w", "y", 0.0, 0.2}}), DataError);   // zero mass
}
