#include <catch2/catch_amalgamated.hpp>

#include "rapt/basis.hpp"
#include "rapt/rng.hpp"
#include "test_util.hpp"

using namespace rapt;

namespace {

BasisSpec cubic_spec(int dof, double lo, double hi, KnotRule rule = KnotRule::uniform) {
    BasisSpec spec;
    spec.kind = BasisKind::bspline;
    BasisDimSpec d;
    d.degree = 3;
    d.degrees_of_freedom = dof;
    d.knots = rule;
    d.lo = lo;
    d.hi = hi;
    spec.dims.push_back(d);
    return spec;
}

}  // namespace

TEST_CASE("cubic bspline rows are a nonnegative partition of unity") {
    BasisSpec spec = cubic_spec(5, 0.0, 1.0);
    Eigen::MatrixXd w(100, 1);
    for (int i = 0; i < 100; ++i) w(i, 0) = static_cast<double>(i) / 99.0;
    BasisMatrix m = build_basis(spec, w);
    REQUIRE(m.d_p == 5);
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        CHECK(m.values.row(i).minCoeff() >= 0.0);
        CHECK(std::abs(m.values.row(i).sum() - 1.0) <= 1e-12);
    }
    CHECK(m.zeta_p <= 1.0 + 1e-12);
}

TEST_CASE("left boundary point loads the first basis function only") {
    BasisSpec spec = cubic_spec(5, 0.0, 1.0);
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 1));
    Eigen::VectorXd w(1);
    w << 0.0;
    Eigen::VectorXd p = basis.eval_point(w);
    CHECK(p[0] == Catch::Approx(1.0).margin(1e-14));
    for (int j = 1; j < 5; ++j) CHECK(std::abs(p[j]) <= 1e-14);
    w << 1.0;  // right boundary loads the last one
    p = basis.eval_point(w);
    CHECK(p[4] == Catch::Approx(1.0).margin(1e-14));
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
}

TEST_CASE("bracket basis rows are one-hot over the cell grid") {
    BasisSpec spec;
    spec.kind = BasisKind::bracket;
    BasisDimSpec educ;
    educ.cuts = {11.0, 12.0};
    BasisDimSpec income;
    income.cuts = {220.0, 3800.0};
    spec.dims = {educ, income};

    Eigen::MatrixXd w(4, 2);
    w << 10.0, 100.0,    // cell (0, 0)
         12.0, 500.0,    // cell (1, 1): 12 falls in (11, 12]
         16.0, 5000.0,   // cell (2, 2)
         11.0, 3800.0;   // cell (0, 1): boundaries belong to the lower cell
    BasisMatrix m = build_basis(spec, w);
    REQUIRE(m.d_p == 9);
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(m.values.row(i).sum() == 1.0);
        CHECK(m.values.row(i).maxCoeff() == 1.0);
    }
    CHECK(m.values(0, 0) == 1.0);
    CHECK(m.values(1, 1 + 3 * 1) == 1.0);
    CHECK(m.values(2, 2 + 3 * 2) == 1.0);
    CHECK(m.values(3, 0 + 3 * 1) == 1.0);
}

TEST_CASE("evaluate_policy is linear in beta and exact on brackets") {
    BasisSpec spec;
    spec.kind = BasisKind::bracket;
    BasisDimSpec d1, d2;
    d1.cuts = {11.0, 12.0};
    d2.cuts = {220.0, 3800.0};
    spec.dims = {d1, d2};
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 2));

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(9);
    beta[2 + 3 * 2] = 0.63;  // cell (3, 3) in 1-based terms
    Eigen::VectorXd w(2);
    w << 16.0, 5000.0;
    CHECK(evaluate_policy(beta, basis, w) == 0.63);

    CounterRng rng(11);
    Eigen::VectorXd a(9), b(9);
    for (int j = 0; j < 9; ++j) {
        a[j] = rng.normal();
        b[j] = rng.normal();
    }
    const double sum = evaluate_policy(a + b, basis, w);
    CHECK(sum == Catch::Approx(evaluate_policy(a, basis, w) + evaluate_policy(b, basis, w)).margin(1e-12));
}

TEST_CASE("all-ones coefficients give the constant unit policy on splines") {
    BasisSpec spec = cubic_spec(7, -2.0, 3.0);
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 1));
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(7);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(7);
    CounterRng rng(3);
    for (int i = 0; i < 50; ++i) {
        Eigen::VectorXd w(1);
        w << rng.uniform(-2.0, 3.0);
        CHECK(evaluate_policy(ones, basis, w) == Catch::Approx(1.0).margin(1e-12));
        CHECK(evaluate_policy(zero, basis, w) == 0.0);
    }
}

TEST_CASE("tensor-product splines keep partition of unity and zeta bound") {
    BasisSpec spec;
    spec.kind = BasisKind::bspline;
    BasisDimSpec d1, d2;
    d1.degree = 3;
    d1.degrees_of_freedom = 5;
    d1.knots = KnotRule::uniform;
    d1.lo = 0.0;
    d1.hi = 1.0;
    d2 = d1;
    d2.degrees_of_freedom = 4;
    spec.dims = {d1, d2};
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 2));
    REQUIRE(basis.dimension() == 20);

    CounterRng rng(17);
    double sup_norm = 0.0;
    for (int i = 0; i < 10000; ++i) {
        Eigen::VectorXd w(2);
        w << rng.uniform(), rng.uniform();
        Eigen::VectorXd p = basis.eval_point(w);
        REQUIRE(p.minCoeff() >= 0.0);
        REQUIRE(std::abs(p.sum() - 1.0) <= 1e-12);
        sup_norm = std::max(sup_norm, p.norm());
    }
    CHECK(sup_norm <= 1.0 + 1e-12);
}

TEST_CASE("quantile knots follow the data; coincident quantiles are rejected") {
    CounterRng rng(23);
    Eigen::MatrixXd w(500, 1);
    for (int i = 0; i < 500; ++i) w(i, 0) = std::exp(rng.normal());  // skewed
    BasisSpec spec = cubic_spec(8, 0.0, 60.0, KnotRule::quantile);
    Basis basis = Basis::resolve(spec, w);
    const auto& knots = basis.knots(0);
    for (std::size_t j = 4; j + 5 < knots.size(); ++j) CHECK(knots[j] < knots[j + 1]);

    Eigen::MatrixXd degenerate = Eigen::MatrixXd::Ones(500, 1);  // all mass at one point
    BasisSpec bad = cubic_spec(8, 0.0, 2.0, KnotRule::quantile);
    CHECK_THROWS_AS(Basis::resolve(bad, degenerate), DataError);
}

TEST_CASE("out-of-domain points clamp by default and error when disabled") {
    BasisSpec spec = cubic_spec(5, 0.0, 1.0);
    Basis clamped = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 1));
    ClampStats stats;
    Eigen::VectorXd w(1);
    w << 1.7;
    Eigen::VectorXd p = clamped.eval_point(w, &stats);
    CHECK(stats.clamped.load() == 1);
    CHECK(p[4] == Catch::Approx(1.0).margin(1e-14));

    spec.clamp = false;
    Basis strict = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 1));
    CHECK_THROWS_AS(strict.eval_point(w), DataError);
}

TEST_CASE("zero-dimensional basis is the intercept") {
    BasisSpec spec;
    spec.kind = BasisKind::bracket;
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd(3, 0));
    CHECK(basis.dimension() == 1);
    Eigen::VectorXd p = basis.eval_point(Eigen::VectorXd(0));
    CHECK(p[0] == 1.0);
}

TEST_CASE("dimension mismatch in evaluate_policy is rejected") {
    BasisSpec spec = cubic_spec(5, 0.0, 1.0);
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 1));
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd w(1);
    w << 0.5;
    CHECK_THROWS_AS(evaluate_policy(beta, basis, w), DataError);
}

TEST_CASE("squared-space dimension bound is reported") {
    BasisSpec spec = cubic_spec(6, 0.0, 1.0);
    Basis basis = Basis::resolve(spec, Eigen::MatrixXd::Zero(1, 1));
    CHECK(basis.squared_space_dim_bound() >= basis.dimension());
}
