#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rlim/numerics.hpp"
#include "rlim/ode.hpp"
#include "rlim/rng.hpp"

using namespace rlim;

TEST_CASE("rng: identical (seed, stream) reproduces the sequence") {
    Rng a(42, "a"), b(42, "a");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: distinct streams are uncorrelated") {
    Rng a(42, "a"), b(42, "b");
    const int n = 100000;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        const double x = a.uniform01();
        const double y = b.uniform01();
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    const double corr = (sxy / n - sx / n * sy / n) /
                        std::sqrt((sxx / n - sx / n * sx / n) *
                                  (syy / n - sy / n * sy / n));
    CHECK(std::abs(corr) < 0.02);
}

TEST_CASE("rng: seed changes the first sample") {
    Rng a(42, "a"), b(43, "a");
    CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("rng: derived streams are independent of scheduling") {
    Rng root(7, "root");
    Rng c1 = root.derive("child");
    root.next_u64();  // consuming the parent must not affect the child
    Rng c2 = Rng(7, "root").derive("child");
    CHECK(c1.next_u64() == c2.next_u64());
}

TEST_CASE("sample_centered: moments and support") {
    Rng rng(1, "m");
    SUBCASE("zero variance is the zero vector") {
        const auto v = sample_centered(rng, {DistFamily::gaussian, 0.0}, 100);
        CHECK(v.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("gaussian variance within 1%") {
        const int n = 1000000;
        const auto v = sample_centered(rng, {DistFamily::gaussian, 1.0}, n);
        CHECK(std::abs(v.squaredNorm() / n - 1.0) < 0.01);
    }
    SUBCASE("uniform support bound") {
        const auto v = sample_centered(rng, {DistFamily::uniform, 1.0}, 100000);
        CHECK(v.cwiseAbs().maxCoeff() <= std::sqrt(3.0));
        CHECK(std::abs(v.squaredNorm() / v.size() - 1.0) < 0.02);
    }
    SUBCASE("sampler moment bounds at n = 1e5") {
        const int n = 100000;
        for (auto family : {DistFamily::gaussian, DistFamily::uniform}) {
            Rng r(3, "mom");
            const auto v = sample_centered(r, {family, 2.0}, n);
            const double mean = v.mean();
            const double var = v.squaredNorm() / n - mean * mean;
            CHECK(std::abs(mean) < 4.0 * std::sqrt(2.0) / std::sqrt(double(n)));
            CHECK(std::abs(var - 2.0) < 5.0 * 2.0 * std::sqrt(2.0 / n));
        }
    }
    SUBCASE("negative variance rejected") {
        CHECK_THROWS_AS(sample_centered(rng, {DistFamily::gaussian, -1.0}, 3),
                        InvalidConfigError);
    }
}

TEST_CASE("rms_norm") {
    Eigen::VectorXd v(4);
    v << 1, 1, 1, 1;
    CHECK(rms_norm(v) == doctest::Approx(1.0));
    Eigen::VectorXd w(2);
    w << 3, 4;
    CHECK(rms_norm(w) == doctest::Approx(std::sqrt(25.0 / 2.0)));
    for (int d : {1, 7, 256}) {
        CHECK(rms_norm(Eigen::VectorXd::Ones(d)) == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(rms_norm(Eigen::VectorXd()), InvalidInputError);
}

TEST_CASE("rk4: zero field leaves state unchanged") {
    Eigen::VectorXd y(3);
    y << 1, -2, 3;
    const auto f = [](double, const Eigen::VectorXd& v) {
        return Eigen::VectorXd::Zero(v.size()).eval();
    };
    CHECK((rk4_step(f, y, 0.0, 0.1) - y).norm() == 0.0);
}

TEST_CASE("rk4: exponential oracle at n=100 within 1e-7") {
    const auto f = [](double, const Eigen::VectorXd& v) { return v; };
    Eigen::VectorXd y = Eigen::VectorXd::Ones(1);
    const SGrid grid(100);
    const auto traj = rk4_integrate(f, y, grid, true);
    CHECK(std::abs(traj.back()[0] - std::exp(1.0)) < 1e-7);
}

TEST_CASE("rk4: order four on the exponential oracle") {
    const auto f = [](double, const Eigen::VectorXd& v) { return v; };
    const auto err_at = [&](int n) {
        const auto traj = rk4_integrate(f, Eigen::VectorXd::Ones(1), SGrid(n), true);
        return std::abs(traj.back()[0] - std::exp(1.0));
    };
    const double ratio = err_at(50) / err_at(100);
    CHECK(ratio >= 14.0);
    CHECK(ratio <= 18.0);
}

TEST_CASE("rk4: backward then forward returns to the start") {
    const auto f = [](double, const Eigen::VectorXd& v) { return (-v).eval(); };
    Eigen::VectorXd y0 = Eigen::VectorXd::Ones(2) * 0.7;
    const SGrid grid(100);
    const auto fwd = rk4_integrate(f, y0, grid, true);
    const auto back = rk4_integrate(f, fwd.back(), grid, false);
    CHECK((back.front() - y0).norm() < 1e-6);
}

TEST_CASE("rk4: overflow carries position") {
    const auto f = [](double, const Eigen::VectorXd& v) {
        return (v.array().square() * 1e200).matrix().eval();
    };
    Eigen::VectorXd y = Eigen::VectorXd::Ones(1) * 1e200;
    CHECK_THROWS_AS(rk4_step(f, y, 0.25, 0.1), OverflowError);
}

TEST_CASE("finite_diff_gradient") {
    SUBCASE("constant function has zero gradient") {
        const auto g = finite_diff_gradient([](const Eigen::VectorXd&) { return 3.0; },
                                            Eigen::VectorXd::Ones(4), 1e-5);
        CHECK(g.cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("quadratic gradient is x") {
        Eigen::VectorXd x(2);
        x << 1, 2;
        const auto g = finite_diff_gradient(
            [](const Eigen::VectorXd& v) { return 0.5 * v.squaredNorm(); }, x, 1e-5);
        CHECK((g - x).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("ols_fit recovers an exact line") {
    Eigen::VectorXd x(5), y(5);
    for (int i = 0; i < 5; ++i) {
        x[i] = i;
        y[i] = 2.5 - 0.5 * i;
    }
    const auto fit = ols_fit(x, y);
    CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(fit.r2 == doctest::Approx(1.0));
}
