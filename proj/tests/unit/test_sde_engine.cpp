#include <cmath>
#include <vector>

#include "doctest.h"
#include "qfilt/errors.hpp"
#include "qfilt/operator_algebra.hpp"
#include "qfilt/sde_engine.hpp"

using namespace qfilt;

namespace {

SdeSystem scalar(std::function<double(double)> a, std::function<double(double)> b, bool autonomous = true) {
    SdeSystem s;
    s.n = 1;
    s.m = 1;
    s.autonomous = autonomous;
    s.drift = [a](double, const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, a(x(0))); };
    s.diffusion = [b](double, const Eigen::VectorXd& x, int) { return Eigen::VectorXd::Constant(1, b(x(0))); };
    return s;
}

Eigen::VectorXd vec1(double v) { return Eigen::VectorXd::Constant(1, v); }

// least-squares slope of log(err) against log(dt)
double loglog_slope(const std::vector<double>& dts, const std::vector<double>& errs) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(dts.size());
    for (std::size_t i = 0; i < dts.size(); ++i) {
        const double x = std::log(dts[i]), y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("wiener increments are deterministic per seed and stream") {
    const WienerPath a = wiener_increments(2, 100, 1e-3, 42);
    const WienerPath b = wiener_increments(2, 100, 1e-3, 42);
    CHECK((a.increments.array() == b.increments.array()).all());
    const WienerPath c = wiener_increments(2, 100, 1e-3, 42, 1);
    CHECK_FALSE((a.increments.array() == c.increments.array()).all());
}

TEST_CASE("wiener increments have variance dt") {
    const long n = 1000000;
    const double dt = 1e-3;
    const WienerPath p = wiener_increments(1, n, dt, 7);
    const double mean = p.increments.mean();
    const double var = (p.increments.array() - mean).square().sum() / static_cast<double>(n - 1);
    // chi-square: sd of the sample variance is dt sqrt(2/n), about 0.14% of dt
    CHECK(std::abs(var - dt) < 0.01 * dt);
    CHECK(std::abs(mean) < 5.0 * std::sqrt(dt / static_cast<double>(n)));
}

TEST_CASE("wiener increments reject bad arguments") {
    CHECK_THROWS_AS(wiener_increments(1, 10, 0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(wiener_increments(1, 0, 1e-3, 1), InvalidArgument);
}

TEST_CASE("euler step trivial cases") {
    const auto zero = scalar([](double) { return 0.0; }, [](double) { return 0.0; });
    CHECK(euler_step(zero, vec1(3.0), 0.0, 0.1, vec1(0.7))(0) == 3.0);
    const auto one = scalar([](double) { return 1.0; }, [](double) { return 0.0; });
    CHECK(std::abs(euler_step(one, vec1(2.0), 0.0, 0.1, vec1(0.3))(0) - 2.1) < 1e-15);
}

TEST_CASE("euler step rejects non-finite coefficients and Stratonovich systems") {
    const auto bad = scalar([](double) { return std::nan(""); }, [](double) { return 0.0; });
    CHECK_THROWS_AS(euler_step(bad, vec1(1.0), 0.0, 0.1, vec1(0.0)), NumericFailure);
    auto strat = scalar([](double) { return 0.0; }, [](double x) { return x; });
    strat.interpretation = Interpretation::stratonovich;
    CHECK_THROWS_AS(euler_step(strat, vec1(1.0), 0.0, 0.1, vec1(0.0)), InvalidArgument);
}

TEST_CASE("euler strong error on geometric Brownian motion scales as dt^0.5") {
    const auto gbm = scalar([](double) { return 0.0; }, [](double x) { return x; });
    const int seeds = 400;
    std::vector<double> dts, errs;
    for (int level = 4; level <= 9; ++level) {
        const long steps = 1L << level;
        const double dt = 1.0 / static_cast<double>(steps);
        double err = 0.0;
        for (int s = 0; s < seeds; ++s) {
            const WienerPath w = wiener_increments(1, steps, dt, 1000 + static_cast<std::uint64_t>(s));
            Eigen::VectorXd x = vec1(1.0);
            for (long k = 0; k < steps; ++k) x = euler_step(gbm, x, k * dt, dt, w.increments.col(k));
            const double exact = std::exp(w.increments.sum() - 0.5);
            err += std::abs(x(0) - exact);
        }
        dts.push_back(dt);
        errs.push_back(err / seeds);
    }
    const double slope = loglog_slope(dts, errs);
    CHECK(slope > 0.35);
    CHECK(slope < 0.7);
}

TEST_CASE("euler step is affine for linear systems") {
    SdeSystem lin;
    lin.n = 2;
    lin.m = 1;
    Eigen::Matrix2d A;
    A << -1.0, 0.5, 0.2, -0.3;
    lin.drift = [A](double, const Eigen::VectorXd& x) { return Eigen::VectorXd(A * x); };
    lin.diffusion = [](double, const Eigen::VectorXd& x, int) { return Eigen::VectorXd(0.3 * x); };
    const Eigen::Vector2d x1(1.0, -2.0), x2(0.5, 4.0);
    const Eigen::VectorXd dW = vec1(0.01);
    const double a = 0.4, b = -1.3;
    const Eigen::VectorXd lhs = euler_step(lin, a * x1 + b * x2, 0.0, 1e-2, dW);
    const Eigen::VectorXd rhs = a * euler_step(lin, x1, 0.0, 1e-2, dW) + b * euler_step(lin, x2, 0.0, 1e-2, dW);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("integrators are bitwise deterministic") {
    const auto sys = scalar([](double x) { return -x; }, [](double x) { return 0.2 * std::sin(x); });
    const WienerPath w = wiener_increments(1, 500, 1e-3, 9);
    Eigen::VectorXd a = vec1(0.3), b = vec1(0.3), c = vec1(0.3), d = vec1(0.3);
    for (long k = 0; k < 500; ++k) {
        a = euler_step(sys, a, 0.0, 1e-3, w.increments.col(k));
        b = euler_step(sys, b, 0.0, 1e-3, w.increments.col(k));
        c = predictor_corrector_step(sys, c, 1e-3, w.increments(0, k));
        d = predictor_corrector_step(sys, d, 1e-3, w.increments(0, k));
    }
    CHECK(a(0) == b(0));
    CHECK(c(0) == d(0));
}

TEST_CASE("predictor-corrector trivial and deterministic cases") {
    const auto zero = scalar([](double) { return 0.0; }, [](double) { return 0.0; });
    CHECK(predictor_corrector_step(zero, vec1(1.5), 0.1, 0.3)(0) == 1.5);

    const auto decay = scalar([](double x) { return -x; }, [](double) { return 0.0; });
    // noiseless case: Euler support, trapezoid predictor, trapezoid corrector through the predicted point
    const double dt = 0.05, x = 0.8;
    const double support = x - dt * x;
    const double predicted = x + 0.5 * dt * (-support - x);
    const double corrected = x + 0.5 * dt * (-predicted - x);
    CHECK(std::abs(predictor_corrector_step(decay, vec1(x), dt, 0.0)(0) - corrected) < 1e-14);
}

TEST_CASE("predictor-corrector weak error on Ornstein-Uhlenbeck scales as dt^2") {
    // With constant diffusion the step is affine in dW with zero-mean noise terms, so the mean path is the
    // noiseless path. Check the affine property, then the order of the mean error.
    const auto ou = scalar([](double x) { return -x; }, [](double) { return 1.0; });
    const double dt = 0.01;
    const double m0 = predictor_corrector_step(ou, vec1(0.7), dt, 0.0)(0);
    const double mp = predictor_corrector_step(ou, vec1(0.7), dt, 0.05)(0);
    const double mm = predictor_corrector_step(ou, vec1(0.7), dt, -0.05)(0);
    CHECK(std::abs(0.5 * (mp + mm) - m0) < 1e-15);

    std::vector<double> dts, errs;
    for (int level = 3; level <= 7; ++level) {
        const long steps = 1L << level;
        const double h = 1.0 / static_cast<double>(steps);
        Eigen::VectorXd x = vec1(1.0);
        for (long k = 0; k < steps; ++k) x = predictor_corrector_step(ou, x, h, 0.0);
        dts.push_back(h);
        errs.push_back(std::abs(x(0) - std::exp(-1.0)));
    }
    const double slope = loglog_slope(dts, errs);
    CHECK(slope > 1.8);
    CHECK(slope < 2.2);
}

TEST_CASE("predictor-corrector requires one channel and autonomous coefficients") {
    SdeSystem two;
    two.n = 1;
    two.m = 2;
    two.autonomous = true;
    two.drift = [](double, const Eigen::VectorXd& x) { return x; };
    two.diffusion = [](double, const Eigen::VectorXd& x, int) { return x; };
    CHECK_THROWS_AS(predictor_corrector_step(two, vec1(1.0), 0.1, 0.0), UnsupportedConfiguration);
    const auto timed = scalar([](double x) { return x; }, [](double x) { return x; }, false);
    CHECK_THROWS_AS(predictor_corrector_step(timed, vec1(1.0), 0.1, 0.0), UnsupportedConfiguration);
}

TEST_CASE("Ito and Stratonovich conversion") {
    const auto constant_b = scalar([](double x) { return std::cos(x); }, [](double) { return 0.4; });
    const SdeSystem s1 = ito_to_stratonovich(constant_b);
    CHECK(s1.interpretation == Interpretation::stratonovich);
    CHECK(std::abs(s1.drift(0.0, vec1(0.3))(0) - std::cos(0.3)) < 1e-12);

    const auto linear = scalar([](double) { return 0.0; }, [](double x) { return x; });
    const SdeSystem s2 = ito_to_stratonovich(linear);
    for (double x : {-2.0, 0.5, 3.0}) CHECK(std::abs(s2.drift(0.0, vec1(x))(0) + x / 2.0) < 1e-8);

    // round trip within 10 h^2 with h = 1e-6 (1 + |x|)
    const auto curved = scalar([](double x) { return std::sin(x); }, [](double x) { return 0.5 + 0.3 * x * x; });
    const SdeSystem back = stratonovich_to_ito(ito_to_stratonovich(curved));
    CHECK(back.interpretation == Interpretation::ito);
    for (double x : {-1.0, 0.2, 1.7}) {
        const double h = 1e-6 * (1.0 + std::abs(x));
        CHECK(std::abs(back.drift(0.0, vec1(x))(0) - std::sin(x)) < 10.0 * h * h + 1e-9);
        CHECK(back.diffusion(0.0, vec1(x), 0)(0) == curved.diffusion(0.0, vec1(x), 0)(0));
    }
    CHECK_THROWS_AS(stratonovich_to_ito(curved), InvalidArgument);
}

TEST_CASE("conversion reproduces the Stratonovich double-pass SSE") {
    const double F = 2.5, M = 1.3, K = 0.7, kk = std::sqrt(K * M);
    const auto s = spin_operators(F);
    const Eigen::Index d = s.Jz.rows();
    const Operator Id = Operator::Identity(d, d);
    auto ex = [](const Operator& A, const Eigen::VectorXcd& p) { return (p.adjoint() * A * p)(0); };
    // Ito SSE at zero field
    const SdeSystem ito = complex_system(
        static_cast<int>(d), 1,
        [&](double, const Eigen::VectorXcd& p) -> Eigen::VectorXcd {
            const cplx z = ex(s.Jz, p);
            const Operator dz = s.Jz - z * Id;
            return (-M / 2.0 * dz * dz + I_unit * kk * s.Jy * (s.Jz + z * Id) - K / 2.0 * s.Jy * s.Jy) * p;
        },
        [&](double, const Eigen::VectorXcd& p, int) -> Eigen::VectorXcd {
            return (std::sqrt(M) * (s.Jz - ex(s.Jz, p) * Id) + I_unit * std::sqrt(K) * s.Jy) * p;
        },
        Interpretation::ito);
    const SdeSystem strat = ito_to_stratonovich(ito);
    for (int r = 0; r < 5; ++r) {
        Eigen::VectorXcd p = Eigen::VectorXd::Random(d).cast<cplx>();
        p.normalize();
        const Eigen::VectorXcd got = complexify(strat.drift(0.0, realify(p)));
        const cplx z = ex(s.Jz, p);
        const Operator dz = s.Jz - z * Id;
        const cplx var = ex(s.Jz * s.Jz, p) - z * z;
        const Eigen::VectorXcd expected = (-M * (dz * dz - var * Id) - kk / 2.0 * s.Jx +
                                           2.0 * I_unit * kk * z * s.Jy + I_unit * kk * ex(s.Jz * s.Jy, p) * Id) *
                                          p;
        CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("Ito mean agrees with the re-converted Stratonovich form") {
    const auto sys = scalar([](double x) { return -0.5 * x; }, [](double x) { return 0.3 + 0.2 * std::sin(x); });
    const SdeSystem again = stratonovich_to_ito(ito_to_stratonovich(sys));
    const double dt = 1e-2;
    const long steps = 100;
    double m1 = 0.0, m2 = 0.0;
    const int seeds = 500;
    for (int s = 0; s < seeds; ++s) {
        const WienerPath w = wiener_increments(1, steps, dt, 77 + static_cast<std::uint64_t>(s));
        Eigen::VectorXd a = vec1(1.0), b = vec1(1.0);
        for (long k = 0; k < steps; ++k) {
            a = euler_step(sys, a, k * dt, dt, w.increments.col(k));
            b = euler_step(again, b, k * dt, dt, w.increments.col(k));
        }
        m1 += a(0) / seeds;
        m2 += b(0) / seeds;
    }
    CHECK(std::abs(m1 - m2) < 1e-6 + dt);
}

TEST_CASE("realification round trip") {
    Eigen::VectorXcd z(3);
    z << cplx(1, 2), cplx(-3, 0.5), cplx(0, -1);
    const Eigen::VectorXd x = realify(z);
    CHECK(x.size() == 6);
    CHECK(x(1) == 2.0);
    CHECK((complexify(x) - z).norm() == 0.0);
    CHECK_THROWS_AS(complexify(Eigen::VectorXd::Zero(3)), InvalidArgument);
}
