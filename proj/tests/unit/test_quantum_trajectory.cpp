#include <cmath>
#include <random>

#include "doctest.h"
#include "qfilt/errors.hpp"
#include "qfilt/quantum_trajectory.hpp"
#include "qfilt/sde_engine.hpp"

using namespace qfilt;

namespace {

Operator bloch_state(double theta) {
    return 0.5 * (Operator::Identity(2, 2) + std::cos(theta) * pauli('X') + std::sin(theta) * pauli('Z'));
}

Operator random_hermitian(Eigen::Index d, std::mt19937_64& g, double norm) {
    std::normal_distribution<double> n;
    Operator A(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) A(i, j) = cplx(n(g), n(g));
    Operator H = A + A.adjoint();
    return H * (norm / H.operatorNorm());
}

Operator random_operator(Eigen::Index d, std::mt19937_64& g, double norm) {
    std::normal_distribution<double> n;
    Operator A(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) A(i, j) = cplx(n(g), n(g));
    return A * (norm / A.operatorNorm());
}

Ket random_ket(Eigen::Index d, std::mt19937_64& g) {
    std::normal_distribution<double> n;
    Ket v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = cplx(n(g), n(g));
    return v / v.norm();
}

}  // namespace

TEST_CASE("model validation") {
    CHECK_THROWS_AS(DiffusiveModel(pauli('X') * I_unit, pauli('Z')), InvalidArgument);
    CHECK_THROWS_AS(DiffusiveModel(pauli('X'), Operator::Identity(3, 3)), InvalidArgument);
}

TEST_CASE("sme step without measurement is a Hamiltonian Euler step") {
    const DiffusiveModel m(pauli('Y'), Operator::Zero(2, 2));
    const Operator rho = bloch_state(0.3);
    const Operator out = sme_step(m, rho, 0.7, 1e-3);
    Operator expected = rho - I_unit * (m.H * rho - rho * m.H) * 1e-3;
    expected /= expected.trace();
    CHECK(max_abs(out - expected) < 1e-15);
    CHECK(std::abs(out.trace() - 1.0) < 1e-15);
}

TEST_CASE("measurement eigenstate is a fixed point") {
    const DiffusiveModel m(Operator::Zero(2, 2), pauli('Z'));
    Operator up = Operator::Zero(2, 2);
    up(0, 0) = 1.0;
    for (double dY : {-1.0, 0.0, 0.3}) CHECK(max_abs(sme_step(m, up, dY, 1e-3) - up) < 1e-15);
}

TEST_CASE("sme reports non-finite states with the step index") {
    const DiffusiveModel m(Operator::Zero(2, 2), pauli('Z'));
    SmeStepper s(m);
    Operator rho = bloch_state(0.1);
    try {
        s.step_innovation(rho, std::nan(""), 1e-3, 12);
        FAIL("expected a numeric failure");
    } catch (const NumericFailure& e) {
        CHECK(e.step() == 12);
    }
}

TEST_CASE("ensemble average of the SME follows the master equation") {
    const double kappa = 1.0, B = 1.0, dt = 1e-4, T = 1.0 / kappa;
    const DiffusiveModel m = qubit_field_model(B, kappa);
    const Operator rho0 = bloch_state(0.0);
    // sampling error of the mean is about 0.45 / sqrt(seeds) per entry
    Operator mean = Operator::Zero(2, 2);
    const int seeds = 5000;
    for (int s = 0; s < seeds; ++s)
        mean += simulate_truth(m, rho0, T, dt, 900 + static_cast<std::uint64_t>(s), {}, {1, false}).final_state /
                static_cast<double>(seeds);
    // deterministic Lindblad oracle
    auto f = [&](double, const Operator& r) -> Operator {
        return Operator(-I_unit * (m.H * r - r * m.H) + lindblad_D(m.L, r));
    };
    Operator r = rho0;
    const long steps = 10000;
    for (long k = 0; k < steps; ++k) r = rk4_step(f, k * T / steps, r, T / steps);
    CHECK(max_abs(mean - r) < 0.02);
}

TEST_CASE("sse step without dynamics leaves the state unchanged") {
    const DiffusiveModel m(Operator::Zero(3, 3), Operator::Zero(3, 3));
    std::mt19937_64 g(1);
    const Ket psi = random_ket(3, g);
    CHECK((sse_step(m, psi, 0.4, 1e-3) - psi).norm() < 1e-15);
}

TEST_CASE("one Milstein sse step matches one sme step on the same innovation") {
    std::mt19937_64 g(2);
    for (int k = 0; k < 20; ++k) {
        const DiffusiveModel m(random_hermitian(4, g, 2.0), random_operator(4, g, 2.0));
        const Ket psi = random_ket(4, g);
        const double dt = 1e-5, dW = std::sqrt(dt) * std::normal_distribution<double>()(g);
        const Ket next = sse_step(m, psi, dW, dt, StepScheme::milstein);
        const Operator rho = sme_step_innovation(m, psi * psi.adjoint(), dW, dt, StepScheme::milstein);
        CHECK(max_abs(next * next.adjoint() - rho) < 1e-6);
    }
}

TEST_CASE("sse and sme trajectories agree on a shared path") {
    std::mt19937_64 g(4);
    const DiffusiveModel m(random_hermitian(3, g, 3.0), random_operator(3, g, 3.0));
    const Ket psi0 = random_ket(3, g);
    const double dt = 1e-5;
    const long steps = 10000;
    const WienerPath w = wiener_increments(1, steps, dt, 12);
    SseStepper s(m, StepScheme::milstein);
    SmeStepper r(m, StepScheme::milstein);
    Ket psi = psi0;
    Operator rho = psi0 * psi0.adjoint();
    double gap = 0.0;
    for (long k = 0; k < steps; ++k) {
        s.step_innovation(psi, w.increments(0, k), dt);
        r.step_innovation(rho, w.increments(0, k), dt);
        gap = std::max(gap, max_abs(psi * psi.adjoint() - rho));
    }
    CHECK(gap < 1e-3);
}

TEST_CASE("real amplitudes stay real under sigma_z measurement") {
    const DiffusiveModel m = qubit_field_model(2.0, 1.0);
    Ket psi(2);
    psi << 0.6, 0.8;
    const WienerPath w = wiener_increments(1, 5000, 1e-4, 5);
    SseStepper s(m);
    double max_imag = 0.0;
    for (long k = 0; k < 5000; ++k) {
        s.step_innovation(psi, w.increments(0, k), 1e-4);
        max_imag = std::max(max_imag, psi.imag().cwiseAbs().maxCoeff());
    }
    CHECK(max_imag == 0.0);
}

TEST_CASE("truth simulation without coupling reports dY equal to dW") {
    const DiffusiveModel m(pauli('X'), Operator::Zero(2, 2));
    const TrajectoryRecord r = simulate_truth(m, bloch_state(0.2), 0.1, 1e-3, 4, {pauli('Z')});
    REQUIRE(r.dY.size() == 100);
    for (std::size_t k = 0; k < r.dY.size(); ++k) CHECK(r.dY[k] == r.dW[k]);
}

TEST_CASE("truth record invariant and bitwise replay") {
    const DiffusiveModel m = qubit_field_model(0.5, 1.0);
    const Operator rho0 = bloch_state(0.0);
    const TrajectoryRecord r = simulate_truth(m, rho0, 0.5, 1e-3, 8, {pauli('Z'), pauli('X')});
    // dY - signal dt == dW per step
    SmeStepper s(m);
    Operator rho = rho0;
    double worst = 0.0;
    for (std::size_t k = 0; k < r.dY.size(); ++k) {
        worst = std::max(worst, std::abs(r.dY[k] - s.signal(rho) * 1e-3 - r.dW[k]));
        s.step(rho, r.dY[k], 1e-3);
    }
    CHECK(worst < 1e-14);
    const auto replay = replay_record(m, rho0, r, {pauli('Z'), pauli('X')});
    REQUIRE(replay.size() == 2);
    CHECK(replay[0] == r.expectations[0]);
    CHECK(replay[1] == r.expectations[1]);
    const TrajectoryRecord again = simulate_truth(m, rho0, 0.5, 1e-3, 8, {pauli('Z'), pauli('X')});
    CHECK(again.dY == r.dY);
}

TEST_CASE("qubit collapse follows the Born rule from +x") {
    const DiffusiveModel m = qubit_field_model(0.0, 1.0);
    int plus = 0;
    const int seeds = 200;
    for (int s = 0; s < seeds; ++s) {
        const TrajectoryRecord r =
            simulate_truth(m, bloch_state(0.0), 5.0, 1e-3, 3000 + static_cast<std::uint64_t>(s), {}, {1, false});
        if (r.final_state(0, 0).real() > 0.5) ++plus;
    }
    CHECK(plus >= 80);
    CHECK(plus <= 120);
}

TEST_CASE("euler sme pre-normalization trace drift is second order") {
    const DiffusiveModel m = qubit_field_model(1.0, 1.0);
    SmeStepper s(m);
    Operator rho = bloch_state(0.4);
    const double dt = 1e-3;
    const WienerPath w = wiener_increments(1, 5000, dt, 6);
    double worst_pre_trace = 0.0;
    for (long k = 0; k < 5000; ++k) {
        const Operator drift = -I_unit * (m.H * rho - rho * m.H) + lindblad_D(m.L, rho);
        const Operator diff = measurement_M(m.L, rho);
        worst_pre_trace = std::max(worst_pre_trace, std::abs((drift * dt + diff * w.increments(0, k)).trace()));
        s.step_innovation(rho, w.increments(0, k), dt);
        CHECK(std::abs(rho.trace().real() - 1.0) < 1e-14);
    }
    CHECK(worst_pre_trace < 5.0 * dt * dt);
}

TEST_CASE("kraus sme keeps positivity and purity along standard runs") {
    for (double kappa : {1.0, 100.0}) {
        const DiffusiveModel m = qubit_field_model(1.0, kappa);
        SmeStepper s(m, StepScheme::kraus);
        Operator rho = bloch_state(0.4);
        const double dt = 1e-3 / kappa;
        const WienerPath w = wiener_increments(1, 5000, dt, 6);
        double min_eig = 1.0, min_purity = 1.0;
        for (long k = 0; k < 5000; ++k) {
            s.step_innovation(rho, w.increments(0, k), dt);
            min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Operator>(rho).eigenvalues().minCoeff());
            min_purity = std::min(min_purity, (rho * rho).trace().real());
            CHECK(std::abs(rho.trace().real() - 1.0) < 1e-14);
        }
        CHECK(min_eig > -1e-6);
        CHECK(min_purity > 1.0 - 1e-4);
    }
}

TEST_CASE("kraus sse and sme agree and track the Milstein filter") {
    std::mt19937_64 g(8);
    const DiffusiveModel m(random_hermitian(3, g, 3.0), random_operator(3, g, 3.0));
    const Ket psi0 = random_ket(3, g);
    const double dt = 1e-5;
    const long steps = 10000;
    const WienerPath w = wiener_increments(1, steps, dt, 13);
    SseStepper sk(m, StepScheme::kraus);
    SmeStepper rk(m, StepScheme::kraus), rm(m, StepScheme::milstein);
    Ket psi = psi0;
    Operator rho = psi0 * psi0.adjoint(), rho_m = rho;
    double gap_pure = 0.0, gap_scheme = 0.0;
    for (long k = 0; k < steps; ++k) {
        sk.step_innovation(psi, w.increments(0, k), dt);
        rk.step_innovation(rho, w.increments(0, k), dt);
        rm.step_innovation(rho_m, w.increments(0, k), dt);
        gap_pure = std::max(gap_pure, max_abs(psi * psi.adjoint() - rho));
        gap_scheme = std::max(gap_scheme, max_abs(rho - rho_m));
    }
    CHECK(gap_pure < 1e-10);
    CHECK(gap_scheme < 1e-3);
}

TEST_CASE("Bloch-angle filter fixed point and Larmor drift") {
    CHECK(bloch_angle_step(M_PI / 2, 2.0 * 1e-3, 0.0, 1.0, 1e-3) == doctest::Approx(M_PI / 2).epsilon(1e-15));
    const double B = 10.0, kappa = 1e-6, dt = 1e-4;
    double th = 0.3;
    for (int k = 0; k < 100; ++k) th = bloch_angle_step(th, 2.0 * std::sqrt(kappa) * std::sin(th) * dt, B, kappa, dt);
    CHECK(std::abs((th - 0.3) / (100 * dt) + 2.0 * B) < 1e-4);
    CHECK_THROWS_AS(bloch_angle_step(0.0, 0.0, 0.0, 0.0, 1e-3), InvalidArgument);
}

TEST_CASE("Bloch-angle filter tracks the density-matrix filter on one record") {
    const double B = 1.0, kappa = 1.0, dt = 1e-5, T = 5.0;
    const DiffusiveModel m = qubit_field_model(B, kappa);
    // both filters use Milstein steps so their discretization errors are first order
    const TrajectoryRecord r =
        simulate_truth(m, bloch_state(0.0), T, dt, 31, {}, {1000000, true, StepScheme::milstein});
    SmeStepper s(m, StepScheme::milstein);
    Operator rho = bloch_state(0.0);
    double th = 0.0, worst = 0.0;
    for (std::size_t k = 0; k < r.dY.size(); ++k) {
        th = bloch_angle_step(th, r.dY[k], B, kappa, dt, StepScheme::milstein);
        s.step(rho, r.dY[k], dt);
        worst = std::max(worst, std::abs(std::sin(th) - (rho(0, 0) - rho(1, 1)).real()));
    }
    CHECK(worst < 1e-4);
}
