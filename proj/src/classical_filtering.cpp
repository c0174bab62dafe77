#include "qfilt/classical_filtering.hpp"

#include <cmath>

#include "qfilt/errors.hpp"
#include "qfilt/sde_engine.hpp"

namespace qfilt {

namespace {

Eigen::MatrixXd observation_precision(const Eigen::MatrixXd& D) {
    if (D.rows() != D.cols()) throw InvalidArgument("D must be square");
    const Eigen::MatrixXd R = D * D.transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(D);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(s.size() - 1) <= 0.0 || s(0) / s(s.size() - 1) > 1e12)
        throw InvalidArgument("observation noise matrix D is singular");
    return R.inverse();
}

// P C^T + B D^T (shared noise) or P C^T
Eigen::MatrixXd cross_term(const LinearCoefficients& c, const Eigen::MatrixXd& P, bool shared_noise) {
    Eigen::MatrixXd S = P * c.C.transpose();
    if (shared_noise) S += c.B * c.D.transpose();
    return S;
}

}  // namespace

LinearModel LinearModel::constant(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C, Eigen::MatrixXd D) {
    LinearCoefficients c{std::move(A), std::move(B), std::move(C), std::move(D)};
    LinearModel m;
    m.coefficients = [c](double) { return c; };
    return m;
}

Eigen::MatrixXd riccati_rhs(const LinearCoefficients& c, const Eigen::MatrixXd& P, bool shared_noise) {
    const Eigen::MatrixXd Rinv = observation_precision(c.D);
    const Eigen::MatrixXd S = cross_term(c, P, shared_noise);
    return c.A * P + P * c.A.transpose() + c.B * c.B.transpose() - S * Rinv * S.transpose();
}

Eigen::VectorXd kalman_innovation(const LinearCoefficients& c, const Eigen::VectorXd& estimate,
                                  const Eigen::VectorXd& dy, double dt) {
    return c.D.partialPivLu().solve(dy - c.C * estimate * dt);
}

KalmanState kalman_step(const LinearModel& model, const KalmanState& state, const Eigen::VectorXd& dy, double t,
                        double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    const LinearCoefficients c = model.coefficients(t);
    const Eigen::MatrixXd Rinv = observation_precision(c.D);
    if (dy.size() != c.C.rows()) throw InvalidArgument("observation increment has the wrong length");

    const Eigen::MatrixXd gain = cross_term(c, state.covariance, model.shared_noise) * Rinv;
    KalmanState next;
    next.estimate = state.estimate + c.A * state.estimate * dt + gain * (dy - c.C * state.estimate * dt);
    next.covariance = state.covariance + riccati_rhs(c, state.covariance, model.shared_noise) * dt;
    next.covariance = 0.5 * (next.covariance + next.covariance.transpose()).eval();
    if (!next.estimate.allFinite() || !next.covariance.allFinite()) throw NumericFailure("Kalman step diverged");
    return next;
}

Eigen::MatrixXd riccati_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                              const Eigen::MatrixXd& D, const Eigen::MatrixXd& P0, double t, long steps) {
    const Eigen::Index n = A.rows();
    if (A.cols() != n || P0.rows() != n || P0.cols() != n || B.rows() != n || C.cols() != n)
        throw InvalidArgument("Riccati coefficient dimensions do not conform");
    if (t < 0.0) throw InvalidArgument("t must be non-negative");
    if (t == 0.0) return P0;
    const Eigen::MatrixXd Rinv = observation_precision(D);

    Eigen::MatrixXd G(2 * n, 2 * n);
    G << A, B * B.transpose(), C.transpose() * Rinv * C, -A.transpose();

    Eigen::MatrixXd Z(2 * n, n);
    Z << P0, Eigen::MatrixXd::Identity(n, n);

    if (steps <= 0) steps = std::max(1L, static_cast<long>(std::ceil(t / 1e-3)));
    const double h = t / static_cast<double>(steps);
    auto f = [&G](double, const Eigen::MatrixXd& z) -> Eigen::MatrixXd { return G * z; };
    // Y must stay invertible on [0, t]: watch det(Y) for sign changes and for collapse relative to |Z|.
    auto singular = [n](const Eigen::MatrixXd& z) {
        const Eigen::MatrixXd Y = z.bottomRows(n);
        const double s_min = Eigen::JacobiSVD<Eigen::MatrixXd>(Y).singularValues().minCoeff();
        return s_min <= 1e-12 * z.norm();
    };
    double det_prev = Z.bottomRows(n).determinant();
    for (long s = 0; s < steps; ++s) {
        Z = rk4_step(f, s * h, Z, h);
        const double det = Z.bottomRows(n).determinant();
        if (det * det_prev <= 0.0 || singular(Z)) throw SingularPropagation("Y became singular", (s + 1) * h);
        det_prev = det;
    }

    const Eigen::MatrixXd X = Z.topRows(n);
    const Eigen::MatrixXd Y = Z.bottomRows(n);
    // P = X Y^-1  <=>  Y^T P^T = X^T
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Y.transpose());
    Eigen::MatrixXd P = lu.solve(X.transpose()).transpose();
    P = 0.5 * (P + P.transpose()).eval();
    if (!P.allFinite()) throw SingularPropagation("non-finite covariance", t);
    return P;
}

LinearModel brownian_parameter_model() {
    Eigen::MatrixXd A(2, 2), B(2, 1), C(1, 2), D(1, 1);
    A << 0, 1, 0, 0;
    B << 1, 0;
    C << 1, 0;
    D << 1;
    return LinearModel::constant(A, B, C, D);
}

BrownianDemoRecord brownian_parameter_demo(double xi_true, double T, double dt, std::uint64_t seed, double prior_var,
                                           long stride) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    const long steps = std::max(1L, static_cast<long>(std::llround(T / dt)));
    const WienerPath process = wiener_increments(1, steps, dt, seed, 0);
    const WienerPath sensor = wiener_increments(1, steps, dt, seed, 1);
    return brownian_parameter_demo(xi_true, process, sensor, prior_var, stride);
}

BrownianDemoRecord brownian_parameter_demo(double xi_true, const WienerPath& process, const WienerPath& sensor,
                                           double prior_var, long stride) {
    if (process.steps() != sensor.steps() || process.dt != sensor.dt)
        throw InvalidArgument("process and sensor paths must share steps and dt");
    if (stride < 1) stride = 1;
    const double dt = process.dt;
    const long steps = static_cast<long>(process.steps());
    const LinearModel model = brownian_parameter_model();

    // truth: dx = xi dt + dW as an Ito system stepped by the Euler engine
    SdeSystem truth;
    truth.n = 1;
    truth.m = 1;
    truth.autonomous = true;
    truth.drift = [xi_true](double, const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(1, xi_true); };
    truth.diffusion = [](double, const Eigen::VectorXd&, int) { return Eigen::VectorXd::Ones(1); };

    Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    KalmanState ks{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2)};
    ks.covariance(1, 1) = prior_var;
    double Y = 0.0;

    BrownianDemoRecord rec;
    auto store = [&](double t) {
        rec.time.push_back(t);
        rec.y.push_back(Y);
        rec.x.push_back(x(0));
        rec.x_est.push_back(ks.estimate(0));
        rec.xi_est.push_back(ks.estimate(1));
        rec.covariance.push_back(ks.covariance);
    };
    store(0.0);
    for (long s = 0; s < steps; ++s) {
        const double t = s * dt;
        const Eigen::VectorXd dy = Eigen::VectorXd::Constant(1, x(0) * dt + sensor.increments(0, s));
        Y += dy(0);
        ks = kalman_step(model, ks, dy, t, dt);
        x = euler_step(truth, x, t, dt, process.increments.col(s));
        if ((s + 1) % stride == 0 || s + 1 == steps) store(t + dt);
    }
    return rec;
}

}  // namespace qfilt
