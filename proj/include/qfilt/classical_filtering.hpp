#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "qfilt/sde_engine.hpp"

namespace qfilt {

struct LinearCoefficients {
    Eigen::MatrixXd A;  // n x n
    Eigen::MatrixXd B;  // n x k
    Eigen::MatrixXd C;  // m x n
    Eigen::MatrixXd D;  // m x m
};

/// dX = A X dt + B dW,  dY = C X dt + D dV.
/// With shared_noise the system and observation are driven by the same Wiener process (k == m),
/// which turns the gain into (P C^T + B D^T)(D D^T)^-1.
struct LinearModel {
    std::function<LinearCoefficients(double t)> coefficients;
    bool shared_noise = false;

    static LinearModel constant(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C, Eigen::MatrixXd D);
};

struct KalmanState {
    Eigen::VectorXd estimate;
    Eigen::MatrixXd covariance;
};

/// Right-hand side of the covariance equation for the given coefficients.
Eigen::MatrixXd riccati_rhs(const LinearCoefficients& c, const Eigen::MatrixXd& P, bool shared_noise = false);

/// Euler step of the Kalman-Bucy filter; the covariance is re-symmetrized afterwards.
KalmanState kalman_step(const LinearModel& model, const KalmanState& state, const Eigen::VectorXd& dy, double t,
                        double dt);

/// Innovation increment D^-1 (dy - C x dt) used by kalman_step.
Eigen::VectorXd kalman_innovation(const LinearCoefficients& c, const Eigen::VectorXd& estimate,
                                  const Eigen::VectorXd& dy, double dt);

/// Covariance at time t from the doubled linear system d[X;Y] = [[A, BB^T],[C^T R^-1 C, -A^T]] [X;Y],
/// P = X Y^-1, integrated with RK4 at `steps` steps (0 picks a step of at most 1e-3).
Eigen::MatrixXd riccati_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                              const Eigen::MatrixXd& D, const Eigen::MatrixXd& P0, double t, long steps = 0);

struct BrownianDemoRecord {
    std::vector<double> time;
    std::vector<double> y;         // integrated observation Y_t
    std::vector<double> x;         // true position
    std::vector<double> x_est;     // pi_t[x]
    std::vector<double> xi_est;    // pi_t[xi]
    std::vector<Eigen::Matrix2d> covariance;
};

/// Model matrices for dx = xi dt + dW, dy = x dt + dV with state (x, xi).
LinearModel brownian_parameter_model();

/// Simulates the forced particle and filters (x, xi); prior P0 = diag(0, prior_var), estimate zero.
/// Stores every `stride`-th step.
BrownianDemoRecord brownian_parameter_demo(double xi_true, double T, double dt, std::uint64_t seed,
                                           double prior_var = 100.0, long stride = 1);

/// Same demo driven by explicit process and sensor increments.
BrownianDemoRecord brownian_parameter_demo(double xi_true, const WienerPath& process, const WienerPath& sensor,
                                           double prior_var = 100.0, long stride = 1);

}  // namespace qfilt
