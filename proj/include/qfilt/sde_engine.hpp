#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace qfilt {

enum class Interpretation { ito, stratonovich };

/// dX = a(t,X) dt + sum_j b^j(t,X) dW^j, real state of length n with m channels.
struct SdeSystem {
    using Drift = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x)>;
    using Diffusion = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, int channel)>;

    int n = 0;
    int m = 0;
    Drift drift;
    Diffusion diffusion;
    Interpretation interpretation = Interpretation::ito;
    bool autonomous = false;
};

/// Gaussian stream keyed by (seed, stream); distinct keys give independent sequences.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    double normal() { return gauss_(engine_); }
    double uniform() { return unif_(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> gauss_{0.0, 1.0};
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

struct WienerPath {
    double dt = 0.0;
    Eigen::MatrixXd increments;  // m x steps, each entry ~ N(0, dt)
    std::uint64_t seed = 0;

    Eigen::Index channels() const { return increments.rows(); }
    Eigen::Index steps() const { return increments.cols(); }
};

WienerPath wiener_increments(int m, long steps, double dt, std::uint64_t seed, std::uint64_t stream = 0);

/// One Euler-Maruyama step; no renormalization.
Eigen::VectorXd euler_step(const SdeSystem& sys, const Eigen::VectorXd& x, double t, double dt,
                           const Eigen::VectorXd& dW);

/// Weak order-2 predictor-corrector for a single-channel autonomous Ito system.
Eigen::VectorXd predictor_corrector_step(const SdeSystem& sys, const Eigen::VectorXd& x, double dt, double dW);

/// Stratonovich drift = Ito drift - (1/2) sum_j (Db^j) b^j, with central differences of step 1e-6 (1 + |x_k|).
SdeSystem stratonovich_to_ito(const SdeSystem& sys);
SdeSystem ito_to_stratonovich(const SdeSystem& sys);

/// Interleaves real and imaginary parts: (Re z0, Im z0, Re z1, ...).
Eigen::VectorXd realify(const Eigen::VectorXcd& z);
Eigen::VectorXcd complexify(const Eigen::VectorXd& x);

/// Wraps complex drift/diffusion maps as a real system of twice the dimension.
SdeSystem complex_system(int n_complex, int m,
                         std::function<Eigen::VectorXcd(double, const Eigen::VectorXcd&)> drift,
                         std::function<Eigen::VectorXcd(double, const Eigen::VectorXcd&, int)> diffusion,
                         Interpretation interp);

/// Classical fourth-order Runge-Kutta step for dx/dt = f(t, x).
template <class State, class F>
State rk4_step(F&& f, double t, const State& x, double dt) {
    const State k1 = f(t, x);
    const State k2 = f(t + 0.5 * dt, State(x + (0.5 * dt) * k1));
    const State k3 = f(t + 0.5 * dt, State(x + (0.5 * dt) * k2));
    const State k4 = f(t + dt, State(x + dt * k3));
    return State(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

}  // namespace qfilt
