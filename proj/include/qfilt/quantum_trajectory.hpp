#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qfilt/operator_algebra.hpp"

namespace qfilt {

/// Hamiltonian H and measured coupling L of a single diffusive (homodyne) channel.
struct DiffusiveModel {
    Operator H;
    Operator L;

    DiffusiveModel() = default;
    DiffusiveModel(Operator H_, Operator L_);
    Eigen::Index dim() const { return H.rows(); }
};

/// Euler-Maruyama is the default; Milstein adds the (dW^2 - dt) correction of the diffusion term.
/// kraus applies M rho M^dag with M = I + K dt + L dy + L^2 (dy^2 - dt) / 2, which keeps rho positive
/// and pure states pure (dy is the raw record increment).
enum class StepScheme { euler, milstein, kraus };

/// Preallocated stepper for the stochastic master equation of one model.
class SmeStepper {
public:
    explicit SmeStepper(const DiffusiveModel& model, StepScheme scheme = StepScheme::euler);

    /// Tr[(L + L^dag) rho]
    double signal(const Operator& rho) const;
    /// Advances rho in place using the innovation dW; renormalizes the trace and Hermitizes.
    void step_innovation(Operator& rho, double dW, double dt, long step_index = -1);
    /// Advances rho given the raw measurement increment dY; returns the innovation used.
    double step(Operator& rho, double dY, double dt, long step_index = -1);

    const DiffusiveModel& model() const { return model_; }

private:
    DiffusiveModel model_;
    StepScheme scheme_;
    Operator K_;   // -iH - L^dag L / 2
    Operator Ld_, L2_;
    Operator a_, b_, c_, drho_;
};

/// Preallocated stepper for the pure-state unraveling.
class SseStepper {
public:
    explicit SseStepper(const DiffusiveModel& model, StepScheme scheme = StepScheme::euler);

    cplx mean_L(const Ket& psi) const;
    void step_innovation(Ket& psi, double dW, double dt, long step_index = -1);
    double step(Ket& psi, double dY, double dt, long step_index = -1);

private:
    DiffusiveModel model_;
    StepScheme scheme_;
    Operator K_;  // -iH - L^dag L / 2
    Operator L2_;
    Ket Lpsi_, Kpsi_, b_, Lb_, dpsi_;
};

/// One filter step from the raw measurement increment: dW = dY - Tr[(L + L^dag) rho] dt.
Operator sme_step(const DiffusiveModel& model, const Operator& rho, double dY, double dt,
                  StepScheme scheme = StepScheme::euler);
/// One filter step driven directly by the innovation.
Operator sme_step_innovation(const DiffusiveModel& model, const Operator& rho, double dW, double dt,
                             StepScheme scheme = StepScheme::euler);
/// One pure-state step driven by the innovation dW.
Ket sse_step(const DiffusiveModel& model, const Ket& psi, double dW, double dt, StepScheme scheme = StepScheme::euler);

struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<double> dY;
    std::vector<double> dW;
    std::vector<std::vector<double>> expectations;  // one series per observable, Re Tr[O rho]
    std::uint64_t seed = 0;
    Operator final_state;
};

struct TruthOptions {
    long stride = 1;                 // store every stride-th step
    bool store_increments = true;    // dY and dW per step (ignores stride)
    StepScheme scheme = StepScheme::euler;
};

/// Simulates the conditional state as the physical system: dY = Tr[(L + L^dag) rho] dt + dW with fresh noise.
TrajectoryRecord simulate_truth(const DiffusiveModel& model, const Operator& rho0, double T, double dt,
                                std::uint64_t seed, const std::vector<Operator>& observables,
                                const TruthOptions& opts = {}, std::uint64_t stream = 0);

/// Feeds a stored record back through the filter and returns the same observable series.
std::vector<std::vector<double>> replay_record(const DiffusiveModel& model, const Operator& rho0,
                                               const TrajectoryRecord& record,
                                               const std::vector<Operator>& observables, long stride = 1);

/// Qubit model H = B sigma_y, L = sqrt(kappa) sigma_z.
DiffusiveModel qubit_field_model(double B, double kappa);

/// Bloch-angle filter step with <sigma_z> = sin(theta); returns the new angle.
double bloch_angle_step(double theta, double dM, double B, double kappa, double dt,
                        StepScheme scheme = StepScheme::euler);

/// Innovation used by the Bloch-angle filter.
inline double bloch_angle_innovation(double theta, double dM, double kappa, double dt) {
    return dM - 2.0 * std::sqrt(kappa) * std::sin(theta) * dt;
}

}  // namespace qfilt
