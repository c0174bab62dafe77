#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Sparse>

#include "qfilt/classical_filtering.hpp"
#include "qfilt/operator_algebra.hpp"
#include "qfilt/parameter_estimation.hpp"
#include "qfilt/quantum_trajectory.hpp"

namespace qfilt {

/// Collective spin F, first-pass strength M, second-pass strength K, gyromagnetic ratio and field.
struct DoublePassParams {
    double F = 0.5;
    double M = 0.0;
    double K = 0.0;
    double gamma = 1.0;
    double B = 0.0;

    void validate() const;
    Eigen::Index dim() const { return static_cast<Eigen::Index>(std::lround(2.0 * F)) + 1; }
};

/// L = sqrt(M) Fz + i sqrt(K) Fy,  H = -gamma B Fy - sqrt(KM) (Fz Fy + Fy Fz) / 2.
DiffusiveModel double_pass_model(const DoublePassParams& p);

/// Euler step of the double-pass filter written out term by term, driven by the photocurrent dZ.
Operator double_pass_sme_step(const DoublePassParams& p, const Operator& rho, double dZ, double dt);

/// Euler step of the pure-state double-pass filter driven by the innovation dW.
/// The closed form assumes <Fy> = 0, which holds on the real-amplitude invariant set.
Ket double_pass_sse_step(const DoublePassParams& p, const Ket& psi, double dW, double dt);

/// Real-amplitude double-pass SSE in the |F,m> basis using banded operators.
/// In this basis Fz and iFy are real, so the flow stays real.
class RealDoublePass {
public:
    explicit RealDoublePass(const DoublePassParams& p);

    double mean_Fz(const Eigen::VectorXd& psi) const;
    /// Euler step with innovation dW at field B; renormalizes.
    void step(Eigen::VectorXd& psi, double B, double dW, double dt) const;
    /// Same step from the photocurrent; returns the innovation used.
    double step_record(Eigen::VectorXd& psi, double B, double dZ, double dt) const;

    const DoublePassParams& params() const { return p_; }
    /// |F,+F_x> with real amplitudes.
    Eigen::VectorXd coherent_x() const;

private:
    DoublePassParams p_;
    Eigen::SparseMatrix<double> Fz_, Gy_;  // Gy = i Fy
    Eigen::SparseMatrix<double> A0_;       // B-independent part of the drift generator
    Eigen::SparseMatrix<double> A1_;       // multiplies <Fz>
    mutable Eigen::VectorXd w_, u_;
};

struct FisherSample {
    double raw = 0.0;    // Tr[(d rho / dB)^2 rho]
    double qfi = 0.0;    // 4 * raw, the pure-state quantum Fisher information
    double bound = 0.0;  // (1/2) raw^(-1/2)
};

/// Co-evolves states at B and B +/- deltaB with one innovation path and forms the central difference.
FisherSample fisher_information_fd(const DoublePassParams& p, double deltaB, double T, double dt,
                                   std::uint64_t seed);

struct FisherAverage {
    double mean_raw = 0.0;
    double sd_raw = 0.0;
    double mean_qfi = 0.0;
    double bound = 0.0;        // (1/2) mean_raw^(-1/2)
    double bound_sigma = 0.0;  // mean_raw^(-3/2) sd_raw / 2
    std::size_t samples = 0;
};

/// Averages fisher_information_fd over seeds base_seed, base_seed + 1, ...
FisherAverage fisher_information_average(const DoublePassParams& p, double deltaB, double T, double dt,
                                         std::uint64_t base_seed, std::size_t count);

/// Exact value for unitary rotation of a spin-1/2 from +x: raw = (gamma T)^2 / 4.
double unitary_fisher_raw(const DoublePassParams& p, double T);

struct GaussianProjectionState {
    double theta = 0.0;
    double xi = 0.0;
};

/// dW = dZ + 2 F sqrt(M) sin(theta) dt
double projection_innovation(const GaussianProjectionState& s, const DoublePassParams& p, double dZ, double dt);

/// Ito step of the projected filter on the Gaussian family.
GaussianProjectionState projection_filter_step(const GaussianProjectionState& s, double dW,
                                               const DoublePassParams& p, double dt);

/// xi_t = ln(1 + 2 F M t) / (8 F)
double projection_xi_closed_form(const DoublePassParams& p, double t);

/// Small-angle linear model over X = [theta, B]; system and observation share the innovation noise.
LinearCoefficients smallangle_kalman_coefficients(const DoublePassParams& p, double t);
LinearModel smallangle_kalman_model(const DoublePassParams& p);

/// Q(theta, phi) = |<theta, phi | psi>|^2 on the tensor grid (rows: theta, cols: phi).
Eigen::MatrixXd q_function(const Ket& psi, const std::vector<double>& thetas, const std::vector<double>& phis);

/// Particles carrying real-amplitude double-pass states at their own field value.
class DoublePassParticles : public ParticleDynamics {
public:
    explicit DoublePassParticles(const DoublePassParams& p);

    double signal(const ParticleEnsemble& e, std::size_t i) const override;
    void advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) override;
    void push_initial(ParticleEnsemble& e, double xi) const override;

private:
    RealDoublePass stepper_;
    Eigen::VectorXd psi0_;
};

struct MagnetometerRecord {
    std::vector<double> dZ;
    std::vector<double> dW;
    std::vector<double> mean_Fz;  // stored every step
};

/// Truth trajectory at params.B from |F,+F_x>; the innovations come from (seed, stream).
MagnetometerRecord magnetometer_truth(const DoublePassParams& p, double T, double dt, std::uint64_t seed,
                                      std::uint64_t stream = 0);

/// Same truth driven by given innovations.
MagnetometerRecord magnetometer_truth(const DoublePassParams& p, const std::vector<double>& dW, double dt);

/// Particle filter with double-pass particles.
ParticleFilterResult magnetometry_particle_filter(const DoublePassParams& p, const std::vector<double>& dZ, double dt,
                                                  const GaussianPrior& prior, const ParticleFilterConfig& cfg);

struct PairedFilterResult {
    ParticleFilterResult single_pass;  // K = 0
    ParticleFilterResult double_pass;
};

/// Single- and double-pass systems driven by the same innovation path, each filtered by its own model.
PairedFilterResult paired_magnetometry_run(const DoublePassParams& p, double T, double dt, const GaussianPrior& prior,
                                           const ParticleFilterConfig& cfg);

}  // namespace qfilt
