#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "qfilt/operator_algebra.hpp"
#include "qfilt/quantum_trajectory.hpp"
#include "qfilt/sde_engine.hpp"

namespace qfilt {

/// Weighted particles: parameter values with their conditional states.
/// Exactly one of the state containers is populated, depending on the dynamics in use.
struct ParticleEnsemble {
    std::vector<double> weights;
    std::vector<double> params;
    std::vector<Operator> states;  // density matrices
    std::vector<Ket> kets;         // pure states
    std::vector<Eigen::VectorXd> vectors;  // pure states with real amplitudes
    std::vector<double> angles;    // scalar state parameterization (qubit Bloch angle)

    std::size_t size() const { return weights.size(); }
    double mean() const;
    double variance() const;
    void check() const;
};

/// Per-particle conditional dynamics under H = xi H0 + H1 with one measured coupling.
class ParticleDynamics {
public:
    virtual ~ParticleDynamics() = default;

    /// Tr[(L + L^dag) rho_i]
    virtual double signal(const ParticleEnsemble& e, std::size_t i) const = 0;
    /// Advances particle i with the raw measurement increment (each particle uses its own innovation).
    virtual void advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) = 0;
    /// Adds one particle with parameter xi in the model's initial state.
    virtual void push_initial(ParticleEnsemble& e, double xi) const = 0;
    /// True when the state is a single real number that can be resampled jointly with xi.
    virtual bool scalar_state() const { return false; }
};

/// Density-matrix particles stepped by the stochastic master equation. The default Kraus step keeps
/// mismatched-parameter particles positive; their innovations are large and drive Euler steps unstable.
class DensityParticles : public ParticleDynamics {
public:
    DensityParticles(Operator H0, Operator L, Operator rho0, Operator H1 = Operator(),
                     StepScheme scheme = StepScheme::kraus);

    double signal(const ParticleEnsemble& e, std::size_t i) const override;
    void advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) override;
    void push_initial(ParticleEnsemble& e, double xi) const override;

private:
    Operator H0_, H1_, L_, Ld_, LdL_, L2_, rho0_;
    Operator a_, b_, c_;
    StepScheme scheme_;
};

/// Qubit particles in the Bloch-angle parameterization of H = B sigma_y, L = sqrt(kappa) sigma_z.
class BlochParticles : public ParticleDynamics {
public:
    explicit BlochParticles(double kappa, double theta0 = 0.0);

    double signal(const ParticleEnsemble& e, std::size_t i) const override;
    void advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) override;
    void push_initial(ParticleEnsemble& e, double xi) const override;
    bool scalar_state() const override { return true; }

private:
    double kappa_, theta0_;
};

struct EnsembleStepInfo {
    double innovation = 0.0;  // shared dW = dM - sum_i p_i s_i dt
    double mean_signal = 0.0;
};

/// Weights follow dp_i = (s_i - sum_j p_j s_j) p_i dW with the shared innovation, clipped at zero and
/// renormalized; each particle state is then advanced with dM.
EnsembleStepInfo ensemble_step(ParticleDynamics& dyn, ParticleEnsemble& e, double dM, double dt);

/// Finite parameter set with uniform or given weights.
ParticleEnsemble make_ensemble(const ParticleDynamics& dyn, const std::vector<double>& params,
                               std::vector<double> weights = {});

struct ObservableSpace {
    Eigen::Index dimension = 0;
    std::vector<Operator> basis;  // Hilbert-Schmidt orthonormal
    bool full = false;            // dimension == dim^2
};

/// Closure of span{I} under the adjoint generator of (H, L) and K[X] = L^dag X + X L.
ObservableSpace observable_space_dim(const Operator& H, const Operator& L, double rel_tol = 1e-9);

/// Parameter-extended operators diag(xi) (x) H0 and I (x) L.
std::pair<Operator, Operator> extended_model(const std::vector<double>& params, const Operator& H0,
                                             const Operator& L);

/// 1 / sum p_i^2 for normalized weights.
double effective_sample_size(const std::vector<double>& weights);

/// Liu-West kernel resampling. Scalar-state particles are resampled jointly as (xi, theta) with the
/// angle handled on the circle; otherwise children copy the parent state.
void liu_west_resample(ParticleEnsemble& e, double a, double h, RngStream& rng, bool joint_scalar_state);

struct GaussianPrior {
    double mean = 0.0;
    double variance = 1.0;
};

struct PosteriorSample {
    double time;
    double mean;
    double sd;
};

struct ParticleFilterResult {
    std::vector<PosteriorSample> trace;
    double estimate = 0.0;
    double uncertainty = 0.0;
    int resample_count = 0;
    ParticleEnsemble final_ensemble;
};

struct ParticleFilterConfig {
    std::size_t particles = 1000;
    double a = 0.98;
    double h = 1e-3;
    double threshold = 2.0 / 3.0;
    std::uint64_t seed = 0;
    long trace_stride = 1000;
};

/// Resampling particle filter over a stored measurement record dM (one entry per step of size dt).
ParticleFilterResult particle_filter_run(ParticleDynamics& dyn, const std::vector<double>& dM, double dt,
                                         const GaussianPrior& prior, const ParticleFilterConfig& cfg);

/// Same filter started from an explicit ensemble.
ParticleFilterResult particle_filter_run(ParticleDynamics& dyn, const std::vector<double>& dM, double dt,
                                         ParticleEnsemble initial, const ParticleFilterConfig& cfg);

/// Fraction of trajectories whose largest weight exceeds alpha at each stored time.
std::vector<double> convergence_rate(const std::vector<std::vector<std::vector<double>>>& weight_traces,
                                     double alpha = 0.95);

}  // namespace qfilt
