#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Sparse>

#include "qfilt/operator_algebra.hpp"
#include "qfilt/quantum_trajectory.hpp"

namespace qfilt {

/// n-qubit Pauli string up to phase, stored as X and Z bit masks.
/// Qubit 1 is the leftmost label and the most significant bit.
struct PauliString {
    int n = 0;
    std::uint32_t x = 0;
    std::uint32_t z = 0;

    static PauliString parse(std::string_view labels);
    static PauliString identity(int n) { return PauliString{n, 0, 0}; }
    std::string label() const;
    int weight() const;
    bool commutes_with(const PauliString& o) const;
    bool is_identity() const { return x == 0 && z == 0; }
    Operator matrix() const;
    bool operator==(const PauliString& o) const { return n == o.n && x == o.x && z == o.z; }
};

/// Product ignoring the global phase.
PauliString operator*(const PauliString& a, const PauliString& b);

/// P|b> = phase[b] |perm[b]>
struct SignedPermutation {
    std::vector<int> perm;
    std::vector<cplx> phase;

    static SignedPermutation from(const PauliString& p);
    /// P X
    void left(const Operator& X, Operator& out) const;
    /// P X P^dag
    void conjugate_add(const Operator& X, Operator& out, cplx scale = 1.0) const;
};

struct StabilizerCode {
    std::string name;
    int n = 0;
    int k = 1;
    std::vector<PauliString> generators;
    std::vector<PauliString> errors;     // error channels, also the feedback Hamiltonian terms
    std::vector<int> error_syndrome;     // syndrome index produced by each error
    std::vector<Operator> projectors;    // indexed by syndrome; bit l set when g_l reads -1
    Eigen::MatrixXd h;                   // l x S table of +/-1 outcomes
    std::vector<PauliString> recovery;   // per syndrome
    PauliString logical_z;

    Eigen::Index dim() const { return Eigen::Index(1) << n; }
    int syndromes() const { return static_cast<int>(projectors.size()); }
    int syndrome_of(const PauliString& p) const;
    /// Encoded |0>: Pi_0 (I + Z_L) / 2.
    Operator logical_zero() const;
};

/// Known names: bitflip3, fivequbit.
StabilizerCode build_code(std::string_view name);

/// Continuous-time depolarizing rates for the Markov chain on syndromes: Lambda_rs for unit gamma.
Eigen::MatrixXd syndrome_generator(const StabilizerCode& code);

/// Full 2^n filter with Pauli actions applied as signed permutations.
/// euler steps the filter equation directly. kraus composes the exact measurement factors
/// exp(sqrt(kappa) dy_l g_l) with N rho N^dag + gamma dt sum sigma rho sigma, N = I - (K + iH) dt, so rho stays
/// positive; both are first order in dt. milstein is not supported.
class FullFilter {
public:
    FullFilter(const StabilizerCode& code, double gamma, double kappa, StepScheme scheme = StepScheme::euler);

    /// 2 sqrt(kappa) Tr[g_l rho] per generator.
    Eigen::VectorXd signals(const Operator& rho) const;
    /// Tr[-i[Pi_0, sigma] rho] per error channel.
    Eigen::VectorXd first_level(const Operator& rho) const;
    double codespace_fidelity(const Operator& rho) const;

    void step_innovation(Operator& rho, const Eigen::VectorXd& dW, const Eigen::VectorXd& lambdas, double dt,
                         long step_index = -1) const;
    /// Returns the innovations dQ - 2 sqrt(kappa) Tr[g rho] dt.
    Eigen::VectorXd step(Operator& rho, const Eigen::VectorXd& dQ, const Eigen::VectorXd& lambdas, double dt,
                         long step_index = -1) const;

    const StabilizerCode& code() const { return code_; }

private:
    StabilizerCode code_;
    double gamma_, kappa_;
    StepScheme scheme_;
    std::vector<SignedPermutation> err_, gen_;
    std::vector<Operator> first_level_ops_;
    mutable Operator acc_, tmp_, tmp2_;

    void kraus_step(Operator& rho, const Eigen::VectorXd& dW, const Eigen::VectorXd& lambdas, double dt) const;
};

Operator full_filter_step(const StabilizerCode& code, const Operator& rho, const Eigen::VectorXd& dQ, double gamma,
                          double kappa, const Eigen::VectorXd& lambdas, double dt);

/// lambda_j = lambda_max sgn(c_j); coefficients with |c_j| <= tie_tol map to zero_value * lambda_max.
Eigen::VectorXd feedback_policy(const Eigen::VectorXd& first_level, double lambda_max, double zero_value = 0.0,
                                double tie_tol = 0.0);
Eigen::VectorXd feedback_policy(const StabilizerCode& code, const Operator& rho, double lambda_max);

/// Syndrome-probability filter; clipped at zero and renormalized.
Eigen::VectorXd wonham_step(const StabilizerCode& code, const Eigen::VectorXd& p, const Eigen::VectorXd& dQ,
                            double gamma, double kappa, double dt);

/// One term c * left * Pi_s * right of a basis element.
struct BasisTerm {
    cplx prefactor;
    PauliString left;
    int syndrome;
    PauliString right;
};

struct BasisElement {
    std::vector<BasisTerm> terms;
    int level = 0;      // feedback transitions from the syndrome projectors
    int syndrome = 0;
    int error = -1;     // error channel for first-level elements
};

enum class TruncationLevel { first_level, codespace_only };

/// Truncated filter basis with generator matrices acting on p_b = Tr[X_b rho] as dp = M p.
struct TruncatedBasis {
    std::string code_name;
    TruncationLevel level = TruncationLevel::first_level;
    std::vector<BasisElement> elements;
    std::vector<Operator> ops;
    Eigen::SparseMatrix<double> depolarizing;       // unit gamma
    Eigen::SparseMatrix<double> measurement_drift;  // unit kappa
    std::vector<Eigen::SparseMatrix<double>> measurement;  // X -> g_l X + X g_l
    std::vector<Eigen::SparseMatrix<double>> feedback;     // X -> i[sigma, X]
    std::vector<int> syndrome_index;  // element holding Pi_s
    std::vector<int> policy_index;    // element proportional to F(0, sigma)
    std::vector<double> policy_sign;
    Eigen::MatrixXd h;
    double max_exact_residual = 0.0;     // depolarizing, measurement and diffusion maps
    double max_feedback_residual = 0.0;  // first-level part of the dropped feedback terms

    std::size_t size() const { return elements.size(); }
};

/// Builds the basis: syndrome projectors, first-level feedback coefficients merged in commutator pairs,
/// and projected generator matrices. first_level verifies closure to 1e-10 and throws ConstructionError otherwise.
TruncatedBasis build_truncated_basis(const StabilizerCode& code, TruncationLevel level = TruncationLevel::first_level);

/// Count of (Pauli coset, syndrome) monomials reachable from the syndrome projectors, optionally confirmed by a
/// numerical Hilbert-Schmidt rank.
struct ClosureCount {
    long monomials = 0;
    long numeric_rank = -1;
    std::vector<long> per_level;
};
ClosureCount untruncated_closure(const StabilizerCode& code, bool numeric_rank);

Eigen::VectorXd truncated_coefficients(const TruncatedBasis& basis, const Operator& rho);
/// Estimated Tr[-i[Pi_0, sigma] rho] per error channel.
Eigen::VectorXd truncated_first_level(const TruncatedBasis& basis, const Eigen::VectorXd& p);
double truncated_codespace(const TruncatedBasis& basis, const Eigen::VectorXd& p);
void truncated_step(const TruncatedBasis& basis, Eigen::VectorXd& p, const Eigen::VectorXd& dQ, double gamma,
                    double kappa, const Eigen::VectorXd& lambdas, double dt);

/// Text cache with an FNV-1a checksum; load throws ConstructionError on any mismatch.
void save_basis(const TruncatedBasis& basis, const std::string& path);
TruncatedBasis load_basis(const StabilizerCode& code, const std::string& path);

enum class ControllerKind { none, full, truncated };

struct QecRunConfig {
    double gamma = 1.0;
    double kappa = 100.0;
    double lambda_max = 200.0;
    double dt = 1e-5;
    double T = 0.25;
    long stride = 100;
    std::uint64_t seed = 0;
    ControllerKind controller = ControllerKind::truncated;
    double tie_tol = 1e-12;  // exact ties break toward +lambda_max in closed loop
    StepScheme plant_scheme = StepScheme::kraus;  // the simulated system; the filters remain Euler
};

struct QecTrajectory {
    std::vector<double> time;
    std::vector<double> codespace_fidelity;
    std::vector<double> codeword_fidelity;
    long policy_agree = 0;
    long policy_total = 0;
};

/// Plant: full filter with fresh measurement noise. Controller: the chosen filter driven by the plant's current.
QecTrajectory qec_run(const StabilizerCode& code, const TruncatedBasis* basis, const QecRunConfig& cfg);

/// Codeword fidelity after depolarizing noise for time t followed by ideal single-error correction:
/// q0^n + 3n q0^(n-1) q1 with q0 = (1 + 3e^{-4 gamma t})/4, q1 = (1 - e^{-4 gamma t})/4.
double codeword_fidelity_discrete(double gamma_t, int n = 5);

}  // namespace qfilt
