#pragma once

#include <complex>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace qfilt {

using cplx = std::complex<double>;
using Operator = Eigen::MatrixXcd;
using Ket = Eigen::VectorXcd;

inline constexpr cplx I_unit{0.0, 1.0};

struct SpinOperators {
    Operator Jx, Jy, Jz, Jplus, Jminus;
};

/// Angular-momentum matrices for spin j in the |j,m> basis ordered m = j, j-1, ..., -j.
SpinOperators spin_operators(double j);

/// Single-qubit Pauli for a label in {I,X,Y,Z}.
Operator pauli(char label);

/// Kronecker product of single-qubit Paulis; the leftmost label is the most significant factor.
Operator pauli_string(std::string_view labels);

Operator sigma_plus();   // |0><1| with |0> = spin up
Operator sigma_minus();  // |1><0|

Operator kron(const Operator& a, const Operator& b);

Operator commutator(const Operator& a, const Operator& b);
Operator anticommutator(const Operator& a, const Operator& b);

/// L rho L^dag - (L^dag L rho + rho L^dag L)/2
Operator lindblad_D(const Operator& L, const Operator& rho);

/// L rho + rho L^dag - Tr[(L + L^dag) rho] rho
Operator measurement_M(const Operator& L, const Operator& rho);

/// Heisenberg-picture Lindblad generator acting on an observable X.
Operator adjoint_lindblad(const Operator& H, const Operator& L, const Operator& X);

/// Maximal-weight eigenvector of sin(t)cos(p) Jx + sin(t)sin(p) Jy + cos(t) Jz.
Ket spin_coherent(double j, double theta, double phi);

/// exp(c * H) for Hermitian H through its eigendecomposition.
Operator expm_hermitian(const Operator& H, cplx c);

/// Tr[A^dag B]
cplx hs_inner(const Operator& a, const Operator& b);

double max_abs(const Operator& a);
bool is_hermitian(const Operator& a, double tol = 1e-12);
void require_square(const Operator& a, const char* name);
void require_same_dim(const Operator& a, const Operator& b);

/// Pure state or density matrix with the usual normalization helpers.
class QuantumState {
public:
    enum class Kind { pure, density };

    static QuantumState pure(Ket psi);
    static QuantumState density(Operator rho);

    Kind kind() const { return kind_; }
    Eigen::Index dim() const;
    const Ket& ket() const;
    const Operator& matrix() const;
    Operator as_density() const;

    void normalize();
    cplx expectation(const Operator& A) const;
    double trace() const;
    double purity() const;
    double min_eigenvalue() const;
    /// Norm or trace within 1e-9, Hermitian within 1e-10.
    bool is_valid() const;

private:
    Kind kind_ = Kind::pure;
    Ket psi_;
    Operator rho_;
};

/// Incremental Hilbert-Schmidt orthonormal basis used for operator-span closures.
class OperatorSpan {
public:
    explicit OperatorSpan(Eigen::Index dim, double rel_tol = 1e-9);

    /// Adds X if it is independent of the current span; returns whether it was added.
    bool add(const Operator& X);
    /// Norm of the component of X orthogonal to the span, relative to the norm of X.
    double residual(const Operator& X) const;
    /// Orthogonal projection of X onto the span.
    Operator project(const Operator& X) const;

    Eigen::Index size() const { return static_cast<Eigen::Index>(basis_.size()); }
    const std::vector<Operator>& basis() const { return basis_; }

private:
    Eigen::Index dim_;
    double rel_tol_;
    std::vector<Operator> basis_;
};

/// Numerical rank of a set of operators from the singular values of their stacked vectorizations.
Eigen::Index hs_rank(const std::vector<Operator>& ops, double rel_tol = 1e-9);

}  // namespace qfilt
