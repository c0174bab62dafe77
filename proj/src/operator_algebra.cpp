#include "qfilt/operator_algebra.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "qfilt/errors.hpp"

namespace qfilt {

namespace {

bool is_half_integer(double j) {
    const double twice = 2.0 * j;
    return j >= 0.0 && std::abs(twice - std::round(twice)) < 1e-12;
}

}  // namespace

SpinOperators spin_operators(double j) {
    if (!is_half_integer(j)) throw InvalidArgument("spin must be a non-negative half-integer");
    const auto dim = static_cast<Eigen::Index>(std::lround(2.0 * j)) + 1;
    SpinOperators s;
    s.Jz = Operator::Zero(dim, dim);
    s.Jplus = Operator::Zero(dim, dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double m = j - static_cast<double>(k);
        s.Jz(k, k) = m;
        // J+ |j,m> lands on row k-1
        if (k > 0) s.Jplus(k - 1, k) = std::sqrt((j - m) * (j + m + 1.0));
    }
    s.Jminus = s.Jplus.adjoint();
    s.Jx = 0.5 * (s.Jplus + s.Jminus);
    s.Jy = (s.Jplus - s.Jminus) / cplx(0.0, 2.0);
    return s;
}

Operator pauli(char label) {
    Operator p = Operator::Zero(2, 2);
    switch (label) {
        case 'I': p(0, 0) = 1.0; p(1, 1) = 1.0; break;
        case 'X': p(0, 1) = 1.0; p(1, 0) = 1.0; break;
        case 'Y': p(0, 1) = cplx(0, -1); p(1, 0) = cplx(0, 1); break;
        case 'Z': p(0, 0) = 1.0; p(1, 1) = -1.0; break;
        default: throw InvalidArgument(std::string("unknown Pauli label '") + label + "'");
    }
    return p;
}

Operator pauli_string(std::string_view labels) {
    if (labels.empty()) throw InvalidArgument("empty Pauli string");
    Operator out = pauli(labels[0]);
    for (std::size_t k = 1; k < labels.size(); ++k) out = kron(out, pauli(labels[k]));
    return out;
}

Operator sigma_plus() {
    Operator s = Operator::Zero(2, 2);
    s(0, 1) = 1.0;
    return s;
}

Operator sigma_minus() {
    Operator s = Operator::Zero(2, 2);
    s(1, 0) = 1.0;
    return s;
}

Operator kron(const Operator& a, const Operator& b) {
    Operator out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Operator commutator(const Operator& a, const Operator& b) {
    require_same_dim(a, b);
    return a * b - b * a;
}

Operator anticommutator(const Operator& a, const Operator& b) {
    require_same_dim(a, b);
    return a * b + b * a;
}

Operator lindblad_D(const Operator& L, const Operator& rho) {
    require_same_dim(L, rho);
    const Operator LdL = L.adjoint() * L;
    return L * rho * L.adjoint() - 0.5 * (LdL * rho + rho * LdL);
}

Operator measurement_M(const Operator& L, const Operator& rho) {
    require_same_dim(L, rho);
    const Operator Lrho = L * rho;
    const cplx signal = Lrho.trace() + std::conj(Lrho.trace());
    return Lrho + Lrho.adjoint() - signal * rho;
}

Operator adjoint_lindblad(const Operator& H, const Operator& L, const Operator& X) {
    require_same_dim(H, X);
    require_same_dim(L, X);
    const Operator Ld = L.adjoint();
    const Operator LdL = Ld * L;
    return I_unit * (H * X - X * H) + Ld * X * L - 0.5 * (LdL * X + X * LdL);
}

Ket spin_coherent(double j, double theta, double phi) {
    if (!is_half_integer(j)) throw InvalidArgument("spin must be a non-negative half-integer");
    if (!std::isfinite(theta) || !std::isfinite(phi)) throw InvalidArgument("angles must be finite");
    const auto dim = static_cast<Eigen::Index>(std::lround(2.0 * j)) + 1;
    const double c = std::cos(0.5 * theta);
    const double s = std::sin(0.5 * theta);
    const double n2 = 2.0 * j;
    Ket psi(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double m = j - static_cast<double>(k);
        const double up = j + m;
        const double down = j - m;
        const double log_binom = std::lgamma(n2 + 1.0) - std::lgamma(up + 1.0) - std::lgamma(down + 1.0);
        const double amp = std::exp(0.5 * log_binom) * std::pow(c, up) * std::pow(s, down);
        psi(k) = amp * std::polar(1.0, down * phi);
    }
    return psi / psi.norm();
}

Operator expm_hermitian(const Operator& H, cplx c) {
    Eigen::SelfAdjointEigenSolver<Operator> es(0.5 * (H + H.adjoint()));
    const Eigen::VectorXcd phases = (c * es.eigenvalues().cast<cplx>()).array().exp();
    return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

cplx hs_inner(const Operator& a, const Operator& b) {
    require_same_dim(a, b);
    return (a.conjugate().cwiseProduct(b)).sum();
}

double max_abs(const Operator& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

bool is_hermitian(const Operator& a, double tol) {
    return a.rows() == a.cols() && max_abs(a - a.adjoint()) <= tol;
}

void require_square(const Operator& a, const char* name) {
    if (a.rows() != a.cols() || a.rows() == 0)
        throw InvalidArgument(std::string(name) + " must be a non-empty square matrix");
}

void require_same_dim(const Operator& a, const Operator& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw InvalidArgument("operator dimensions do not conform");
}

// QuantumState

QuantumState QuantumState::pure(Ket psi) {
    if (psi.size() == 0) throw InvalidArgument("empty state vector");
    QuantumState s;
    s.kind_ = Kind::pure;
    s.psi_ = std::move(psi);
    return s;
}

QuantumState QuantumState::density(Operator rho) {
    require_square(rho, "density matrix");
    QuantumState s;
    s.kind_ = Kind::density;
    s.rho_ = std::move(rho);
    return s;
}

Eigen::Index QuantumState::dim() const { return kind_ == Kind::pure ? psi_.size() : rho_.rows(); }

const Ket& QuantumState::ket() const {
    if (kind_ != Kind::pure) throw InvalidArgument("state is not pure");
    return psi_;
}

const Operator& QuantumState::matrix() const {
    if (kind_ != Kind::density) throw InvalidArgument("state is not a density matrix");
    return rho_;
}

Operator QuantumState::as_density() const { return kind_ == Kind::pure ? Operator(psi_ * psi_.adjoint()) : rho_; }

void QuantumState::normalize() {
    if (kind_ == Kind::pure) {
        psi_ /= psi_.norm();
    } else {
        rho_ = 0.5 * (rho_ + rho_.adjoint()).eval();
        rho_ /= rho_.trace().real();
    }
}

cplx QuantumState::expectation(const Operator& A) const {
    if (kind_ == Kind::pure) return psi_.dot(A * psi_);
    return (A * rho_).trace();
}

double QuantumState::trace() const { return kind_ == Kind::pure ? psi_.squaredNorm() : rho_.trace().real(); }

double QuantumState::purity() const {
    if (kind_ == Kind::pure) return 1.0;
    return (rho_ * rho_).trace().real();
}

double QuantumState::min_eigenvalue() const {
    if (kind_ == Kind::pure) return 0.0;
    Eigen::SelfAdjointEigenSolver<Operator> es(0.5 * (rho_ + rho_.adjoint()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

bool QuantumState::is_valid() const {
    if (std::abs(trace() - 1.0) > 1e-9) return false;
    return kind_ == Kind::pure || is_hermitian(rho_, 1e-10);
}

// OperatorSpan

OperatorSpan::OperatorSpan(Eigen::Index dim, double rel_tol) : dim_(dim), rel_tol_(rel_tol) {}

double OperatorSpan::residual(const Operator& X) const {
    const double norm = X.norm();
    if (norm == 0.0) return 0.0;
    Operator r = X;
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& e : basis_) r -= hs_inner(e, r) * e;
    return r.norm() / norm;
}

Operator OperatorSpan::project(const Operator& X) const {
    Operator p = Operator::Zero(dim_, dim_);
    Operator r = X;
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& e : basis_) {
            const cplx c = hs_inner(e, r);
            r -= c * e;
            p += c * e;
        }
    return p;
}

bool OperatorSpan::add(const Operator& X) {
    if (X.rows() != dim_ || X.cols() != dim_) throw InvalidArgument("operator dimension does not match span");
    const double norm = X.norm();
    if (norm == 0.0) return false;
    Operator r = X;
    // two Gram-Schmidt passes keep the basis orthonormal to machine precision
    for (int pass = 0; pass < 2; ++pass)
        for (const auto& e : basis_) r -= hs_inner(e, r) * e;
    const double rn = r.norm();
    if (rn <= rel_tol_ * norm) return false;
    basis_.push_back(r / rn);
    return true;
}

Eigen::Index hs_rank(const std::vector<Operator>& ops, double rel_tol) {
    if (ops.empty()) return 0;
    const Eigen::Index d2 = ops.front().size();
    Eigen::MatrixXcd stacked(d2, static_cast<Eigen::Index>(ops.size()));
    for (std::size_t k = 0; k < ops.size(); ++k)
        stacked.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXcd>(ops[k].data(), d2);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(stacked);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k)
        if (sv(k) > rel_tol * sv(0)) ++rank;
    return rank;
}

}  // namespace qfilt
