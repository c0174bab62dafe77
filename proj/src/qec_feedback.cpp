#include "qfilt/qec_feedback.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "qfilt/errors.hpp"
#include "qfilt/sde_engine.hpp"

namespace qfilt {

// Pauli strings

PauliString PauliString::parse(std::string_view labels) {
    if (labels.empty() || labels.size() > 16) throw InvalidArgument("Pauli string must have 1 to 16 labels");
    PauliString p;
    p.n = static_cast<int>(labels.size());
    for (int i = 0; i < p.n; ++i) {
        const std::uint32_t bit = 1u << (p.n - 1 - i);
        switch (labels[static_cast<std::size_t>(i)]) {
            case 'I': break;
            case 'X': p.x |= bit; break;
            case 'Z': p.z |= bit; break;
            case 'Y': p.x |= bit; p.z |= bit; break;
            default: throw InvalidArgument("unknown Pauli label in '" + std::string(labels) + "'");
        }
    }
    return p;
}

std::string PauliString::label() const {
    std::string s(static_cast<std::size_t>(n), 'I');
    for (int i = 0; i < n; ++i) {
        const std::uint32_t bit = 1u << (n - 1 - i);
        const bool bx = x & bit, bz = z & bit;
        s[static_cast<std::size_t>(i)] = bx && bz ? 'Y' : bx ? 'X' : bz ? 'Z' : 'I';
    }
    return s;
}

int PauliString::weight() const { return std::popcount(x | z); }

bool PauliString::commutes_with(const PauliString& o) const {
    return std::popcount((x & o.z) ^ (z & o.x)) % 2 == 0;
}

Operator PauliString::matrix() const {
    const SignedPermutation sp = SignedPermutation::from(*this);
    const auto d = static_cast<Eigen::Index>(sp.perm.size());
    Operator m = Operator::Zero(d, d);
    for (Eigen::Index b = 0; b < d; ++b) m(sp.perm[static_cast<std::size_t>(b)], b) = sp.phase[static_cast<std::size_t>(b)];
    return m;
}

PauliString operator*(const PauliString& a, const PauliString& b) {
    if (a.n != b.n) throw InvalidArgument("Pauli strings act on different qubit counts");
    return PauliString{a.n, a.x ^ b.x, a.z ^ b.z};
}

SignedPermutation SignedPermutation::from(const PauliString& p) {
    const std::size_t d = std::size_t(1) << p.n;
    SignedPermutation sp;
    sp.perm.resize(d);
    sp.phase.resize(d);
    static const cplx ipow[4] = {1.0, I_unit, -1.0, -I_unit};
    const cplx base = ipow[std::popcount(p.x & p.z) % 4];
    for (std::size_t b = 0; b < d; ++b) {
        sp.perm[b] = static_cast<int>(b ^ p.x);
        sp.phase[b] = std::popcount(static_cast<std::uint32_t>(b) & p.z) % 2 ? -base : base;
    }
    return sp;
}

void SignedPermutation::left(const Operator& X, Operator& out) const {
    out.resize(X.rows(), X.cols());
    for (Eigen::Index c = 0; c < X.cols(); ++c)
        for (Eigen::Index a = 0; a < X.rows(); ++a)
            out(perm[static_cast<std::size_t>(a)], c) = phase[static_cast<std::size_t>(a)] * X(a, c);
}

void SignedPermutation::conjugate_add(const Operator& X, Operator& out, cplx scale) const {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        const cplx cc = scale * std::conj(phase[static_cast<std::size_t>(c)]);
        const int pc = perm[static_cast<std::size_t>(c)];
        for (Eigen::Index a = 0; a < X.rows(); ++a)
            out(perm[static_cast<std::size_t>(a)], pc) += phase[static_cast<std::size_t>(a)] * cc * X(a, c);
    }
}

namespace {

// out += scale * P X
void left_add(const SignedPermutation& sp, const Operator& X, Operator& out, cplx scale) {
    for (Eigen::Index c = 0; c < X.cols(); ++c)
        for (Eigen::Index a = 0; a < X.rows(); ++a)
            out(sp.perm[static_cast<std::size_t>(a)], c) += scale * sp.phase[static_cast<std::size_t>(a)] * X(a, c);
}

// Tr[P X]
cplx pauli_trace(const SignedPermutation& sp, const Operator& X) {
    cplx t = 0.0;
    for (std::size_t b = 0; b < sp.perm.size(); ++b) t += sp.phase[b] * X(static_cast<Eigen::Index>(b), sp.perm[b]);
    return t;
}

double trace_product(const Operator& A, const Operator& B) {  // Re Tr[A B]
    return (A.cwiseProduct(B.transpose())).sum().real();
}

}  // namespace

// Codes

int StabilizerCode::syndrome_of(const PauliString& p) const {
    int s = 0;
    for (std::size_t l = 0; l < generators.size(); ++l)
        if (!generators[l].commutes_with(p)) s |= 1 << l;
    return s;
}

Operator StabilizerCode::logical_zero() const {
    const Operator id = Operator::Identity(dim(), dim());
    return projectors[0] * (id + logical_z.matrix()) / 2.0;
}

StabilizerCode build_code(std::string_view name) {
    StabilizerCode c;
    c.name = std::string(name);
    std::vector<std::string> gens;
    if (name == "fivequbit") {
        c.n = 5;
        gens = {"XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"};
        for (int m = 0; m < 5; ++m)
            for (char p : {'X', 'Y', 'Z'}) {
                std::string s(5, 'I');
                s[static_cast<std::size_t>(m)] = p;
                c.errors.push_back(PauliString::parse(s));
            }
        c.logical_z = PauliString::parse("ZZZZZ");
    } else if (name == "bitflip3") {
        c.n = 3;
        gens = {"ZZI", "IZZ"};
        for (const char* s : {"XII", "IXI", "IIX"}) c.errors.push_back(PauliString::parse(s));
        c.logical_z = PauliString::parse("ZZZ");
    } else {
        throw InvalidArgument("unknown code '" + std::string(name) + "' (known: bitflip3, fivequbit)");
    }
    for (const auto& g : gens) c.generators.push_back(PauliString::parse(g));
    for (std::size_t a = 0; a < c.generators.size(); ++a)
        for (std::size_t b = a + 1; b < c.generators.size(); ++b)
            if (!c.generators[a].commutes_with(c.generators[b])) throw ConstructionError("generators do not commute");

    const int l = static_cast<int>(c.generators.size());
    const int S = 1 << l;
    c.h.resize(l, S);
    for (int s = 0; s < S; ++s)
        for (int j = 0; j < l; ++j) c.h(j, s) = (s >> j) & 1 ? -1.0 : 1.0;

    const Operator id = Operator::Identity(c.dim(), c.dim());
    std::vector<Operator> gmat;
    for (const auto& g : c.generators) gmat.push_back(g.matrix());
    for (int s = 0; s < S; ++s) {
        Operator P = id;
        for (int j = 0; j < l; ++j) P = P * (id + c.h(j, s) * gmat[static_cast<std::size_t>(j)]) / 2.0;
        c.projectors.push_back(P);
    }

    c.recovery.assign(static_cast<std::size_t>(S), PauliString::identity(c.n));
    std::vector<bool> seen(static_cast<std::size_t>(S), false);
    seen[0] = true;
    for (const auto& e : c.errors) {
        const int s = c.syndrome_of(e);
        if (s == 0 || seen[static_cast<std::size_t>(s)]) throw ConstructionError("error set is degenerate for this code");
        seen[static_cast<std::size_t>(s)] = true;
        c.error_syndrome.push_back(s);
        c.recovery[static_cast<std::size_t>(s)] = e;
    }
    for (bool b : seen)
        if (!b) throw ConstructionError("some syndromes are never produced by the error set");
    return c;
}

Eigen::MatrixXd syndrome_generator(const StabilizerCode& code) {
    const int S = code.syndromes();
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(S, S);
    for (int s = 0; s < S; ++s)
        for (int e : code.error_syndrome) {
            L(s ^ e, s) += 1.0;
            L(s, s) -= 1.0;
        }
    return L;
}

// Full filter

FullFilter::FullFilter(const StabilizerCode& code, double gamma, double kappa, StepScheme scheme)
    : code_(code), gamma_(gamma), kappa_(kappa), scheme_(scheme) {
    if (gamma < 0.0 || kappa < 0.0) throw InvalidArgument("rates must be non-negative");
    if (scheme == StepScheme::milstein) throw UnsupportedConfiguration("the error-correction filter has no Milstein step");
    for (const auto& e : code.errors) err_.push_back(SignedPermutation::from(e));
    for (const auto& g : code.generators) gen_.push_back(SignedPermutation::from(g));
    for (const auto& e : code.errors) {
        const Operator s = e.matrix();
        first_level_ops_.push_back(I_unit * (s * code.projectors[0] - code.projectors[0] * s));
    }
    acc_.resize(code.dim(), code.dim());
    tmp_.resize(code.dim(), code.dim());
    tmp2_.resize(code.dim(), code.dim());
}

Eigen::VectorXd FullFilter::signals(const Operator& rho) const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(gen_.size()));
    for (std::size_t l = 0; l < gen_.size(); ++l)
        s(static_cast<Eigen::Index>(l)) = 2.0 * std::sqrt(kappa_) * pauli_trace(gen_[l], rho).real();
    return s;
}

Eigen::VectorXd FullFilter::first_level(const Operator& rho) const {
    Eigen::VectorXd c(static_cast<Eigen::Index>(first_level_ops_.size()));
    for (std::size_t j = 0; j < first_level_ops_.size(); ++j)
        c(static_cast<Eigen::Index>(j)) = trace_product(first_level_ops_[j], rho);
    return c;
}

double FullFilter::codespace_fidelity(const Operator& rho) const { return trace_product(code_.projectors[0], rho); }

void FullFilter::step_innovation(Operator& rho, const Eigen::VectorXd& dW, const Eigen::VectorXd& lambdas, double dt,
                                 long step_index) const {
    const auto L = static_cast<Eigen::Index>(gen_.size());
    if (dW.size() != L) throw InvalidArgument("one innovation per stabilizer generator is required");
    if (lambdas.size() != static_cast<Eigen::Index>(err_.size())) throw InvalidArgument("one feedback strength per error");
    require_square(rho, "rho");
    if (rho.rows() != code_.dim()) throw InvalidArgument("state dimension must be 2^n");
    if (scheme_ == StepScheme::kraus) {
        kraus_step(rho, dW, lambdas, dt);
        const double tr = rho.trace().real();
        if (!(tr > 0.0) || !rho.allFinite()) throw NumericFailure("error-correction filter diverged", step_index);
        rho /= tr;
        return;
    }

    // drift
    acc_.setZero();
    for (const auto& sp : err_) sp.conjugate_add(rho, acc_, gamma_);
    for (const auto& sp : gen_) sp.conjugate_add(rho, acc_, kappa_);
    acc_ -= (gamma_ * static_cast<double>(err_.size()) + kappa_ * static_cast<double>(L)) * rho;
    tmp_.setZero();
    bool any = false;
    for (std::size_t j = 0; j < err_.size(); ++j) {
        const double lam = lambdas(static_cast<Eigen::Index>(j));
        if (lam == 0.0) continue;
        left_add(err_[j], rho, tmp_, lam);
        any = true;
    }
    if (any) acc_ += -I_unit * (tmp_ - tmp_.adjoint());
    Operator next = rho + acc_ * dt;

    // innovations
    const double sk = std::sqrt(kappa_);
    for (Eigen::Index l = 0; l < L; ++l) {
        gen_[static_cast<std::size_t>(l)].left(rho, tmp_);
        const double g = tmp_.trace().real();
        next += (sk * dW(l)) * (tmp_ + tmp_.adjoint() - 2.0 * g * rho);
    }
    next = 0.5 * (next + next.adjoint()).eval();
    const double tr = next.trace().real();
    if (!(tr > 0.0) || !next.allFinite()) throw NumericFailure("error-correction filter diverged", step_index);
    rho = next / tr;
}

void FullFilter::kraus_step(Operator& rho, const Eigen::VectorXd& dW, const Eigen::VectorXd& lambdas,
                            double dt) const {
    // measurement: A rho A with A = prod_l (cosh a_l + sinh a_l g_l), a_l = sqrt(kappa) dy_l
    const double sk = std::sqrt(kappa_);
    const Eigen::VectorXd dy = dW + signals(rho) * dt;
    for (std::size_t l = 0; l < gen_.size(); ++l) {
        const double a = sk * dy(static_cast<Eigen::Index>(l));
        const double c = std::cosh(a), s = std::sinh(a);
        // (c + s g) rho (c + s g) = c^2 rho + c s (g rho + rho g) + s^2 g rho g
        gen_[l].left(rho, tmp_);
        acc_ = (c * c) * rho + (c * s) * (tmp_ + tmp_.adjoint());
        gen_[l].conjugate_add(rho, acc_, s * s);
        rho = acc_;
        rho /= rho.trace().real();
    }
    // errors and feedback: N rho N^dag + gamma dt sum sigma rho sigma, N = a I - i H dt
    const double a = 1.0 - 0.5 * gamma_ * static_cast<double>(err_.size()) * dt;
    acc_ = (a * a) * rho;
    for (const auto& sp : err_) sp.conjugate_add(rho, acc_, gamma_ * dt);
    bool any = false;
    tmp_.setZero();
    for (std::size_t j = 0; j < err_.size(); ++j) {
        const double lam = lambdas(static_cast<Eigen::Index>(j));
        if (lam == 0.0) continue;
        left_add(err_[j], rho, tmp_, lam);
        any = true;
    }
    if (any) {
        // tmp = H rho; H rho H = (H (H rho)^dag)^dag
        acc_ += (-I_unit * a * dt) * (tmp_ - tmp_.adjoint());
        const Operator y = tmp_.adjoint();
        tmp2_.setZero();
        for (std::size_t j = 0; j < err_.size(); ++j) {
            const double lam = lambdas(static_cast<Eigen::Index>(j));
            if (lam != 0.0) left_add(err_[j], y, tmp2_, lam);
        }
        acc_ += (dt * dt) * tmp2_.adjoint();
    }
    rho = 0.5 * (acc_ + acc_.adjoint());
}

Eigen::VectorXd FullFilter::step(Operator& rho, const Eigen::VectorXd& dQ, const Eigen::VectorXd& lambdas, double dt,
                                 long step_index) const {
    if (dQ.size() != static_cast<Eigen::Index>(gen_.size()))
        throw InvalidArgument("one measurement increment per stabilizer generator is required");
    const Eigen::VectorXd dW = dQ - signals(rho) * dt;
    step_innovation(rho, dW, lambdas, dt, step_index);
    return dW;
}

Operator full_filter_step(const StabilizerCode& code, const Operator& rho, const Eigen::VectorXd& dQ, double gamma,
                          double kappa, const Eigen::VectorXd& lambdas, double dt) {
    FullFilter f(code, gamma, kappa);
    Operator out = rho;
    f.step(out, dQ, lambdas, dt);
    return out;
}

Eigen::VectorXd feedback_policy(const Eigen::VectorXd& first_level, double lambda_max, double zero_value,
                                double tie_tol) {
    Eigen::VectorXd lam(first_level.size());
    for (Eigen::Index j = 0; j < first_level.size(); ++j) {
        const double c = first_level(j);
        lam(j) = std::abs(c) <= tie_tol ? zero_value * lambda_max : (c > 0.0 ? lambda_max : -lambda_max);
    }
    return lam;
}

Eigen::VectorXd feedback_policy(const StabilizerCode& code, const Operator& rho, double lambda_max) {
    FullFilter f(code, 0.0, 0.0);
    return feedback_policy(f.first_level(rho), lambda_max, 0.0, 1e-14);
}

Eigen::VectorXd wonham_step(const StabilizerCode& code, const Eigen::VectorXd& p, const Eigen::VectorXd& dQ,
                            double gamma, double kappa, double dt) {
    const int S = code.syndromes();
    if (p.size() != S) throw InvalidArgument("probability vector must have one entry per syndrome");
    if (dQ.size() != code.h.rows()) throw InvalidArgument("one measurement increment per generator");
    const double sk = std::sqrt(kappa);
    Eigen::VectorXd next = p + gamma * (syndrome_generator(code) * p) * dt;
    for (Eigen::Index l = 0; l < code.h.rows(); ++l) {
        const Eigen::VectorXd hl = code.h.row(l).transpose();
        const double mean = hl.dot(p);
        const double dW = dQ(l) - 2.0 * sk * mean * dt;
        next += 2.0 * sk * (hl.cwiseProduct(p) - mean * p) * dW;
    }
    next = next.cwiseMax(0.0);
    const double sum = next.sum();
    if (!(sum > 0.0) || !std::isfinite(sum)) throw NumericFailure("syndrome filter lost all probability");
    return next / sum;
}

// Truncated basis

namespace {

Operator element_operator(const StabilizerCode& code, const BasisElement& e) {
    Operator X = Operator::Zero(code.dim(), code.dim());
    for (const auto& t : e.terms)
        X += t.prefactor * t.left.matrix() * code.projectors[static_cast<std::size_t>(t.syndrome)] * t.right.matrix();
    return X;
}

struct Projector {
    const std::vector<Operator>& ops;
    Eigen::LDLT<Eigen::MatrixXd> gram;

    explicit Projector(const std::vector<Operator>& o) : ops(o) {
        const auto N = static_cast<Eigen::Index>(ops.size());
        Eigen::MatrixXd G(N, N);
        for (Eigen::Index a = 0; a < N; ++a)
            for (Eigen::Index b = 0; b <= a; ++b)
                G(a, b) = G(b, a) = trace_product(ops[static_cast<std::size_t>(a)], ops[static_cast<std::size_t>(b)]);
        gram.compute(G);
        if (gram.info() != Eigen::Success || gram.vectorD().minCoeff() <= 1e-12 * gram.vectorD().maxCoeff())
            throw ConstructionError("basis operators are linearly dependent");
    }

    // coefficients of the orthogonal projection of Y; residual = ||Y - sum c X|| / max(1, ||Y||)
    Eigen::VectorXd coefficients(const Operator& Y, double& residual, Operator* rem = nullptr) const {
        const auto N = static_cast<Eigen::Index>(ops.size());
        Eigen::VectorXd b(N);
        for (Eigen::Index c = 0; c < N; ++c) b(c) = trace_product(ops[static_cast<std::size_t>(c)], Y);
        const Eigen::VectorXd coef = gram.solve(b);
        Operator R = Y;
        for (Eigen::Index c = 0; c < N; ++c)
            if (coef(c) != 0.0) R -= coef(c) * ops[static_cast<std::size_t>(c)];
        residual = R.norm() / std::max(1.0, Y.norm());
        if (rem) *rem = std::move(R);
        return coef;
    }
};

Eigen::SparseMatrix<double> to_sparse(const Eigen::MatrixXd& M) {
    return M.sparseView(1.0, 1e-13);
}

}  // namespace

TruncatedBasis build_truncated_basis(const StabilizerCode& code, TruncationLevel level) {
    TruncatedBasis tb;
    tb.code_name = code.name;
    tb.level = level;
    tb.h = code.h;
    const int S = code.syndromes();
    const auto E = code.errors.size();
    const PauliString id = PauliString::identity(code.n);

    for (int s = 0; s < S; ++s) {
        BasisElement e;
        e.terms = {{1.0, id, s, id}};
        e.level = 0;
        e.syndrome = s;
        tb.syndrome_index.push_back(static_cast<int>(tb.elements.size()));
        tb.elements.push_back(e);
    }
    tb.policy_index.assign(E, -1);
    tb.policy_sign.assign(E, 0.0);
    for (std::size_t j = 0; j < E; ++j) {
        const PauliString& sig = code.errors[j];
        const int se = code.error_syndrome[j];
        for (int s = 0; s < S; ++s) {
            // F(s, sigma) = i sigma Pi_s - i Pi_s sigma and F(s ^ se, sigma) = -F(s, sigma): keep one of each pair
            if ((s ^ se) < s) continue;
            if (level == TruncationLevel::codespace_only && s != 0) continue;
            BasisElement e;
            e.terms = {{I_unit, sig, s, id}, {-I_unit, id, s, sig}};
            e.level = 1;
            e.syndrome = s;
            e.error = static_cast<int>(j);
            if (s == 0) {
                tb.policy_index[j] = static_cast<int>(tb.elements.size());
                tb.policy_sign[j] = 1.0;
            }
            tb.elements.push_back(e);
        }
    }
    for (const auto& e : tb.elements) tb.ops.push_back(element_operator(code, e));

    const Projector proj(tb.ops);
    const auto N = static_cast<Eigen::Index>(tb.ops.size());
    const auto L = code.generators.size();
    std::vector<SignedPermutation> err, gen;
    for (const auto& e : code.errors) err.push_back(SignedPermutation::from(e));
    for (const auto& g : code.generators) gen.push_back(SignedPermutation::from(g));

    Eigen::MatrixXd dep = Eigen::MatrixXd::Zero(N, N), meas = Eigen::MatrixXd::Zero(N, N);
    std::vector<Eigen::MatrixXd> H(L, Eigen::MatrixXd::Zero(N, N)), G(E, Eigen::MatrixXd::Zero(N, N));
    const bool verify = level == TruncationLevel::first_level;
    Operator Y(code.dim(), code.dim()), tmp(code.dim(), code.dim()), R;
    double res = 0.0;

    for (Eigen::Index b = 0; b < N; ++b) {
        const Operator& X = tb.ops[static_cast<std::size_t>(b)];
        // depolarizing: sum_sigma (sigma X sigma - X)
        Y = -static_cast<double>(E) * X;
        for (const auto& sp : err) sp.conjugate_add(X, Y);
        dep.row(b) = proj.coefficients(Y, res).transpose();
        tb.max_exact_residual = std::max(tb.max_exact_residual, res);
        // measurement drift: sum_l (g X g - X)
        Y = -static_cast<double>(L) * X;
        for (const auto& sp : gen) sp.conjugate_add(X, Y);
        meas.row(b) = proj.coefficients(Y, res).transpose();
        tb.max_exact_residual = std::max(tb.max_exact_residual, res);
        // diffusion: g X + X g
        for (std::size_t l = 0; l < L; ++l) {
            gen[l].left(X, tmp);
            Y = tmp + tmp.adjoint();
            H[l].row(b) = proj.coefficients(Y, res).transpose();
            tb.max_exact_residual = std::max(tb.max_exact_residual, res);
        }
        // feedback: i[sigma, X]
        for (std::size_t j = 0; j < E; ++j) {
            err[j].left(X, tmp);
            Y = I_unit * (tmp - tmp.adjoint());
            G[j].row(b) = proj.coefficients(Y, res, verify ? &R : nullptr).transpose();
            if (!verify) continue;
            // the dropped remainder must have no component on syndrome or first-level monomials
            double worst = 0.0;
            for (int s = 0; s < S; ++s) {
                worst = std::max(worst, std::abs(trace_product(code.projectors[static_cast<std::size_t>(s)], R)));
            }
            for (std::size_t k = 0; k < E; ++k) {
                err[k].left(R, tmp);  // tau R
                for (int s = 0; s < S; ++s) {
                    // Tr[(tau Pi_s)^dag R] = Tr[Pi_s tau R]
                    const cplx v = (code.projectors[static_cast<std::size_t>(s)].cwiseProduct(tmp.transpose())).sum();
                    worst = std::max(worst, std::abs(v));
                }
            }
            tb.max_feedback_residual = std::max(tb.max_feedback_residual, worst / std::max(1.0, Y.norm()));
        }
    }
    if (verify && (tb.max_exact_residual > 1e-10 || tb.max_feedback_residual > 1e-10)) {
        std::ostringstream os;
        os << "truncated generators fail verification (exact residual " << tb.max_exact_residual
           << ", feedback residual " << tb.max_feedback_residual << ")";
        throw ConstructionError(os.str());
    }
    tb.depolarizing = to_sparse(dep);
    tb.measurement_drift = to_sparse(meas);
    for (const auto& m : H) tb.measurement.push_back(to_sparse(m));
    for (const auto& m : G) tb.feedback.push_back(to_sparse(m));
    return tb;
}

ClosureCount untruncated_closure(const StabilizerCode& code, bool numeric_rank) {
    const int S = code.syndromes();
    const int l = static_cast<int>(code.generators.size());
    std::vector<PauliString> group;
    for (int mask = 0; mask < (1 << l); ++mask) {
        PauliString g = PauliString::identity(code.n);
        for (int j = 0; j < l; ++j)
            if (mask >> j & 1) g = g * code.generators[static_cast<std::size_t>(j)];
        group.push_back(g);
    }
    auto coset_key = [&](const PauliString& p) {
        std::uint64_t best = ~std::uint64_t(0);
        for (const auto& g : group) {
            const std::uint64_t k = (std::uint64_t(p.x ^ g.x) << 32) | std::uint64_t(p.z ^ g.z);
            best = std::min(best, k);
        }
        return best;
    };
    struct Node {
        PauliString p;
        int s;
        int level;
    };
    std::unordered_map<std::uint64_t, int> level_of;  // key: coset * S + s
    std::vector<Node> found;
    std::deque<Node> queue;
    auto visit = [&](const PauliString& p, int s, int lev, bool front) {
        const std::uint64_t key = coset_key(p) * static_cast<std::uint64_t>(S) + static_cast<std::uint64_t>(s);
        auto it = level_of.find(key);
        if (it != level_of.end() && it->second <= lev) return;
        level_of[key] = lev;
        if (front) queue.push_front({p, s, lev});
        else queue.push_back({p, s, lev});
    };
    for (int s = 0; s < S; ++s) visit(PauliString::identity(code.n), s, 0, false);
    while (!queue.empty()) {
        const Node nd = queue.front();
        queue.pop_front();
        const std::uint64_t key = coset_key(nd.p) * static_cast<std::uint64_t>(S) + static_cast<std::uint64_t>(nd.s);
        if (level_of[key] < nd.level) continue;
        found.push_back(nd);
        for (std::size_t j = 0; j < code.errors.size(); ++j) {
            const PauliString& sig = code.errors[j];
            const int t = nd.s ^ code.error_syndrome[j];
            visit(nd.p, t, nd.level, true);              // depolarizing keeps the level
            visit(sig * nd.p, nd.s, nd.level + 1, false);  // sigma P Pi_s
            visit(nd.p * sig, t, nd.level + 1, false);     // P Pi_s sigma = P sigma Pi_{s^t}
        }
    }
    ClosureCount out;
    out.monomials = static_cast<long>(level_of.size());
    for (const auto& [key, lev] : level_of) {
        if (static_cast<std::size_t>(lev) >= out.per_level.size()) out.per_level.resize(static_cast<std::size_t>(lev) + 1, 0);
        ++out.per_level[static_cast<std::size_t>(lev)];
    }
    if (numeric_rank) {
        // one representative per key
        std::unordered_set<std::uint64_t> used;
        std::vector<Operator> ops;
        for (const auto& nd : found) {
            const std::uint64_t key = coset_key(nd.p) * static_cast<std::uint64_t>(S) + static_cast<std::uint64_t>(nd.s);
            if (!used.insert(key).second) continue;
            ops.push_back(nd.p.matrix() * code.projectors[static_cast<std::size_t>(nd.s)]);
        }
        const Eigen::Index d2 = code.dim() * code.dim();
        Eigen::MatrixXcd V(d2, static_cast<Eigen::Index>(ops.size()));
        for (std::size_t i = 0; i < ops.size(); ++i)
            V.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXcd>(ops[i].data(), d2);
        const Eigen::MatrixXcd Gm = V.adjoint() * V;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(Gm, Eigen::EigenvaluesOnly);
        const double top = es.eigenvalues().maxCoeff();
        long r = 0;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
            if (es.eigenvalues()(i) > 1e-9 * top) ++r;
        out.numeric_rank = r;
    }
    return out;
}

Eigen::VectorXd truncated_coefficients(const TruncatedBasis& basis, const Operator& rho) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(basis.ops.size()));
    for (std::size_t b = 0; b < basis.ops.size(); ++b) p(static_cast<Eigen::Index>(b)) = trace_product(basis.ops[b], rho);
    return p;
}

Eigen::VectorXd truncated_first_level(const TruncatedBasis& basis, const Eigen::VectorXd& p) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(basis.policy_index.size()));
    for (std::size_t j = 0; j < basis.policy_index.size(); ++j)
        c(static_cast<Eigen::Index>(j)) = basis.policy_sign[j] * p(basis.policy_index[j]);
    return c;
}

double truncated_codespace(const TruncatedBasis& basis, const Eigen::VectorXd& p) { return p(basis.syndrome_index[0]); }

void truncated_step(const TruncatedBasis& basis, Eigen::VectorXd& p, const Eigen::VectorXd& dQ, double gamma,
                    double kappa, const Eigen::VectorXd& lambdas, double dt) {
    const auto N = static_cast<Eigen::Index>(basis.size());
    if (p.size() != N) throw InvalidArgument("coefficient vector does not match the basis");
    if (dQ.size() != static_cast<Eigen::Index>(basis.measurement.size())) throw InvalidArgument("one increment per generator");
    if (lambdas.size() != static_cast<Eigen::Index>(basis.feedback.size())) throw InvalidArgument("one strength per error");
    const double sk = std::sqrt(kappa);
    const auto S = static_cast<Eigen::Index>(basis.syndrome_index.size());
    Eigen::VectorXd psyn(S);
    for (Eigen::Index s = 0; s < S; ++s) psyn(s) = p(basis.syndrome_index[static_cast<std::size_t>(s)]);

    Eigen::VectorXd dp = gamma * (basis.depolarizing * p) + kappa * (basis.measurement_drift * p);
    for (Eigen::Index j = 0; j < lambdas.size(); ++j)
        if (lambdas(j) != 0.0) dp += lambdas(j) * (basis.feedback[static_cast<std::size_t>(j)] * p);
    dp *= dt;
    for (std::size_t l = 0; l < basis.measurement.size(); ++l) {
        const double g = basis.h.row(static_cast<Eigen::Index>(l)).dot(psyn);
        const double dW = dQ(static_cast<Eigen::Index>(l)) - 2.0 * sk * g * dt;
        dp += (sk * dW) * (basis.measurement[l] * p - 2.0 * g * p);
    }
    p += dp;
    double total = 0.0;
    for (Eigen::Index s = 0; s < S; ++s) {
        double& v = p(basis.syndrome_index[static_cast<std::size_t>(s)]);
        if (!(v > 0.0)) v = 0.0;
        total += v;
    }
    if (!(total > 0.0) || !p.allFinite()) throw NumericFailure("truncated filter lost all probability");
    p /= total;
}

// Cache

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void write_sparse(std::ostringstream& os, const std::string& name, const Eigen::SparseMatrix<double>& m) {
    os << "matrix " << name << ' ' << m.nonZeros() << '\n';
    for (int k = 0; k < m.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
            os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

Eigen::SparseMatrix<double> read_sparse(std::istream& in, const std::string& name, Eigen::Index n) {
    std::string tag, got;
    long nnz = 0;
    if (!(in >> tag >> got >> nnz) || tag != "matrix" || got != name || nnz < 0)
        throw ConstructionError("basis cache: expected matrix " + name);
    std::vector<Eigen::Triplet<double>> trip;
    for (long k = 0; k < nnz; ++k) {
        long r, c;
        double v;
        if (!(in >> r >> c >> v) || r < 0 || c < 0 || r >= n || c >= n) throw ConstructionError("basis cache: bad entry");
        trip.emplace_back(r, c, v);
    }
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
}

}  // namespace

void save_basis(const TruncatedBasis& basis, const std::string& path) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "qfilt-basis v1\n";
    os << "code " << basis.code_name << '\n';
    os << "level " << (basis.level == TruncationLevel::first_level ? "first_level" : "codespace_only") << '\n';
    os << "elements " << basis.elements.size() << '\n';
    for (const auto& e : basis.elements) {
        os << e.level << ' ' << e.syndrome << ' ' << e.error << ' ' << e.terms.size();
        for (const auto& t : e.terms)
            os << ' ' << t.prefactor.real() << ' ' << t.prefactor.imag() << ' ' << t.left.label() << ' ' << t.syndrome
               << ' ' << t.right.label();
        os << '\n';
    }
    os << "policy " << basis.policy_index.size();
    for (std::size_t j = 0; j < basis.policy_index.size(); ++j) os << ' ' << basis.policy_index[j] << ' ' << basis.policy_sign[j];
    os << '\n';
    os << "residuals " << basis.max_exact_residual << ' ' << basis.max_feedback_residual << '\n';
    write_sparse(os, "depolarizing", basis.depolarizing);
    write_sparse(os, "measurement_drift", basis.measurement_drift);
    for (std::size_t l = 0; l < basis.measurement.size(); ++l) write_sparse(os, "measurement" + std::to_string(l), basis.measurement[l]);
    for (std::size_t j = 0; j < basis.feedback.size(); ++j) write_sparse(os, "feedback" + std::to_string(j), basis.feedback[j]);
    const std::string body = os.str();
    std::ofstream f(path);
    if (!f) throw InvalidArgument("cannot write basis cache " + path);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(body)));
    f << body << "checksum " << hex << '\n';
}

TruncatedBasis load_basis(const StabilizerCode& code, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConstructionError("cannot read basis cache " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    const auto pos = text.rfind("checksum ");
    if (pos == std::string::npos) throw ConstructionError("basis cache has no checksum");
    const std::string body = text.substr(0, pos);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(body)));
    if (text.compare(pos + 9, 16, hex) != 0) throw ConstructionError("basis cache checksum mismatch");

    std::istringstream in(body);
    std::string line, word, name, lev;
    std::getline(in, line);
    if (line != "qfilt-basis v1") throw ConstructionError("unknown basis cache format");
    in >> word >> name;
    if (word != "code" || name != code.name) throw ConstructionError("basis cache belongs to another code");
    in >> word >> lev;
    TruncatedBasis tb;
    tb.code_name = name;
    tb.level = lev == "first_level" ? TruncationLevel::first_level : TruncationLevel::codespace_only;
    tb.h = code.h;
    std::size_t count = 0;
    in >> word >> count;
    if (word != "elements" || count == 0 || count > 100000) throw ConstructionError("basis cache: bad element count");
    for (std::size_t i = 0; i < count; ++i) {
        BasisElement e;
        std::size_t nt = 0;
        if (!(in >> e.level >> e.syndrome >> e.error >> nt)) throw ConstructionError("basis cache: bad element");
        for (std::size_t k = 0; k < nt; ++k) {
            double re, im;
            std::string left, right;
            int s;
            if (!(in >> re >> im >> left >> s >> right)) throw ConstructionError("basis cache: bad term");
            if (s < 0 || s >= code.syndromes()) throw ConstructionError("basis cache: syndrome out of range");
            e.terms.push_back({cplx(re, im), PauliString::parse(left), s, PauliString::parse(right)});
        }
        if (e.level == 0) tb.syndrome_index.push_back(static_cast<int>(i));
        tb.elements.push_back(e);
    }
    std::size_t np = 0;
    in >> word >> np;
    if (word != "policy" || np != code.errors.size()) throw ConstructionError("basis cache: bad policy map");
    tb.policy_index.resize(np);
    tb.policy_sign.resize(np);
    for (std::size_t j = 0; j < np; ++j) in >> tb.policy_index[j] >> tb.policy_sign[j];
    in >> word >> tb.max_exact_residual >> tb.max_feedback_residual;
    const auto N = static_cast<Eigen::Index>(count);
    tb.depolarizing = read_sparse(in, "depolarizing", N);
    tb.measurement_drift = read_sparse(in, "measurement_drift", N);
    for (std::size_t l = 0; l < code.generators.size(); ++l) tb.measurement.push_back(read_sparse(in, "measurement" + std::to_string(l), N));
    for (std::size_t j = 0; j < code.errors.size(); ++j) tb.feedback.push_back(read_sparse(in, "feedback" + std::to_string(j), N));
    for (const auto& e : tb.elements) tb.ops.push_back(element_operator(code, e));
    if (static_cast<int>(tb.syndrome_index.size()) != code.syndromes()) throw ConstructionError("basis cache: syndrome count");
    return tb;
}

// Closed loop

QecTrajectory qec_run(const StabilizerCode& code, const TruncatedBasis* basis, const QecRunConfig& cfg) {
    if (!(cfg.dt > 0.0) || cfg.T < 0.0) throw InvalidArgument("invalid time grid");
    if (cfg.controller == ControllerKind::truncated && basis == nullptr)
        throw InvalidArgument("a truncated controller needs a basis");
    const FullFilter plant(code, cfg.gamma, cfg.kappa, cfg.plant_scheme);
    const Operator rho0 = code.logical_zero();
    Operator rho = rho0;
    Eigen::VectorXd p;
    if (cfg.controller == ControllerKind::truncated) p = truncated_coefficients(*basis, rho);
    // policy agreement is scored against the full Euler filter on the same record, which isolates truncation error
    const bool separate_ref = cfg.controller == ControllerKind::truncated && cfg.plant_scheme != StepScheme::euler;
    const FullFilter reference(code, cfg.gamma, cfg.kappa, StepScheme::euler);
    Operator rho_ref = rho;

    RngStream rng(cfg.seed, 11);
    const auto L = static_cast<Eigen::Index>(code.generators.size());
    const auto E = static_cast<Eigen::Index>(code.errors.size());
    const long steps = static_cast<long>(std::llround(cfg.T / cfg.dt));
    const long stride = std::max(1L, cfg.stride);
    const double sdt = std::sqrt(cfg.dt);

    QecTrajectory out;
    auto record = [&](double t) {
        out.time.push_back(t);
        out.codespace_fidelity.push_back(plant.codespace_fidelity(rho));
        out.codeword_fidelity.push_back(trace_product(rho0, rho));
    };
    record(0.0);
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(E), dW(L), dQ(L);
    for (long k = 0; k < steps; ++k) {
        if (cfg.controller != ControllerKind::none) {
            const Eigen::VectorXd full =
                feedback_policy(plant.first_level(separate_ref ? rho_ref : rho), cfg.lambda_max, 1.0, cfg.tie_tol);
            if (cfg.controller == ControllerKind::full) {
                lam = full;
            } else {
                lam = feedback_policy(truncated_first_level(*basis, p), cfg.lambda_max, 1.0, cfg.tie_tol);
                for (Eigen::Index j = 0; j < E; ++j) out.policy_agree += lam(j) == full(j) ? 1 : 0;
                out.policy_total += E;
            }
        }
        for (Eigen::Index l = 0; l < L; ++l) dW(l) = sdt * rng.normal();
        dQ = plant.signals(rho) * cfg.dt + dW;
        plant.step_innovation(rho, dW, lam, cfg.dt, k);
        if (cfg.controller == ControllerKind::truncated) truncated_step(*basis, p, dQ, cfg.gamma, cfg.kappa, lam, cfg.dt);
        if (separate_ref) reference.step(rho_ref, dQ, lam, cfg.dt, k);
        if ((k + 1) % stride == 0 || k + 1 == steps) record(static_cast<double>(k + 1) * cfg.dt);
    }
    return out;
}

double codeword_fidelity_discrete(double gamma_t, int n) {
    if (gamma_t < 0.0) throw InvalidArgument("time must be non-negative");
    if (n < 1) throw InvalidArgument("n must be positive");
    const double x = std::exp(-4.0 * gamma_t);
    const double q0 = (1.0 + 3.0 * x) / 4.0;
    const double q1 = (1.0 - x) / 4.0;
    return std::pow(q0, n) + 3.0 * n * std::pow(q0, n - 1) * q1;
}

}  // namespace qfilt
