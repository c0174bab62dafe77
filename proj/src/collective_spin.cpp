#include "qfilt/collective_spin.hpp"

#include <cmath>

#include "qfilt/errors.hpp"

namespace qfilt {

namespace {

using Sparse = Eigen::SparseMatrix<cplx>;

double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    k = std::min(k, n - k);
    double b = 1.0;
    for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
    return b < 9e15 ? std::round(b) : b;
}

bool valid_pair(int twoJ, int N) { return N >= 1 && twoJ >= 0 && twoJ <= N && (N - twoJ) % 2 == 0; }

Sparse spin_plus(int twoJ) {
    const double J = twoJ / 2.0;
    Sparse m(twoJ + 1, twoJ + 1);
    for (int k = 1; k <= twoJ; ++k) {
        const double M = J - k;
        m.insert(k - 1, k) = std::sqrt(J * (J + 1) - M * (M + 1));
    }
    m.makeCompressed();
    return m;
}

Sparse spin_minus(int twoJ) { return Sparse(spin_plus(twoJ).adjoint()); }

Sparse spin_z(int twoJ) {
    const double J = twoJ / 2.0;
    Sparse m(twoJ + 1, twoJ + 1);
    for (int k = 0; k <= twoJ; ++k) m.insert(k, k) = J - k;
    m.makeCompressed();
    return m;
}

Sparse identity(int twoJ) {
    Sparse m(twoJ + 1, twoJ + 1);
    m.setIdentity();
    return m;
}

Sparse block_word(int twoJ, const std::string& word) {
    Sparse out = identity(twoJ);
    for (char c : word) {
        switch (c) {
            case '+': out = out * spin_plus(twoJ); break;
            case '-': out = out * spin_minus(twoJ); break;
            case 'z': out = out * spin_z(twoJ); break;
            default: throw InvalidArgument(std::string("unknown spin operator '") + c + "' (use +, -, z)");
        }
    }
    return out;
}

double table(char kind, SpinIndex q, double J, double M) {
    auto root = [](double v) { return std::sqrt(std::max(0.0, v)); };
    switch (kind) {
        case 'A':
            if (q == SpinIndex::plus) return root((J - M) * (J + M + 1));
            if (q == SpinIndex::minus) return root((J + M) * (J - M + 1));
            return M;
        case 'B':
            if (q == SpinIndex::plus) return root((J - M) * (J - M - 1));
            if (q == SpinIndex::minus) return -root((J + M) * (J + M - 1));
            return root((J + M) * (J - M));
        default:
            if (q == SpinIndex::plus) return -root((J + M + 1) * (J + M + 2));
            if (q == SpinIndex::minus) return root((J - M + 1) * (J - M + 2));
            return root((J + M + 1) * (J - M + 1));
    }
}

double shift(SpinIndex q) { return q == SpinIndex::plus ? 1.0 : q == SpinIndex::minus ? -1.0 : 0.0; }

// Prefactors of the J, J-1 and J+1 terms for block 2J.
void prefactors(int twoJ, int N, double& a, double& b, double& d) {
    const double J = twoJ / 2.0;
    const double dJ = irrep_degeneracy(twoJ, N);
    const double aJ = irrep_alpha(twoJ, N);
    const double aJ1 = irrep_alpha(twoJ + 2, N);
    a = twoJ == 0 ? 0.0 : (1.0 + aJ1 / dJ * (2 * J + 1) / (J + 1)) / (2 * J);
    b = twoJ == 0 ? 0.0 : aJ / (dJ * 2 * J);
    d = aJ1 / (dJ * 2 * (J + 1));
}

void check_index(double J, double M, int N) {
    const double twoJ = 2 * J, twoM = 2 * M;
    if (twoJ != std::round(twoJ) || twoM != std::round(twoM) || !valid_pair(static_cast<int>(twoJ), N) ||
        std::abs(M) > J || std::fmod(std::abs(twoJ - twoM), 2.0) != 0.0)
        throw InvalidArgument("invalid collective index (J, M) for this N");
}

}  // namespace

double irrep_alpha(int twoJ, int N) {
    if (!valid_pair(twoJ, N)) return 0.0;
    return binomial(N, (N - twoJ) / 2);
}

double irrep_degeneracy(int twoJ, int N) {
    if (!valid_pair(twoJ, N)) return 0.0;
    return irrep_alpha(twoJ, N) - irrep_alpha(twoJ + 2, N);
}

long collective_dim(int N) {
    if (N < 1) throw InvalidArgument("N must be positive");
    const long n = N;
    return n % 2 ? (n + 3) * (n + 1) / 4 : (n + 2) * (n + 2) / 4;
}

CollectiveDensity CollectiveDensity::zero(int N) {
    if (N < 1) throw InvalidArgument("N must be positive");
    CollectiveDensity r;
    r.N = N;
    for (int twoJ = N; twoJ >= 0; twoJ -= 2) r.blocks.push_back(Operator::Zero(twoJ + 1, twoJ + 1));
    return r;
}

std::size_t CollectiveDensity::index_of(int tj) const {
    if (!valid_pair(tj, N)) throw InvalidArgument("no block with 2J = " + std::to_string(tj));
    return static_cast<std::size_t>((N - tj) / 2);
}

double CollectiveDensity::physical_trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) t += irrep_degeneracy(twoJ(i), N) * blocks[i].trace().real();
    return t;
}

bool CollectiveDensity::is_valid() const {
    if (std::abs(physical_trace() - 1.0) > 1e-9) return false;
    for (const auto& b : blocks)
        if (!is_hermitian(b, 1e-10)) return false;
    return true;
}

double CollectiveDensity::max_abs() const {
    double m = 0.0;
    for (const auto& b : blocks)
        if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
}

CollectiveDensity operator+(const CollectiveDensity& a, const CollectiveDensity& b) {
    if (a.N != b.N) throw InvalidArgument("collective states have different N");
    CollectiveDensity r = a;
    for (std::size_t i = 0; i < r.blocks.size(); ++i) r.blocks[i] += b.blocks[i];
    return r;
}

CollectiveDensity operator*(double c, const CollectiveDensity& a) {
    CollectiveDensity r = a;
    for (auto& b : r.blocks) b *= c;
    return r;
}

CollectiveDensity top_block_state(int N, const Ket& psi) {
    if (psi.size() != N + 1) throw InvalidArgument("top-block state must have N + 1 amplitudes");
    CollectiveDensity r = CollectiveDensity::zero(N);
    const Ket v = psi / psi.norm();
    r.blocks[0] = v * v.adjoint();
    return r;
}

CollectiveDensity cat_state(int N) {
    Ket psi = Ket::Zero(N + 1);
    psi(0) = psi(N) = 1.0 / std::sqrt(2.0);
    if (N == 0) psi(0) = 1.0;
    return top_block_state(N, psi);
}

CollectiveDensity coherent_up(int N) {
    Ket psi = Ket::Zero(N + 1);
    psi(0) = 1.0;
    return top_block_state(N, psi);
}

std::vector<GTerm> g_tensor_apply(SpinIndex q, SpinIndex r, double J, double M, double Mp, int N) {
    check_index(J, M, N);
    check_index(J, Mp, N);
    const int twoJ = static_cast<int>(std::lround(2 * J));
    double pa, pb, pd;
    prefactors(twoJ, N, pa, pb, pd);
    std::vector<GTerm> out;
    const double Mq = M + shift(q), Mr = Mp + shift(r);
    auto push = [&](char kind, double Jout, double pref) {
        if (pref == 0.0 || Jout < 0.0 || std::abs(Mq) > Jout || std::abs(Mr) > Jout) return;
        const double c = pref * table(kind, q, J, M) * table(kind, r, J, Mp);
        if (c != 0.0) out.push_back({Jout, Mq, Mr, c});
    };
    push('A', J, pa);
    push('B', J - 1, pb);
    push('D', J + 1, pd);
    return out;
}

void SpinChannel::validate() const {
    if (!(rate >= 0.0) || !std::isfinite(rate)) throw InvalidArgument("channel rate must be non-negative");
}

SpinChannel SpinChannel::symmetric(char op, double rate) {
    SpinChannel c;
    c.rate = rate;
    switch (op) {
        case '+': c.sp = 1.0; break;
        case '-': c.sm = 1.0; break;
        case 'z': c.sz = 1.0; break;
        default: throw InvalidArgument(std::string("unknown channel operator '") + op + "' (use +, -, z)");
    }
    c.validate();
    return c;
}

SpinChannel SpinChannel::collective_of(char op, double rate) {
    SpinChannel c = symmetric(op, rate);
    c.collective = true;
    return c;
}

CollectiveHamiltonian counter_twisting(double Lambda) {
    return {{cplx(0.0, -Lambda), "++"}, {cplx(0.0, Lambda), "--"}};
}

CollectiveEvolver::CollectiveEvolver(int N, const CollectiveHamiltonian& H, const std::vector<SpinChannel>& channels)
    : N_(N) {
    if (N < 1) throw InvalidArgument("N must be positive");
    const CollectiveDensity shape = CollectiveDensity::zero(N);
    const std::size_t nb = shape.block_count();
    for (std::size_t i = 0; i < nb; ++i) {
        const int tj = shape.twoJ(i);
        Sparse h(tj + 1, tj + 1);
        for (const auto& term : H) h += term.coefficient * block_word(tj, term.word);
        const Operator hd(h);
        if (!is_hermitian(hd, 1e-9 * std::max(1.0, qfilt::max_abs(hd)))) throw InvalidArgument("Hamiltonian is not Hermitian");
        h.prune(cplx(0.0), 0.0);
        H_.push_back(h);
    }
    for (const auto& ch : channels) {
        ch.validate();
        ChannelBlocks cb;
        cb.rate = ch.rate;
        cb.collective = ch.collective;
        cb.sI = ch.sI;
        // single-qubit s^dag s = a I + b sigma_+ + c sigma_- + e sigma_z
        Eigen::Matrix2cd s;
        s << ch.sI + ch.sz, ch.sp, ch.sm, ch.sI - ch.sz;
        const Eigen::Matrix2cd m = s.adjoint() * s;
        const cplx a = (m(0, 0) + m(1, 1)) / 2.0, e = (m(0, 0) - m(1, 1)) / 2.0;
        for (std::size_t i = 0; i < nb; ++i) {
            const int tj = shape.twoJ(i);
            // collective sum_q s_q J_q with J_z = sum_n sigma_z = 2 J_z(block)
            Sparse C = ch.sp * spin_plus(tj) + ch.sm * spin_minus(tj) + (2.0 * ch.sz) * spin_z(tj);
            if (ch.collective) {
                Sparse S = C + (ch.sI * static_cast<double>(N)) * identity(tj);
                cb.SN.push_back(Sparse(S.adjoint()) * S);
                cb.C.push_back(S);
            } else {
                Sparse SN = (a * static_cast<double>(N)) * identity(tj) + m(0, 1) * spin_plus(tj) +
                            m(1, 0) * spin_minus(tj) + (2.0 * e) * spin_z(tj);
                cb.SN.push_back(SN);
                cb.C.push_back(C);
            }
        }
        if (!ch.collective) {
            const cplx coeff[3] = {ch.sp, ch.sm, 2.0 * ch.sz};  // z table entries belong to sigma_z / 2
            const SpinIndex idx[3] = {SpinIndex::plus, SpinIndex::minus, SpinIndex::z};
            for (std::size_t i = 0; i < nb; ++i) {
                const int tj = shape.twoJ(i);
                const double J = tj / 2.0;
                double pref[3];
                prefactors(tj, N, pref[0], pref[1], pref[2]);
                const char kinds[3] = {'A', 'B', 'D'};
                const int dtj[3] = {0, -2, 2};
                for (int k = 0; k < 3; ++k) {
                    const int tout = tj + dtj[k];
                    if (pref[k] == 0.0 || !valid_pair(tout, N)) continue;
                    const double Jout = tout / 2.0;
                    std::vector<Eigen::Triplet<cplx>> trip;
                    for (int col = 0; col <= tj; ++col) {
                        const double M = J - col;
                        for (int qi = 0; qi < 3; ++qi) {
                            if (coeff[qi] == 0.0) continue;
                            const double Mq = M + shift(idx[qi]);
                            if (std::abs(Mq) > Jout) continue;
                            const double v = table(kinds[k], idx[qi], J, M);
                            if (v == 0.0) continue;
                            const int row = static_cast<int>(std::lround(Jout - Mq));
                            trip.emplace_back(row, col, coeff[qi] * v);
                        }
                    }
                    if (trip.empty()) continue;
                    Sparse T(tout + 1, tj + 1);
                    T.setFromTriplets(trip.begin(), trip.end());
                    // per-irrep elements: weight by d^J / d^J'
                    const double w = pref[k] * irrep_degeneracy(tj, N) / irrep_degeneracy(tout, N);
                    cb.transfers.push_back({i, shape.index_of(tout), w, T});
                }
            }
        }
        channels_.push_back(std::move(cb));
    }
}

CollectiveDensity CollectiveEvolver::rhs(const CollectiveDensity& rho) const {
    if (rho.N != N_) throw InvalidArgument("collective state has a different N");
    CollectiveDensity out = CollectiveDensity::zero(N_);
    Operator tmp;
    for (std::size_t i = 0; i < rho.blocks.size(); ++i) {
        if (!H_[i].nonZeros()) continue;
        tmp.noalias() = H_[i] * rho.blocks[i];
        out.blocks[i] += -I_unit * (tmp - tmp.adjoint());
    }
    for (const auto& cb : channels_) {
        if (cb.rate == 0.0) continue;
        for (std::size_t i = 0; i < rho.blocks.size(); ++i) {
            const Operator& r = rho.blocks[i];
            Operator& o = out.blocks[i];
            tmp.noalias() = cb.SN[i] * r;
            o -= (0.5 * cb.rate) * (tmp + tmp.adjoint());
            if (cb.collective) {
                // C r C^dag = C (C r^dag)^dag, using only sparse-dense products
                tmp.noalias() = cb.C[i] * r.adjoint();
                o.noalias() += cb.rate * (cb.C[i] * tmp.adjoint());
            } else if (cb.sI != 0.0) {
                tmp.noalias() = std::conj(cb.sI) * (cb.C[i] * r);
                o += cb.rate * (tmp + tmp.adjoint());
                o += (cb.rate * std::norm(cb.sI) * N_) * r;
            }
        }
        for (const auto& t : cb.transfers) {
            tmp.noalias() = t.T * rho.blocks[t.from].adjoint();
            out.blocks[t.to].noalias() += (cb.rate * t.weight) * (t.T * tmp.adjoint());
        }
    }
    return out;
}

void CollectiveEvolver::step(CollectiveDensity& rho, double dt) const {
    const CollectiveDensity k1 = rhs(rho);
    const CollectiveDensity k2 = rhs(rho + (dt / 2) * k1);
    const CollectiveDensity k3 = rhs(rho + (dt / 2) * k2);
    const CollectiveDensity k4 = rhs(rho + dt * k3);
    for (std::size_t i = 0; i < rho.blocks.size(); ++i) {
        Operator& b = rho.blocks[i];
        b += (dt / 6) * (k1.blocks[i] + 2.0 * k2.blocks[i] + 2.0 * k3.blocks[i] + k4.blocks[i]);
        b = 0.5 * (b + b.adjoint()).eval();
        if (!b.allFinite()) throw NumericFailure("collective master equation diverged");
    }
}

CollectiveDensity symmetric_lindblad_apply(const SpinChannel& channel, const CollectiveDensity& rho) {
    SpinChannel c = channel;
    c.rate = 1.0;
    return CollectiveEvolver(rho.N, {}, {c}).rhs(rho);
}

CollectiveDensity collective_master_step(const CollectiveHamiltonian& H, const std::vector<SpinChannel>& channels,
                                         const CollectiveDensity& rho, double dt) {
    CollectiveDensity out = rho;
    CollectiveEvolver(rho.N, H, channels).step(out, dt);
    return out;
}

double irrep_population(const CollectiveDensity& rho, int twoJ) {
    return irrep_degeneracy(twoJ, rho.N) * rho.block(twoJ).trace().real();
}

double top_block_fidelity(const CollectiveDensity& rho, const Ket& psi) {
    if (psi.size() != rho.N + 1) throw InvalidArgument("top-block state must have N + 1 amplitudes");
    return (psi.adjoint() * rho.blocks[0] * psi)(0).real();
}

cplx collective_expectation(const CollectiveDensity& rho, const std::string& word) {
    cplx v = 0.0;
    for (std::size_t i = 0; i < rho.blocks.size(); ++i) {
        const int tj = rho.twoJ(i);
        const Operator A(block_word(tj, word));
        v += irrep_degeneracy(tj, rho.N) * (A.cwiseProduct(rho.blocks[i].transpose())).sum();
    }
    return v;
}

double squeezing_xi2(const CollectiveDensity& rho) {
    const double jz = collective_expectation(rho, "z").real();
    if (std::abs(jz) < 1e-12) throw UndefinedMetric("<J_z> vanishes so the squeezing parameter is undefined");
    // J_y = (J_+ - J_-) / 2i
    const cplx pp = collective_expectation(rho, "++"), pm = collective_expectation(rho, "+-"),
               mp = collective_expectation(rho, "-+"), mm = collective_expectation(rho, "--");
    const double jy = ((collective_expectation(rho, "+") - collective_expectation(rho, "-")) / (2.0 * I_unit)).real();
    const double jy2 = (-(pp - pm - mp + mm) / 4.0).real();
    return rho.N * (jy2 - jy * jy) / (jz * jz);
}

}  // namespace qfilt
