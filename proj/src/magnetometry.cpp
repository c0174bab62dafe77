#include "qfilt/magnetometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "qfilt/errors.hpp"
#include "qfilt/sde_engine.hpp"

namespace qfilt {

void DoublePassParams::validate() const {
    if (!(F >= 0.5) || std::abs(2.0 * F - std::round(2.0 * F)) > 1e-12)
        throw InvalidArgument("F must be a positive multiple of 1/2");
    if (M < 0.0 || K < 0.0) throw InvalidArgument("M and K must be non-negative");
    if (!std::isfinite(gamma) || !std::isfinite(B)) throw InvalidArgument("gamma and B must be finite");
}

DiffusiveModel double_pass_model(const DoublePassParams& p) {
    p.validate();
    const SpinOperators s = spin_operators(p.F);
    const double sKM = std::sqrt(p.K * p.M);
    Operator L = std::sqrt(p.M) * s.Jz + I_unit * std::sqrt(p.K) * s.Jy;
    Operator H = -p.gamma * p.B * s.Jy - 0.5 * sKM * (s.Jz * s.Jy + s.Jy * s.Jz);
    H = 0.5 * (H + H.adjoint()).eval();
    return DiffusiveModel(H, L);
}

Operator double_pass_sme_step(const DoublePassParams& p, const Operator& rho, double dZ, double dt) {
    p.validate();
    if (rho.rows() != p.dim() || rho.cols() != p.dim()) throw InvalidArgument("state dimension must be 2F+1");
    const SpinOperators s = spin_operators(p.F);
    const Operator& Fz = s.Jz;
    const Operator& Fy = s.Jy;
    const double sM = std::sqrt(p.M), sK = std::sqrt(p.K), sKM = std::sqrt(p.K * p.M);
    const double mz = (Fz * rho).trace().real();
    const double dW = dZ - 2.0 * sM * mz * dt;

    const Operator Fyr = Fy * rho, rFy = rho * Fy;
    const Operator Fzr = Fz * rho, rFz = rho * Fz;
    const Operator anti = Fzr + rFz;
    Operator drift = I_unit * p.gamma * p.B * (Fyr - rFy);
    drift += I_unit * sKM * (Fy * anti - anti * Fy);
    drift += p.M * (Fz * rFz - 0.5 * (Fz * Fzr + rFz * Fz));
    drift += p.K * (Fy * rFy - 0.5 * (Fy * Fyr + rFy * Fy));
    const Operator diff = sM * (anti - 2.0 * mz * rho) + I_unit * sK * (Fyr - rFy);

    Operator out = rho + drift * dt + diff * dW;
    out = 0.5 * (out + out.adjoint()).eval();
    const double tr = out.trace().real();
    if (!(tr > 0.0) || !out.allFinite()) throw NumericFailure("double-pass filter diverged");
    return out / tr;
}

Ket double_pass_sse_step(const DoublePassParams& p, const Ket& psi, double dW, double dt) {
    p.validate();
    if (psi.size() != p.dim()) throw InvalidArgument("state dimension must be 2F+1");
    const SpinOperators s = spin_operators(p.F);
    const Operator& Fz = s.Jz;
    const Operator& Fy = s.Jy;
    const double n2 = psi.squaredNorm();
    const double my = psi.dot(Fy * psi).real() / n2;
    if (std::abs(my) > 1e-8 * std::max(1.0, p.F)) throw InvalidArgument("closed-form double-pass SSE requires <Fy> = 0");
    const double mz = psi.dot(Fz * psi).real() / n2;
    const double sM = std::sqrt(p.M), sK = std::sqrt(p.K), sKM = std::sqrt(p.K * p.M);

    const Ket zc = Fz * psi - mz * psi;  // (Fz - <Fz>) psi
    const Ket ypsi = Fy * psi;
    Ket drift = I_unit * p.gamma * p.B * ypsi;
    drift -= 0.5 * p.M * (Fz * zc - mz * zc);
    drift += I_unit * sKM * (Fy * (Fz * psi) + mz * ypsi);
    drift -= 0.5 * p.K * (Fy * ypsi);
    const Ket diff = sM * zc + I_unit * sK * ypsi;

    Ket out = psi + drift * dt + diff * dW;
    const double n = out.norm();
    if (!std::isfinite(n) || n == 0.0) throw NumericFailure("double-pass SSE diverged");
    return out / n;
}

// Real-amplitude stepper

RealDoublePass::RealDoublePass(const DoublePassParams& p) : p_(p) {
    p.validate();
    const SpinOperators s = spin_operators(p.F);
    const Eigen::MatrixXd Fz = s.Jz.real();
    const Eigen::MatrixXd Gy = (I_unit * s.Jy).real();
    const double sKM = std::sqrt(p.K * p.M);
    const Eigen::MatrixXd A0 = -0.5 * p.M * Fz * Fz + sKM * Gy * Fz + 0.5 * p.K * Gy * Gy;
    const Eigen::MatrixXd A1 = p.M * Fz + sKM * Gy;
    Fz_ = Fz.sparseView(0.0, 0.0);
    Gy_ = Gy.sparseView(0.0, 0.0);
    A0_ = A0.sparseView(0.0, 0.0);
    A1_ = A1.sparseView(0.0, 0.0);
    w_.resize(p.dim());
    u_.resize(p.dim());
}

double RealDoublePass::mean_Fz(const Eigen::VectorXd& psi) const {
    w_.noalias() = Fz_ * psi;
    return psi.dot(w_) / psi.squaredNorm();
}

void RealDoublePass::step(Eigen::VectorXd& psi, double B, double dW, double dt) const {
    const double sM = std::sqrt(p_.M), sK = std::sqrt(p_.K);
    u_.noalias() = Fz_ * psi;
    const double m = psi.dot(u_);
    // diffusion: sqrt(M)(Fz - m) psi + sqrt(K) Gy psi
    w_.noalias() = Gy_ * psi;
    Eigen::VectorXd d = (sM * dW) * (u_ - m * psi) + (sK * dW + p_.gamma * B * dt) * w_;
    d.noalias() += dt * (A0_ * psi);
    d.noalias() += (m * dt) * (A1_ * psi);
    d -= (0.5 * p_.M * m * m * dt) * psi;
    psi += d;
    const double n = psi.norm();
    if (!std::isfinite(n) || n == 0.0) throw NumericFailure("double-pass SSE diverged");
    psi /= n;
}

double RealDoublePass::step_record(Eigen::VectorXd& psi, double B, double dZ, double dt) const {
    const double dW = dZ - 2.0 * std::sqrt(p_.M) * mean_Fz(psi) * dt;
    step(psi, B, dW, dt);
    return dW;
}

Eigen::VectorXd RealDoublePass::coherent_x() const {
    return spin_coherent(p_.F, std::numbers::pi / 2.0, 0.0).real();
}

// Fisher information

FisherSample fisher_information_fd(const DoublePassParams& p, double deltaB, double T, double dt,
                                   std::uint64_t seed) {
    if (!(deltaB > 0.0)) throw InvalidArgument("deltaB must be positive");
    if (!(dt > 0.0) || T < 0.0) throw InvalidArgument("invalid time grid");
    const RealDoublePass stepper(p);
    Eigen::VectorXd psi0 = stepper.coherent_x();
    Eigen::VectorXd psip = psi0, psim = psi0;
    RngStream rng(seed, 0);
    const long steps = static_cast<long>(std::llround(T / dt));
    const double sdt = std::sqrt(dt);
    for (long k = 0; k < steps; ++k) {
        const double dW = sdt * rng.normal();
        stepper.step(psi0, p.B, dW, dt);
        stepper.step(psip, p.B + deltaB, dW, dt);
        stepper.step(psim, p.B - deltaB, dW, dt);
    }
    // (rho+ - rho-) psi0 / (2 dB) for pure real states
    const Eigen::VectorXd v = (psip * psip.dot(psi0) - psim * psim.dot(psi0)) / (2.0 * deltaB);
    FisherSample out;
    out.raw = v.squaredNorm();
    out.qfi = 4.0 * out.raw;
    out.bound = out.raw > 0.0 ? 0.5 / std::sqrt(out.raw) : std::numeric_limits<double>::infinity();
    return out;
}

FisherAverage fisher_information_average(const DoublePassParams& p, double deltaB, double T, double dt,
                                         std::uint64_t base_seed, std::size_t count) {
    if (count == 0) throw InvalidArgument("need at least one sample");
    std::vector<double> raw(count);
    for (std::size_t i = 0; i < count; ++i) raw[i] = fisher_information_fd(p, deltaB, T, dt, base_seed + i).raw;
    FisherAverage a;
    a.samples = count;
    for (double r : raw) a.mean_raw += r;
    a.mean_raw /= static_cast<double>(count);
    if (count > 1) {
        for (double r : raw) a.sd_raw += (r - a.mean_raw) * (r - a.mean_raw);
        a.sd_raw = std::sqrt(a.sd_raw / static_cast<double>(count - 1));
    }
    a.mean_qfi = 4.0 * a.mean_raw;
    a.bound = 0.5 / std::sqrt(a.mean_raw);
    a.bound_sigma = std::pow(a.mean_raw, -1.5) * a.sd_raw / 2.0;
    return a;
}

double unitary_fisher_raw(const DoublePassParams& p, double T) {
    // Var(Fy) = F/2 on |F,+F_x>, raw = (gamma T)^2 Var(Fy)
    return p.gamma * p.gamma * T * T * p.F / 2.0;
}

// Projection filter

double projection_innovation(const GaussianProjectionState& s, const DoublePassParams& p, double dZ, double dt) {
    return dZ + 2.0 * p.F * std::sqrt(p.M) * std::sin(s.theta) * dt;
}

GaussianProjectionState projection_filter_step(const GaussianProjectionState& s, double dW,
                                               const DoublePassParams& p, double dt) {
    const double sM = std::sqrt(p.M), sK = std::sqrt(p.K);
    const double e8 = std::exp(-8.0 * p.F * s.xi);
    const double st = std::sin(s.theta), ct = std::cos(s.theta);
    GaussianProjectionState out;
    out.theta = s.theta +
                (p.B * p.gamma - 0.25 * p.M * e8 * e8 * std::sin(2.0 * s.theta) + 2.0 * p.F * sK * sM * st) * dt -
                (sM * e8 * ct + sK) * dW;
    // the xi equation is integrated exactly over the step with theta frozen
    out.xi = s.xi + std::log1p(2.0 * p.F * p.M * ct * ct * dt * e8) / (8.0 * p.F);
    if (!std::isfinite(out.theta) || !std::isfinite(out.xi)) throw NumericFailure("projection filter diverged");
    return out;
}

double projection_xi_closed_form(const DoublePassParams& p, double t) {
    return std::log1p(2.0 * p.F * p.M * t) / (8.0 * p.F);
}

LinearCoefficients smallangle_kalman_coefficients(const DoublePassParams& p, double t) {
    if (t < 0.0) throw InvalidArgument("t must be non-negative");
    const double sM = std::sqrt(p.M), sK = std::sqrt(p.K);
    const double g = 1.0 + 2.0 * p.F * p.M * t;
    LinearCoefficients c;
    c.A = Eigen::MatrixXd::Zero(2, 2);
    c.A(0, 0) = 2.0 * p.F * std::sqrt(p.K * p.M) - p.M / (2.0 * g * g);
    c.A(0, 1) = p.gamma;
    c.B = Eigen::MatrixXd::Zero(2, 1);
    c.B(0, 0) = -sM / g - sK;
    c.C = Eigen::MatrixXd::Zero(1, 2);
    c.C(0, 0) = -2.0 * sM * p.F;
    c.D = Eigen::MatrixXd::Identity(1, 1);
    return c;
}

LinearModel smallangle_kalman_model(const DoublePassParams& p) {
    p.validate();
    LinearModel m;
    m.coefficients = [p](double t) { return smallangle_kalman_coefficients(p, t); };
    m.shared_noise = true;
    return m;
}

// Q-function

Eigen::MatrixXd q_function(const Ket& psi, const std::vector<double>& thetas, const std::vector<double>& phis) {
    const double F = 0.5 * static_cast<double>(psi.size() - 1);
    if (psi.size() < 2) throw InvalidArgument("state must have dimension 2F+1 >= 2");
    const Ket u = psi / psi.norm();
    Eigen::MatrixXd Q(thetas.size(), phis.size());
    for (std::size_t i = 0; i < thetas.size(); ++i)
        for (std::size_t j = 0; j < phis.size(); ++j)
            Q(i, j) = std::norm(spin_coherent(F, thetas[i], phis[j]).dot(u));
    return Q;
}

// Particle filter

DoublePassParticles::DoublePassParticles(const DoublePassParams& p) : stepper_(p), psi0_(stepper_.coherent_x()) {}

double DoublePassParticles::signal(const ParticleEnsemble& e, std::size_t i) const {
    return 2.0 * std::sqrt(stepper_.params().M) * stepper_.mean_Fz(e.vectors[i]);
}

void DoublePassParticles::advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) {
    stepper_.step_record(e.vectors[i], e.params[i], dM, dt);
}

void DoublePassParticles::push_initial(ParticleEnsemble& e, double xi) const {
    e.params.push_back(xi);
    e.vectors.push_back(psi0_);
}

MagnetometerRecord magnetometer_truth(const DoublePassParams& p, const std::vector<double>& dW, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    const RealDoublePass stepper(p);
    Eigen::VectorXd psi = stepper.coherent_x();
    MagnetometerRecord rec;
    rec.dW = dW;
    rec.dZ.reserve(dW.size());
    rec.mean_Fz.reserve(dW.size() + 1);
    const double sM = std::sqrt(p.M);
    rec.mean_Fz.push_back(stepper.mean_Fz(psi));
    for (std::size_t k = 0; k < dW.size(); ++k) {
        rec.dZ.push_back(2.0 * sM * rec.mean_Fz.back() * dt + dW[k]);
        stepper.step(psi, p.B, dW[k], dt);
        rec.mean_Fz.push_back(stepper.mean_Fz(psi));
    }
    return rec;
}

MagnetometerRecord magnetometer_truth(const DoublePassParams& p, double T, double dt, std::uint64_t seed,
                                      std::uint64_t stream) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    const long steps = static_cast<long>(std::llround(T / dt));
    RngStream rng(seed, stream);
    std::vector<double> dW(static_cast<std::size_t>(std::max(0L, steps)));
    const double sdt = std::sqrt(dt);
    for (double& w : dW) w = sdt * rng.normal();
    return magnetometer_truth(p, dW, dt);
}

ParticleFilterResult magnetometry_particle_filter(const DoublePassParams& p, const std::vector<double>& dZ, double dt,
                                                  const GaussianPrior& prior, const ParticleFilterConfig& cfg) {
    DoublePassParticles dyn(p);
    return particle_filter_run(dyn, dZ, dt, prior, cfg);
}

PairedFilterResult paired_magnetometry_run(const DoublePassParams& p, double T, double dt, const GaussianPrior& prior,
                                           const ParticleFilterConfig& cfg) {
    DoublePassParams single = p;
    single.K = 0.0;
    const MagnetometerRecord dp = magnetometer_truth(p, T, dt, cfg.seed, 7);
    const MagnetometerRecord sp = magnetometer_truth(single, dp.dW, dt);
    PairedFilterResult out;
    out.single_pass = magnetometry_particle_filter(single, sp.dZ, dt, prior, cfg);
    out.double_pass = magnetometry_particle_filter(p, dp.dZ, dt, prior, cfg);
    return out;
}

}  // namespace qfilt
