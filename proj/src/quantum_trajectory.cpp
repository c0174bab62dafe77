#include "qfilt/quantum_trajectory.hpp"

#include <cmath>

#include "qfilt/errors.hpp"
#include "qfilt/sde_engine.hpp"

namespace qfilt {

DiffusiveModel::DiffusiveModel(Operator H_, Operator L_) : H(std::move(H_)), L(std::move(L_)) {
    require_square(H, "H");
    require_same_dim(H, L);
    if (!is_hermitian(H, 1e-12 * std::max(1.0, max_abs(H)))) throw InvalidArgument("H must be Hermitian");
}

// SME

SmeStepper::SmeStepper(const DiffusiveModel& model, StepScheme scheme) : model_(model), scheme_(scheme) {
    const auto d = model.dim();
    Ld_ = model.L.adjoint();
    K_ = -I_unit * model.H - 0.5 * Ld_ * model.L;
    L2_ = model.L * model.L;
    a_.resize(d, d);
    b_.resize(d, d);
    c_.resize(d, d);
    drho_.resize(d, d);
}

double SmeStepper::signal(const Operator& rho) const {
    // Tr[(L + L^dag) rho] = 2 Re Tr[L rho] for Hermitian rho
    return 2.0 * (model_.L.cwiseProduct(rho.transpose())).sum().real();
}

void SmeStepper::step_innovation(Operator& rho, double dW, double dt, long step_index) {
    const Operator& L = model_.L;
    b_.noalias() = L * rho;
    const double s = 2.0 * b_.trace().real();
    if (scheme_ == StepScheme::kraus) {
        const double dy = dW + s * dt;
        c_ = dt * K_ + dy * L + (0.5 * (dy * dy - dt)) * L2_;
        c_.diagonal().array() += 1.0;
        a_.noalias() = c_ * rho;
        rho.noalias() = a_ * c_.adjoint();
    } else {
        // drift: K rho + rho K^dag + L rho L^dag; innovation term: M[L] rho
        a_.noalias() = K_ * rho;
        c_.noalias() = b_ * Ld_;
        drho_ = (a_ + a_.adjoint() + c_) * dt;
        const Operator G = b_ + b_.adjoint() - s * rho;
        drho_ += G * dW;
        if (scheme_ == StepScheme::milstein) {
            a_.noalias() = L * G;
            const double sG = 2.0 * a_.trace().real();
            drho_ += 0.5 * (a_ + a_.adjoint() - sG * rho - s * G) * (dW * dW - dt);
        }
        rho += drho_;
    }
    a_ = 0.5 * (rho + rho.adjoint());
    const double tr = a_.trace().real();
    if (!std::isfinite(tr) || !a_.allFinite() || tr <= 0.0)
        throw NumericFailure("stochastic master equation produced an invalid state", step_index);
    rho = a_ / tr;
}

double SmeStepper::step(Operator& rho, double dY, double dt, long step_index) {
    const double dW = dY - signal(rho) * dt;
    step_innovation(rho, dW, dt, step_index);
    return dW;
}

// SSE

SseStepper::SseStepper(const DiffusiveModel& model, StepScheme scheme) : model_(model), scheme_(scheme) {
    K_ = -I_unit * model.H - 0.5 * model.L.adjoint() * model.L;
    L2_ = model.L * model.L;
    const auto d = model.dim();
    Lpsi_.resize(d);
    Kpsi_.resize(d);
    b_.resize(d);
    Lb_.resize(d);
    dpsi_.resize(d);
}

cplx SseStepper::mean_L(const Ket& psi) const { return psi.dot(model_.L * psi); }

void SseStepper::step_innovation(Ket& psi, double dW, double dt, long step_index) {
    Lpsi_.noalias() = model_.L * psi;
    Kpsi_.noalias() = K_ * psi;
    const cplx ell = psi.dot(Lpsi_);  // <L>
    if (scheme_ == StepScheme::kraus) {
        const double dy = dW + 2.0 * ell.real() * dt;
        dpsi_ = psi + dt * Kpsi_ + dy * Lpsi_;
        dpsi_.noalias() += (0.5 * (dy * dy - dt)) * (L2_ * psi);
        psi = dpsi_;
        const double n = psi.norm();
        if (!std::isfinite(n) || n == 0.0)
            throw NumericFailure("stochastic Schroedinger equation diverged", step_index);
        psi /= n;
        return;
    }
    // A psi = K psi + <L^dag> L psi - |<L>|^2 psi / 2,  B psi = L psi - <L> psi
    b_ = Lpsi_ - ell * psi;
    dpsi_ = (Kpsi_ + std::conj(ell) * Lpsi_ - 0.5 * std::norm(ell) * psi) * dt + b_ * dW;
    if (scheme_ == StepScheme::milstein) {
        Lb_.noalias() = model_.L * b_;
        const cplx dell = b_.dot(Lpsi_) + psi.dot(Lb_);
        dpsi_ += 0.5 * (Lb_ - ell * b_ - dell * psi) * (dW * dW - dt);
    }
    psi += dpsi_;
    const double n = psi.norm();
    if (!std::isfinite(n) || n == 0.0) throw NumericFailure("stochastic Schroedinger equation diverged", step_index);
    psi /= n;
}

double SseStepper::step(Ket& psi, double dY, double dt, long step_index) {
    const double dW = dY - 2.0 * mean_L(psi).real() * dt;
    step_innovation(psi, dW, dt, step_index);
    return dW;
}

Operator sme_step(const DiffusiveModel& model, const Operator& rho, double dY, double dt, StepScheme scheme) {
    require_same_dim(model.H, rho);
    SmeStepper stepper(model, scheme);
    Operator out = rho;
    stepper.step(out, dY, dt);
    return out;
}

Operator sme_step_innovation(const DiffusiveModel& model, const Operator& rho, double dW, double dt,
                             StepScheme scheme) {
    require_same_dim(model.H, rho);
    SmeStepper stepper(model, scheme);
    Operator out = rho;
    stepper.step_innovation(out, dW, dt);
    return out;
}

Ket sse_step(const DiffusiveModel& model, const Ket& psi, double dW, double dt, StepScheme scheme) {
    if (psi.size() != model.dim()) throw InvalidArgument("state dimension does not match the model");
    SseStepper stepper(model, scheme);
    Ket out = psi;
    stepper.step_innovation(out, dW, dt);
    return out;
}

namespace {

void record_observables(std::vector<std::vector<double>>& series, const std::vector<Operator>& obs,
                        const Operator& rho) {
    for (std::size_t k = 0; k < obs.size(); ++k)
        series[k].push_back((obs[k].cwiseProduct(rho.transpose())).sum().real());
}

}  // namespace

TrajectoryRecord simulate_truth(const DiffusiveModel& model, const Operator& rho0, double T, double dt,
                                std::uint64_t seed, const std::vector<Operator>& observables,
                                const TruthOptions& opts, std::uint64_t stream) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    require_same_dim(model.H, rho0);
    const long steps = static_cast<long>(std::llround(T / dt));
    const long stride = std::max(1L, opts.stride);
    SmeStepper stepper(model, opts.scheme);
    RngStream rng(seed, stream);
    const double sdt = std::sqrt(dt);

    TrajectoryRecord rec;
    rec.seed = seed;
    rec.expectations.assign(observables.size(), {});
    if (opts.store_increments) {
        rec.dY.reserve(steps);
        rec.dW.reserve(steps);
    }
    Operator rho = rho0;
    rec.times.push_back(0.0);
    record_observables(rec.expectations, observables, rho);
    for (long s = 0; s < steps; ++s) {
        const double dW = sdt * rng.normal();
        const double dY = stepper.signal(rho) * dt + dW;
        const double used = stepper.step(rho, dY, dt, s);
        if (opts.store_increments) {
            rec.dY.push_back(dY);
            rec.dW.push_back(used);
        }
        if ((s + 1) % stride == 0) {
            rec.times.push_back((s + 1) * dt);
            record_observables(rec.expectations, observables, rho);
        }
    }
    rec.final_state = rho;
    return rec;
}

std::vector<std::vector<double>> replay_record(const DiffusiveModel& model, const Operator& rho0,
                                               const TrajectoryRecord& record,
                                               const std::vector<Operator>& observables, long stride) {
    if (record.dY.empty()) throw InvalidArgument("record carries no measurement increments");
    const double dt = record.times.size() > 1 ? (record.times[1] - record.times[0]) / std::max(1L, stride) : 0.0;
    if (!(dt > 0.0)) throw InvalidArgument("record needs at least two stored times");
    SmeStepper stepper(model);
    std::vector<std::vector<double>> series(observables.size());
    Operator rho = rho0;
    record_observables(series, observables, rho);
    for (std::size_t s = 0; s < record.dY.size(); ++s) {
        stepper.step(rho, record.dY[s], dt, static_cast<long>(s));
        if ((static_cast<long>(s) + 1) % std::max(1L, stride) == 0) record_observables(series, observables, rho);
    }
    return series;
}

DiffusiveModel qubit_field_model(double B, double kappa) {
    if (kappa < 0.0) throw InvalidArgument("kappa must be non-negative");
    return DiffusiveModel(B * pauli('Y'), std::sqrt(kappa) * pauli('Z'));
}

double bloch_angle_step(double theta, double dM, double B, double kappa, double dt, StepScheme scheme) {
    if (!(kappa > 0.0)) throw InvalidArgument("kappa must be positive");
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double dW = dM - 2.0 * std::sqrt(kappa) * s * dt;
    double next = theta + (-2.0 * B + 2.0 * kappa * s * c) * dt + 2.0 * std::sqrt(kappa) * c * dW;
    // Milstein term (1/2) b b' (dW^2 - dt) with b = 2 sqrt(kappa) cos(theta)
    if (scheme == StepScheme::milstein) next -= 2.0 * kappa * s * c * (dW * dW - dt);
    return next;
}

}  // namespace qfilt
