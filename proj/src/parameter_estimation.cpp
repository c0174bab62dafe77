#include "qfilt/parameter_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>

#include "qfilt/errors.hpp"
#include "qfilt/quantum_trajectory.hpp"

namespace qfilt {

namespace {

constexpr double kNormTol = 1e-9;

double wrap_angle(double x) { return std::remainder(x, 2.0 * std::numbers::pi); }

// Correctly rounded sum (Shewchuk partials), so ensemble reductions do not depend on particle order.
class ExactSum {
public:
    void add(double x) {
        std::size_t i = 0;
        for (double y : partials_) {
            if (std::abs(x) < std::abs(y)) std::swap(x, y);
            const double hi = x + y;
            const double lo = y - (hi - x);
            if (lo != 0.0) partials_[i++] = lo;
            x = hi;
        }
        partials_.resize(i);
        partials_.push_back(x);
    }

    double value() const {
        std::size_t n = partials_.size();
        if (n == 0) return 0.0;
        double hi = partials_[--n], lo = 0.0;
        while (n > 0) {
            const double x = hi, y = partials_[--n];
            hi = x + y;
            lo = y - (hi - x);
            if (lo != 0.0) break;
        }
        // round half-even across the remaining partials
        if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
            const double y = 2.0 * lo, x = hi + y;
            if (y == x - hi) hi = x;
        }
        return hi;
    }

private:
    std::vector<double> partials_;
};

// Renormalizes weights after clipping; throws when nothing survives.
void renormalize(std::vector<double>& w) {
    ExactSum acc;
    for (double& p : w) {
        if (!(p > 0.0)) p = 0.0;  // also catches NaN
        acc.add(p);
    }
    const double sum = acc.value();
    if (!(sum > 0.0) || !std::isfinite(sum)) throw DegenerateEnsemble("all ensemble weights collapsed to zero");
    for (double& p : w) p /= sum;
}

}  // namespace

double ParticleEnsemble::mean() const {
    ExactSum m;
    for (std::size_t i = 0; i < size(); ++i) m.add(weights[i] * params[i]);
    return m.value();
}

double ParticleEnsemble::variance() const {
    const double m = mean();
    ExactSum v;
    for (std::size_t i = 0; i < size(); ++i) v.add(weights[i] * (params[i] - m) * (params[i] - m));
    return v.value();
}

void ParticleEnsemble::check() const {
    if (params.size() != weights.size()) throw InvalidArgument("ensemble weights and parameters differ in length");
    double sum = 0.0;
    for (double p : weights) {
        if (p < 0.0 || !std::isfinite(p)) throw InvalidArgument("ensemble weights must be non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kNormTol) throw InvalidArgument("ensemble weights must sum to one");
    for (const auto& r : states)
        if (r.rows() != states.front().rows()) throw InvalidArgument("conditional states differ in dimension");
}

// Density-matrix particles

DensityParticles::DensityParticles(Operator H0, Operator L, Operator rho0, Operator H1, StepScheme scheme)
    : H0_(std::move(H0)), H1_(std::move(H1)), L_(std::move(L)), rho0_(std::move(rho0)), scheme_(scheme) {
    require_square(H0_, "H0");
    require_same_dim(H0_, L_);
    require_same_dim(H0_, rho0_);
    if (H1_.size() == 0) H1_ = Operator::Zero(H0_.rows(), H0_.cols());
    require_same_dim(H0_, H1_);
    if (!is_hermitian(H0_, 1e-12 * std::max(1.0, max_abs(H0_)))) throw InvalidArgument("H0 must be Hermitian");
    Ld_ = L_.adjoint();
    LdL_ = Ld_ * L_;
    L2_ = L_ * L_;
}

double DensityParticles::signal(const ParticleEnsemble& e, std::size_t i) const {
    return 2.0 * (L_.cwiseProduct(e.states[i].transpose())).sum().real();
}

void DensityParticles::advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) {
    Operator& rho = e.states[i];
    const Operator K = -I_unit * (e.params[i] * H0_ + H1_) - 0.5 * LdL_;
    Operator next;
    if (scheme_ == StepScheme::kraus) {
        c_ = dt * K + dM * L_ + (0.5 * (dM * dM - dt)) * L2_;
        c_.diagonal().array() += 1.0;
        a_.noalias() = c_ * rho;
        next.noalias() = a_ * c_.adjoint();
    } else {
        a_.noalias() = K * rho;
        b_.noalias() = L_ * rho;
        c_.noalias() = b_ * Ld_;
        const double s = 2.0 * b_.trace().real();
        const double dW = dM - s * dt;
        const Operator G = b_ + b_.adjoint() - s * rho;
        next = rho + (a_ + a_.adjoint() + c_) * dt + G * dW;
        if (scheme_ == StepScheme::milstein) {
            a_.noalias() = L_ * G;
            const double sG = 2.0 * a_.trace().real();
            next += 0.5 * (a_ + a_.adjoint() - sG * rho - s * G) * (dW * dW - dt);
        }
    }
    next = 0.5 * (next + next.adjoint()).eval();
    const double tr = next.trace().real();
    if (!(tr > 0.0) || !next.allFinite()) throw NumericFailure("particle state diverged");
    rho = next / tr;
}

void DensityParticles::push_initial(ParticleEnsemble& e, double xi) const {
    e.params.push_back(xi);
    e.states.push_back(rho0_);
}

// Bloch-angle particles

BlochParticles::BlochParticles(double kappa, double theta0) : kappa_(kappa), theta0_(theta0) {
    if (!(kappa > 0.0)) throw InvalidArgument("kappa must be positive");
}

double BlochParticles::signal(const ParticleEnsemble& e, std::size_t i) const {
    return 2.0 * std::sqrt(kappa_) * std::sin(e.angles[i]);
}

void BlochParticles::advance(ParticleEnsemble& e, std::size_t i, double dM, double dt) {
    e.angles[i] = bloch_angle_step(e.angles[i], dM, e.params[i], kappa_, dt);
}

void BlochParticles::push_initial(ParticleEnsemble& e, double xi) const {
    e.params.push_back(xi);
    e.angles.push_back(theta0_);
}

// Ensemble filter

ParticleEnsemble make_ensemble(const ParticleDynamics& dyn, const std::vector<double>& params,
                               std::vector<double> weights) {
    if (params.empty()) throw InvalidArgument("ensemble needs at least one parameter value");
    if (weights.empty()) weights.assign(params.size(), 1.0 / static_cast<double>(params.size()));
    if (weights.size() != params.size()) throw InvalidArgument("weights and parameters differ in length");
    ParticleEnsemble e;
    for (double xi : params) dyn.push_initial(e, xi);
    e.weights = std::move(weights);
    e.check();
    return e;
}

EnsembleStepInfo ensemble_step(ParticleDynamics& dyn, ParticleEnsemble& e, double dM, double dt) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    const std::size_t n = e.size();
    thread_local std::vector<double> s;
    s.resize(n);
    ExactSum acc;
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = dyn.signal(e, i);
        acc.add(e.weights[i] * s[i]);
    }
    const double mean = acc.value();
    EnsembleStepInfo info;
    info.mean_signal = mean;
    info.innovation = dM - mean * dt;
    for (std::size_t i = 0; i < n; ++i) e.weights[i] += e.weights[i] * (s[i] - mean) * info.innovation;
    renormalize(e.weights);
    // each conditional state sees its own innovation dM - s_i dt; zero-weight particles stay at zero
    // weight and are never resampled, so their states are frozen
    for (std::size_t i = 0; i < n; ++i)
        if (e.weights[i] > 0.0) dyn.advance(e, i, dM, dt);
    return info;
}

// Observability

ObservableSpace observable_space_dim(const Operator& H, const Operator& L, double rel_tol) {
    require_square(H, "H");
    require_same_dim(H, L);
    const Eigen::Index d = H.rows();
    OperatorSpan span(d, rel_tol);
    std::deque<Operator> frontier;
    const Operator id = Operator::Identity(d, d);
    span.add(id);
    frontier.push_back(span.basis().back());
    const Operator Ld = L.adjoint();
    while (!frontier.empty()) {
        const Operator X = frontier.front();
        frontier.pop_front();
        for (const Operator& Y : {Operator(adjoint_lindblad(H, L, X)), Operator(Ld * X + X * L)}) {
            if (span.add(Y)) frontier.push_back(span.basis().back());
        }
    }
    ObservableSpace out;
    out.dimension = span.size();
    out.basis = span.basis();
    out.full = out.dimension == d * d;
    return out;
}

std::pair<Operator, Operator> extended_model(const std::vector<double>& params, const Operator& H0,
                                             const Operator& L) {
    require_square(H0, "H0");
    require_same_dim(H0, L);
    if (params.empty()) throw InvalidArgument("parameter set is empty");
    const auto n = static_cast<Eigen::Index>(params.size());
    Operator diag = Operator::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) diag(i, i) = params[static_cast<std::size_t>(i)];
    return {kron(diag, H0), kron(Operator::Identity(n, n), L)};
}

double effective_sample_size(const std::vector<double>& weights) {
    if (weights.empty()) throw InvalidArgument("no weights");
    double sum = 0.0, sq = 0.0;
    for (double p : weights) {
        if (p < 0.0 || !std::isfinite(p)) throw InvalidArgument("weights must be non-negative");
        sum += p;
        sq += p * p;
    }
    if (std::abs(sum - 1.0) > kNormTol) throw InvalidArgument("weights must be normalized");
    return 1.0 / sq;
}

// Resampling

void liu_west_resample(ParticleEnsemble& e, double a, double h, RngStream& rng, bool joint_scalar_state) {
    if (a < 0.0 || a > 1.0) throw InvalidArgument("Liu-West shrinkage a must lie in [0, 1]");
    if (h < 0.0) throw InvalidArgument("Liu-West bandwidth h must be non-negative");
    const std::size_t n = e.size();
    if (n == 0) throw InvalidArgument("empty ensemble");
    double total = 0.0;
    for (double p : e.weights) total += std::max(p, 0.0);
    if (!(total > 0.0)) throw DegenerateEnsemble("cannot resample an ensemble with zero total weight");
    std::vector<double> w(e.weights.size());
    for (std::size_t i = 0; i < n; ++i) w[i] = std::max(e.weights[i], 0.0) / total;

    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const bool joint = joint_scalar_state && e.angles.size() == n;

    double xbar = 0.0;
    for (std::size_t i = 0; i < n; ++i) xbar += w[i] * e.params[i];

    ParticleEnsemble out;
    out.weights.assign(n, 1.0 / static_cast<double>(n));
    out.params.resize(n);

    if (joint) {
        // angles live on the circle: center with the circular mean and use wrapped deviations
        double sx = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sx += w[i] * std::cos(e.angles[i]);
            sy += w[i] * std::sin(e.angles[i]);
        }
        const double tbar = std::atan2(sy, sx);
        std::vector<double> dth(n);
        Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            dth[i] = wrap_angle(e.angles[i] - tbar);
            const Eigen::Vector2d v(e.params[i] - xbar, dth[i]);
            cov += w[i] * v * v.transpose();
        }
        // symmetric square root tolerates semidefinite covariances
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(h * h * cov);
        const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        const Eigen::Matrix2d root = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        out.angles.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = pick(rng.engine());
            const Eigen::Vector2d z(rng.normal(), rng.normal());
            const Eigen::Vector2d jitter = root * z;
            out.params[k] = a * e.params[i] + (1.0 - a) * xbar + jitter(0);
            out.angles[k] = wrap_angle(tbar + a * dth[i] + jitter(1));
        }
    } else {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += w[i] * (e.params[i] - xbar) * (e.params[i] - xbar);
        const double sigma = h * std::sqrt(var);
        if (!e.states.empty()) out.states.resize(n);
        if (!e.kets.empty()) out.kets.resize(n);
        if (!e.vectors.empty()) out.vectors.resize(n);
        if (!e.angles.empty()) out.angles.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = pick(rng.engine());
            const double z = sigma > 0.0 ? rng.normal() : 0.0;
            out.params[k] = a * e.params[i] + (1.0 - a) * xbar + sigma * z;
            if (!e.states.empty()) out.states[k] = e.states[i];
            if (!e.kets.empty()) out.kets[k] = e.kets[i];
            if (!e.vectors.empty()) out.vectors[k] = e.vectors[i];
            if (!e.angles.empty()) out.angles[k] = e.angles[i];
        }
    }
    e = std::move(out);
}

// Particle filter

ParticleFilterResult particle_filter_run(ParticleDynamics& dyn, const std::vector<double>& dM, double dt,
                                         const GaussianPrior& prior, const ParticleFilterConfig& cfg) {
    if (cfg.particles == 0) throw InvalidArgument("particle count must be positive");
    if (prior.variance < 0.0) throw InvalidArgument("prior variance must be non-negative");
    RngStream rng(cfg.seed, 101);
    const double sd = std::sqrt(prior.variance);
    std::vector<double> params(cfg.particles);
    for (double& x : params) x = prior.mean + sd * rng.normal();
    return particle_filter_run(dyn, dM, dt, make_ensemble(dyn, params), cfg);
}

ParticleFilterResult particle_filter_run(ParticleDynamics& dyn, const std::vector<double>& dM, double dt,
                                         ParticleEnsemble ens, const ParticleFilterConfig& cfg) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    if (cfg.threshold < 0.0 || cfg.threshold > 1.0) throw InvalidArgument("resampling threshold must lie in [0, 1]");
    ens.check();
    RngStream rng(cfg.seed, 102);
    const long stride = std::max(1L, cfg.trace_stride);
    const double n = static_cast<double>(ens.size());

    ParticleFilterResult res;
    auto record = [&](double t) { res.trace.push_back({t, ens.mean(), std::sqrt(std::max(0.0, ens.variance()))}); };
    record(0.0);
    for (std::size_t k = 0; k < dM.size(); ++k) {
        ensemble_step(dyn, ens, dM[k], dt);
        if (cfg.threshold > 0.0) {
            ExactSum sq;
            for (double p : ens.weights) sq.add(p * p);
            if (1.0 / sq.value() / n < cfg.threshold) {
                liu_west_resample(ens, cfg.a, cfg.h, rng, dyn.scalar_state());
                ++res.resample_count;
            }
        }
        if ((static_cast<long>(k) + 1) % stride == 0 || k + 1 == dM.size())
            record(static_cast<double>(k + 1) * dt);
    }
    res.estimate = ens.mean();
    res.uncertainty = std::sqrt(std::max(0.0, ens.variance()));
    res.final_ensemble = std::move(ens);
    return res;
}

std::vector<double> convergence_rate(const std::vector<std::vector<std::vector<double>>>& weight_traces,
                                     double alpha) {
    if (weight_traces.empty()) return {};
    const std::size_t T = weight_traces.front().size();
    std::vector<double> rate(T, 0.0);
    for (const auto& traj : weight_traces) {
        if (traj.size() != T) throw InvalidArgument("weight traces differ in length");
        for (std::size_t t = 0; t < T; ++t) {
            const double mx = traj[t].empty() ? 0.0 : *std::max_element(traj[t].begin(), traj[t].end());
            if (mx > alpha) rate[t] += 1.0;
        }
    }
    for (double& r : rate) r /= static_cast<double>(weight_traces.size());
    return rate;
}

}  // namespace qfilt
