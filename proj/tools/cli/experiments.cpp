#include "cli/experiments.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "qfilt/classical_filtering.hpp"
#include "qfilt/collective_spin.hpp"
#include "qfilt/errors.hpp"
#include "qfilt/magnetometry.hpp"
#include "qfilt/operator_algebra.hpp"
#include "qfilt/parameter_estimation.hpp"
#include "qfilt/qec_feedback.hpp"
#include "qfilt/quantum_trajectory.hpp"

namespace qcli {

using namespace qfilt;

namespace {

KeySpec real_key(std::string key, std::string def, std::string doc, bool required = false) {
    return {std::move(key), ValueKind::real, std::move(def), required, std::move(doc), {}};
}
KeySpec int_key(std::string key, std::string def, std::string doc) {
    return {std::move(key), ValueKind::integer, std::move(def), false, std::move(doc), {}};
}
KeySpec list_key(std::string key, std::string def, std::string doc) {
    return {std::move(key), ValueKind::real_list, std::move(def), false, std::move(doc), {}};
}
KeySpec choice_key(std::string key, std::string def, std::string doc, std::vector<std::string> choices) {
    return {std::move(key), ValueKind::text, std::move(def), false, std::move(doc), std::move(choices)};
}

std::vector<KeySpec> run_keys(const std::string& trajectories, const std::string& traj_doc) {
    return {int_key("run.seed", "1", "base seed; trajectory i uses a stream derived from (seed, i)"),
            int_key("run.trajectories", trajectories, traj_doc),
            {"run.out", ValueKind::text, "", false, "output directory, empty for out/<experiment>; --out overrides", {}}};
}

std::vector<KeySpec> integrator_keys(const std::string& dt, const std::string& T, const std::string& unit) {
    return {real_key("integrator.dt", dt, "time step in " + unit + " (default " + dt + ")", true),
            real_key("integrator.T", T, "final time in " + unit, true)};
}

template <class... Parts>
std::vector<KeySpec> concat(Parts&&... parts) {
    std::vector<KeySpec> out;
    (out.insert(out.end(), parts.begin(), parts.end()), ...);
    return out;
}

long step_count(const Config& cfg) {
    const double dt = cfg.real("integrator.dt"), T = cfg.real("integrator.T");
    if (!(dt > 0.0)) throw ConfigError("key 'integrator.dt': must be positive");
    if (!(T > 0.0)) throw ConfigError("key 'integrator.T': must be positive");
    if (T / dt > 1e12) throw ConfigError("key 'integrator.T': more than 1e12 steps");
    const long n = std::lround(T / dt);
    if (n < 1) throw ConfigError("key 'integrator.T': shorter than one step");
    return n;
}

std::size_t positive_count(const Config& cfg, const std::string& key) {
    const long n = cfg.integer(key);
    if (n < 1) throw ConfigError("key '" + key + "': must be at least 1");
    return static_cast<std::size_t>(n);
}

long stride_of(const Config& cfg) {
    const long s = cfg.integer("output.stride");
    if (s < 1) throw ConfigError("key 'output.stride': must be at least 1");
    return s;
}

StepScheme scheme_of(const std::string& s) {
    if (s == "euler") return StepScheme::euler;
    if (s == "milstein") return StepScheme::milstein;
    return StepScheme::kraus;
}

Operator plus_x() {
    Operator rho = Operator::Identity(2, 2) + pauli('X');
    return 0.5 * rho;
}

double nan_value() { return std::nan(""); }

// kalman-demo

void run_kalman_demo(RunContext& ctx) {
    const Config& c = ctx.config();
    step_count(c);
    const std::size_t n = positive_count(c, "run.trajectories");
    const double xi = c.real("model.xi"), prior_var = c.real("model.prior_var");
    const double dt = c.real("integrator.dt"), T = c.real("integrator.T");
    const long stride = stride_of(c);
    std::vector<BrownianDemoRecord> recs(n);
    parallel_for(n, ctx.workers(), [&](std::size_t i) {
        recs[i] = brownian_parameter_demo(xi, T, dt, derive_seed(c.seed(), i), prior_var, stride);
    });
    auto out = ctx.csv("kalman.csv", {"trajectory", "time", "y", "x", "x_est", "xi_est", "P_xx", "P_xxi", "P_xixi"});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = recs[i];
        for (std::size_t k = 0; k < r.time.size(); ++k) {
            const auto& P = r.covariance[k];
            out.row({double(i), r.time[k], r.y[k], r.x[k], r.x_est[k], r.xi_est[k], P(0, 0), P(0, 1), P(1, 1)});
        }
    }
    out.close();
}

// qubit-filter

void run_qubit_filter(RunContext& ctx) {
    const Config& c = ctx.config();
    step_count(c);
    const std::size_t n = positive_count(c, "run.trajectories");
    const double dt = c.real("integrator.dt"), T = c.real("integrator.T");
    const DiffusiveModel model = qubit_field_model(c.real("model.B"), c.real("model.kappa"));
    TruthOptions opts;
    opts.stride = stride_of(c);
    opts.store_increments = false;
    opts.scheme = scheme_of(c.text("integrator.scheme"));
    const std::vector<Operator> obs{pauli('X'), pauli('Y'), pauli('Z')};
    std::vector<TrajectoryRecord> recs(n);
    parallel_for(n, ctx.workers(), [&](std::size_t i) {
        recs[i] = simulate_truth(model, plus_x(), T, dt, c.seed(), obs, opts, i);
    });
    auto traj = ctx.csv("trajectories.csv", {"trajectory", "time", "sx", "sy", "sz"});
    auto summary = ctx.csv("summary.csv", {"trajectory", "final_sx", "final_sy", "final_sz", "purity"});
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = recs[i];
        for (std::size_t k = 0; k < r.times.size(); ++k)
            traj.row({double(i), r.times[k], r.expectations[0][k], r.expectations[1][k], r.expectations[2][k]});
        const Operator& f = r.final_state;
        const double purity = (f * f).trace().real();
        summary.row({double(i), (pauli('X') * f).trace().real(), (pauli('Y') * f).trace().real(),
                     (pauli('Z') * f).trace().real(), purity});
    }
    traj.close();
    summary.close();
}

// param-ensemble

void run_param_ensemble(RunContext& ctx) {
    const Config& c = ctx.config();
    const long steps = step_count(c);
    const std::size_t n = positive_count(c, "run.trajectories");
    const double dt = c.real("integrator.dt"), T = c.real("integrator.T");
    const double kappa = c.real("model.kappa"), B = c.real("model.B");
    const std::vector<double> values = c.reals("model.values");
    const long stride = stride_of(c);
    TruthOptions opts;
    opts.stride = LONG_MAX;
    opts.scheme = scheme_of(c.text("integrator.scheme"));
    struct Result {
        std::vector<double> time;
        std::vector<std::vector<double>> weights;
        double mean = 0.0;
    };
    std::vector<Result> res(n);
    parallel_for(n, ctx.workers(), [&](std::size_t i) {
        const TrajectoryRecord r = simulate_truth(qubit_field_model(B, kappa), plus_x(), T, dt, c.seed(), {}, opts, i);
        BlochParticles dyn(kappa);
        ParticleEnsemble e = make_ensemble(dyn, values);
        Result& out = res[i];
        out.time.push_back(0.0);
        out.weights.push_back(e.weights);
        const long m = std::min<long>(steps, static_cast<long>(r.dY.size()));
        for (long k = 0; k < m; ++k) {
            try {
                ensemble_step(dyn, e, r.dY[static_cast<std::size_t>(k)], dt);
            } catch (const NumericFailure& err) {
                throw NumericFailure(std::string("ensemble update failed: ") + err.what(), k);
            }
            if ((k + 1) % stride == 0 || k + 1 == m) {
                out.time.push_back(double(k + 1) * dt);
                out.weights.push_back(e.weights);
            }
        }
        out.mean = e.mean();
    });
    std::vector<std::string> header{"trajectory", "time"};
    for (std::size_t j = 0; j < values.size(); ++j) header.push_back("w_" + std::to_string(j));
    auto w = ctx.csv("weights.csv", header);
    auto summary = ctx.csv("summary.csv", {"trajectory", "truth", "estimate", "map_value", "max_weight"});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < res[i].time.size(); ++k) {
            std::vector<double> row{double(i), res[i].time[k]};
            row.insert(row.end(), res[i].weights[k].begin(), res[i].weights[k].end());
            w.row(row);
        }
        const auto& last = res[i].weights.back();
        std::size_t best = 0;
        for (std::size_t j = 1; j < last.size(); ++j)
            if (last[j] > last[best]) best = j;
        summary.row({double(i), B, res[i].mean, values[best], last[best]});
    }
    w.close();
    summary.close();
}

// particle-filter

void run_particle_filter(RunContext& ctx) {
    const Config& c = ctx.config();
    step_count(c);
    const std::size_t n = positive_count(c, "run.trajectories");
    const double dt = c.real("integrator.dt"), T = c.real("integrator.T");
    const double kappa = c.real("model.kappa"), B = c.real("model.B");
    const std::string prior_kind = c.text("prior.kind");
    const double low = c.real("prior.low"), high = c.real("prior.high");
    const GaussianPrior gauss{c.real("prior.mean"), c.real("prior.variance")};
    if (prior_kind == "uniform" && !(high > low)) throw ConfigError("key 'prior.high': must exceed prior.low");
    if (prior_kind == "gaussian" && !(gauss.variance > 0.0))
        throw ConfigError("key 'prior.variance': must be positive");
    ParticleFilterConfig base;
    base.particles = positive_count(c, "filter.particles");
    base.a = c.real("filter.a");
    base.h = c.real("filter.h");
    base.threshold = c.real("filter.threshold");
    base.trace_stride = stride_of(c);
    TruthOptions opts;
    opts.stride = LONG_MAX;
    opts.scheme = scheme_of(c.text("integrator.scheme"));
    std::vector<ParticleFilterResult> res(n);
    parallel_for(n, ctx.workers(), [&](std::size_t i) {
        const TrajectoryRecord r = simulate_truth(qubit_field_model(B, kappa), plus_x(), T, dt, c.seed(), {}, opts, i);
        BlochParticles dyn(kappa);
        ParticleFilterConfig cfg = base;
        cfg.seed = derive_seed(c.seed(), i);
        if (prior_kind == "uniform") {
            RngStream g(cfg.seed, 1);
            std::vector<double> prior(cfg.particles);
            for (double& v : prior) v = low + (high - low) * g.uniform();
            res[i] = particle_filter_run(dyn, r.dY, dt, make_ensemble(dyn, prior), cfg);
        } else {
            res[i] = particle_filter_run(dyn, r.dY, dt, gauss, cfg);
        }
    });
    auto trace = ctx.csv("trace.csv", {"trajectory", "time", "mean", "sd"});
    auto summary = ctx.csv("summary.csv", {"trajectory", "truth", "estimate", "uncertainty", "within_3sd", "resamples"});
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& s : res[i].trace) trace.row({double(i), s.time, s.mean, s.sd});
        const bool inside = std::abs(res[i].estimate - B) <= 3.0 * res[i].uncertainty;
        summary.row({double(i), B, res[i].estimate, res[i].uncertainty, inside ? 1.0 : 0.0,
                     double(res[i].resample_count)});
    }
    trace.close();
    summary.close();
}

// magnetometry

DoublePassParams double_pass_of(const Config& c, double K) {
    DoublePassParams p;
    p.F = c.real("model.F");
    p.M = c.real("model.M");
    p.K = K;
    p.gamma = c.real("model.gamma");
    p.B = c.real("model.B");
    p.validate();
    return p;
}

void run_magnetometer_fisher(RunContext& ctx) {
    const Config& c = ctx.config();
    step_count(c);
    const std::size_t count = positive_count(c, "run.trajectories");
    const double dt = c.real("integrator.dt"), T = c.real("integrator.T"), dB = c.real("fisher.deltaB");
    const std::vector<double> Ks = c.reals("model.K");
    std::vector<DoublePassParams> params;
    for (double K : Ks) params.push_back(double_pass_of(c, K));
    // every K shares the same innovation seeds so the sweep is a paired comparison
    const std::uint64_t base = derive_seed(c.seed(), 0);
    std::vector<FisherAverage> res(Ks.size());
    parallel_for(Ks.size(), ctx.workers(), [&](std::size_t k) {
        res[k] = fisher_information_average(params[k], dB, T, dt, base, count);
    });
    auto out = ctx.csv("fisher.csv", {"K", "mean_raw", "sd_raw", "mean_qfi", "bound", "bound_sigma", "samples"});
    for (std::size_t k = 0; k < Ks.size(); ++k)
        out.row({Ks[k], res[k].mean_raw, res[k].sd_raw, res[k].mean_qfi, res[k].bound, res[k].bound_sigma,
                 double(res[k].samples)});
    out.close();
}

void run_magnetometer_kalman(RunContext& ctx) {
    const Config& c = ctx.config();
    const long steps = step_count(c);
    const std::size_t n = positive_count(c, "run.trajectories");
    const double dt = c.real("integrator.dt"), T = c.real("integrator.T");
    const DoublePassParams p = double_pass_of(c, c.real("model.K"));
    const double prior_var = c.real("prior.B_variance");
    if (!(prior_var >= 0.0)) throw ConfigError("key 'prior.B_variance': must be non-negative");
    const long stride = stride_of(c);
    const LinearModel model = smallangle_kalman_model(p);
    std::vector<std::vector<std::vector<double>>> rows(n);
    parallel_for(n, ctx.workers(), [&](std::size_t i) {
        const MagnetometerRecord rec = magnetometer_truth(p, T, dt, c.seed(), i);
        GaussianProjectionState proj;
        KalmanState kf{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(2, 2)};
        kf.covariance(1, 1) = prior_var;
        auto emit = [&](long k) {
            const double t = double(k) * dt;
            rows[i].push_back({double(i), t, rec.mean_Fz[static_cast<std::size_t>(k)],
                               -p.F * std::sin(proj.theta), proj.theta, proj.xi,
                               projection_xi_closed_form(p, t), kf.estimate(0), kf.estimate(1),
                               kf.covariance(0, 0), kf.covariance(1, 1)});
        };
        emit(0);
        Eigen::VectorXd dy(1);
        for (long k = 0; k < steps; ++k) {
            const double dZ = rec.dZ[static_cast<std::size_t>(k)];
            const double t = double(k) * dt;
            proj = projection_filter_step(proj, projection_innovation(proj, p, dZ, dt), p, dt);
            dy(0) = dZ;
            kf = kalman_step(model, kf, dy, t, dt);
            if (!std::isfinite(proj.theta) || !std::isfinite(proj.xi) || !kf.estimate.allFinite())
                throw NumericFailure("magnetometer filter diverged", k);
            if ((k + 1) % stride == 0 || k + 1 == steps) emit(k + 1);
        }
    });
    auto out = ctx.csv("filters.csv", {"trajectory", "time", "mean_Fz", "Fz_projection", "theta_projection", "xi_projection",
                                       "xi_closed_form", "theta_kalman", "B_kalman", "P_theta", "P_B"});
    for (const auto& traj : rows)
        for (const auto& r : traj) out.row(r);
    out.close();
}

// error correction

struct QecSetup {
    StabilizerCode code;
    std::unique_ptr<TruncatedBasis> basis;
    QecRunConfig run;
};

QecSetup qec_setup(const Config& c) {
    QecSetup s{build_code(c.text("model.code")), nullptr, {}};
    s.run.gamma = c.real("model.gamma");
    s.run.kappa = c.real("model.kappa");
    s.run.lambda_max = c.real("control.lambda_max");
    s.run.dt = c.real("integrator.dt");
    s.run.T = c.real("integrator.T");
    s.run.stride = stride_of(c);
    const std::string ctl = c.text("control.controller");
    s.run.controller = ctl == "none" ? ControllerKind::none : ctl == "full" ? ControllerKind::full
                                                                           : ControllerKind::truncated;
    s.run.plant_scheme = scheme_of(c.text("control.plant"));
    if (s.run.controller == ControllerKind::truncated) {
        const std::string cache = c.text("basis.cache");
        const TruncationLevel level = c.text("basis.level") == "codespace_only" ? TruncationLevel::codespace_only
                                                                                : TruncationLevel::first_level;
        bool loaded = false;
        if (!cache.empty() && std::ifstream(cache).good()) {
            s.basis = std::make_unique<TruncatedBasis>(load_basis(s.code, cache));
            loaded = true;
        }
        if (!loaded) {
            s.basis = std::make_unique<TruncatedBasis>(build_truncated_basis(s.code, level));
            if (!cache.empty()) save_basis(*s.basis, cache);
        }
    }
    return s;
}

std::vector<QecTrajectory> qec_trajectories(RunContext& ctx, const QecSetup& s) {
    const Config& c = ctx.config();
    step_count(c);
    const std::size_t n = positive_count(c, "run.trajectories");
    std::vector<QecTrajectory> res(n);
    parallel_for(n, ctx.workers(), [&](std::size_t i) {
        QecRunConfig cfg = s.run;
        cfg.seed = derive_seed(c.seed(), i);
        res[i] = qec_run(s.code, s.basis.get(), cfg);
    });
    return res;
}

void run_qec_run(RunContext& ctx) {
    const QecSetup s = qec_setup(ctx.config());
    const auto res = qec_trajectories(ctx, s);
    auto fid = ctx.csv("fidelity.csv", {"trajectory", "time", "codespace_fidelity", "codeword_fidelity"});
    auto summary = ctx.csv("summary.csv", {"trajectory", "final_codespace", "final_codeword", "policy_agreement"});
    for (std::size_t i = 0; i < res.size(); ++i) {
        const auto& r = res[i];
        for (std::size_t k = 0; k < r.time.size(); ++k)
            fid.row({double(i), r.time[k], r.codespace_fidelity[k], r.codeword_fidelity[k]});
        const double agree = r.policy_total > 0 ? double(r.policy_agree) / double(r.policy_total) : nan_value();
        summary.row({double(i), r.codespace_fidelity.back(), r.codeword_fidelity.back(), agree});
    }
    fid.close();
    summary.close();
}

void run_qec_benchmark(RunContext& ctx) {
    const QecSetup s = qec_setup(ctx.config());
    const auto res = qec_trajectories(ctx, s);
    const std::size_t n = res.size(), points = res.front().time.size();
    auto out = ctx.csv("benchmark.csv", {"time", "mean_codeword", "sem_codeword", "mean_codespace",
                                         "discrete_codeword"});
    for (std::size_t k = 0; k < points; ++k) {
        double m = 0.0, m2 = 0.0, cs = 0.0;
        for (const auto& r : res) {
            m += r.codeword_fidelity[k];
            m2 += r.codeword_fidelity[k] * r.codeword_fidelity[k];
            cs += r.codespace_fidelity[k];
        }
        m /= double(n);
        cs /= double(n);
        const double var = n > 1 ? std::max(0.0, (m2 - double(n) * m * m) / double(n - 1)) : 0.0;
        const double t = res.front().time[k];
        out.row({t, m, std::sqrt(var / double(n)), cs, codeword_fidelity_discrete(s.run.gamma * t)});
    }
    out.close();
}

// collective spin

SpinChannel channel_of(const std::string& name, double rate) {
    if (name == "local_z") return SpinChannel::symmetric('z', rate);
    if (name == "local_minus") return SpinChannel::symmetric('-', rate);
    if (name == "collective_minus") return SpinChannel::collective_of('-', rate);
    // collective dephasing L = sqrt(rate) J_z
    SpinChannel ch = SpinChannel::collective_of('z', rate);
    ch.sz = 0.5;
    return ch;
}

int spin_count(const Config& c) {
    const long N = c.integer("model.N");
    if (N < 1 || N > 400) throw ConfigError("key 'model.N': must be in [1, 400]");
    return static_cast<int>(N);
}

void evolve(const CollectiveEvolver& ev, CollectiveDensity& rho, double dt, long k) {
    try {
        ev.step(rho, dt);
    } catch (const NumericFailure& err) {
        throw NumericFailure(std::string("collective evolution failed: ") + err.what(), k);
    }
}

void run_collective_cat(RunContext& ctx) {
    const Config& c = ctx.config();
    const long steps = step_count(c);
    const int N = spin_count(c);
    const double dt = c.real("integrator.dt"), Gamma = c.real("model.Gamma");
    const long stride = stride_of(c);
    const std::vector<std::string> names{"local_z", "collective_z", "local_minus", "collective_minus"};
    Ket cat = Ket::Zero(N + 1);
    cat(0) = cat(N) = 1.0 / std::sqrt(2.0);
    std::vector<std::vector<double>> fid(names.size());
    std::vector<std::vector<std::vector<double>>> pops(names.size());
    parallel_for(names.size(), ctx.workers(), [&](std::size_t j) {
        const CollectiveEvolver ev(N, {}, {channel_of(names[j], Gamma)});
        CollectiveDensity rho = cat_state(N);
        auto record = [&] {
            fid[j].push_back(top_block_fidelity(rho, cat));
            std::vector<double> p;
            for (int twoJ = N; twoJ >= 0; twoJ -= 2) p.push_back(irrep_population(rho, twoJ));
            pops[j].push_back(p);
        };
        record();
        for (long k = 0; k < steps; ++k) {
            evolve(ev, rho, dt, k);
            if ((k + 1) % stride == 0 || k + 1 == steps) record();
        }
    });
    std::vector<double> times{0.0};
    for (long k = 0; k < steps; ++k)
        if ((k + 1) % stride == 0 || k + 1 == steps) times.push_back(double(k + 1) * dt);
    std::vector<std::string> header{"time"};
    for (const auto& nm : names) header.push_back("fidelity_" + nm);
    auto out = ctx.csv("cat.csv", header);
    std::vector<std::string> pheader{"channel", "time"};
    for (int twoJ = N; twoJ >= 0; twoJ -= 2) pheader.push_back("N_2J" + std::to_string(twoJ));
    auto pout = ctx.csv("populations.csv", pheader);
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::vector<double> row{times[k]};
        for (std::size_t j = 0; j < names.size(); ++j) row.push_back(fid[j][k]);
        out.row(row);
    }
    for (std::size_t j = 0; j < names.size(); ++j)
        for (std::size_t k = 0; k < times.size(); ++k) {
            std::vector<double> row{double(j), times[k]};
            row.insert(row.end(), pops[j][k].begin(), pops[j][k].end());
            pout.row(row);
        }
    out.close();
    pout.close();
}

void run_collective_squeeze(RunContext& ctx) {
    const Config& c = ctx.config();
    const long steps = step_count(c);
    const int N = spin_count(c);
    const double dt = c.real("integrator.dt"), Gamma = c.real("model.Gamma");
    const long stride = stride_of(c);
    const std::string channel = c.text("model.channel");
    std::vector<SpinChannel> channels;
    if (channel != "none") channels.push_back(channel_of(channel, Gamma));
    const CollectiveEvolver ev(N, counter_twisting(c.real("model.Lambda")), channels);
    CollectiveDensity rho = coherent_up(N);
    auto out = ctx.csv("squeeze.csv", {"time", "xi2", "mean_Jz", "top_population"});
    auto emit = [&](long k) {
        double xi2;
        try {
            xi2 = squeezing_xi2(rho);
        } catch (const UndefinedMetric&) {
            xi2 = nan_value();
        }
        out.row({double(k) * dt, xi2, collective_expectation(rho, "z").real(), irrep_population(rho, N)});
    };
    emit(0);
    for (long k = 0; k < steps; ++k) {
        evolve(ev, rho, dt, k);
        if ((k + 1) % stride == 0 || k + 1 == steps) emit(k + 1);
    }
    out.close();
}

const std::vector<std::string> kSchemes{"euler", "milstein", "kraus"};

std::vector<KeySpec> qec_keys(const std::string& T, const std::string& trajectories, const std::string& controller) {
    return concat(run_keys(trajectories, "closed-loop trajectories"), integrator_keys("1e-5", T, "units of 1/gamma"),
                  std::vector<KeySpec>{
                      choice_key("model.code", "fivequbit", "stabilizer code", {"fivequbit", "bitflip3"}),
                      real_key("model.gamma", "1", "depolarizing rate gamma (1/time)"),
                      real_key("model.kappa", "100", "syndrome measurement strength kappa (1/time)"),
                      real_key("control.lambda_max", "200", "largest feedback rate lambda_max (1/time)"),
                      choice_key("control.controller", controller, "feedback filter", {"truncated", "full", "none"}),
                      choice_key("control.plant", "kraus", "step scheme of the simulated plant", {"kraus", "euler"}),
                      choice_key("basis.level", "first_level", "truncation of the controller basis",
                                 {"first_level", "codespace_only"}),
                      {"basis.cache", ValueKind::text, "", false, "basis cache file, empty to rebuild each run", {}},
                      int_key("output.stride", "100", "store every stride-th step")});
}

std::vector<Experiment> build_experiments() {
    std::vector<Experiment> e;
    e.push_back({{"kalman-demo", "Kalman-Bucy estimation of a Brownian particle's unknown drift",
                  concat(run_keys("1", "independent simulated particles"),
                         integrator_keys("1e-3", "10", "time units"),
                         std::vector<KeySpec>{real_key("model.xi", "1", "true drift xi (length/time)"),
                                              real_key("model.prior_var", "100", "prior variance of xi"),
                                              int_key("output.stride", "10", "store every stride-th step")})},
                 run_kalman_demo});
    e.push_back({{"qubit-filter", "qubit under continuous sigma_z measurement with a field along y",
                  concat(run_keys("20", "measurement trajectories"), integrator_keys("1e-5", "10", "units of 1/kappa"),
                         std::vector<KeySpec>{
                             real_key("model.kappa", "1", "measurement strength kappa (1/time)"),
                             real_key("model.B", "0", "field B in H = B sigma_y (1/time)"),
                             choice_key("integrator.scheme", "euler", "state update scheme", kSchemes),
                             int_key("output.stride", "1000", "store every stride-th step")})},
                 run_qubit_filter});
    e.push_back({{"param-ensemble", "finite-set field estimation; weights per candidate field",
                  concat(run_keys("20", "measurement trajectories"), integrator_keys("1e-4", "10", "units of 1/kappa"),
                         std::vector<KeySpec>{
                             real_key("model.kappa", "1", "measurement strength kappa (1/time)"),
                             real_key("model.B", "5", "true field (1/time)"),
                             list_key("model.values", "2,5,8", "candidate fields (1/time)"),
                             choice_key("integrator.scheme", "kraus", "truth simulation scheme", kSchemes),
                             int_key("output.stride", "100", "store every stride-th step")})},
                 run_param_ensemble});
    e.push_back({{"particle-filter", "Liu-West particle filter for the qubit field",
                  concat(run_keys("10", "measurement trajectories"), integrator_keys("1e-5", "10", "units of 1/kappa"),
                         std::vector<KeySpec>{
                             real_key("model.kappa", "1", "measurement strength kappa (1/time)"),
                             real_key("model.B", "5", "true field (1/time)"),
                             choice_key("prior.kind", "uniform", "prior family", {"uniform", "gaussian"}),
                             real_key("prior.low", "0", "uniform prior lower edge (1/time)"),
                             real_key("prior.high", "10", "uniform prior upper edge (1/time)"),
                             real_key("prior.mean", "0", "gaussian prior mean (1/time)"),
                             real_key("prior.variance", "10", "gaussian prior variance (1/time^2)"),
                             int_key("filter.particles", "1000", "particle count"),
                             real_key("filter.a", "0.98", "Liu-West shrinkage a"),
                             real_key("filter.h", "1e-3", "Liu-West kernel width h"),
                             real_key("filter.threshold", "0.666666666666667",
                                      "resample when ESS / N falls below this"),
                             choice_key("integrator.scheme", "kraus", "truth simulation scheme", kSchemes),
                             int_key("output.stride", "1000", "posterior trace every stride-th step")})},
                 run_particle_filter});
    e.push_back({{"magnetometer-fisher", "Fisher information of the double-pass magnetometer over a K sweep",
                  concat(run_keys("20", "innovation paths per K"), integrator_keys("1e-4", "1", "units of 1/M"),
                         std::vector<KeySpec>{
                             real_key("model.F", "10", "spin size F"),
                             real_key("model.M", "1", "measurement strength M (1/time)"),
                             list_key("model.K", "0,0.25,0.5,1", "double-pass couplings K (1/time)"),
                             real_key("model.gamma", "1", "gyromagnetic ratio gamma"),
                             real_key("model.B", "0", "field at which the information is evaluated"),
                             real_key("fisher.deltaB", "1e-3", "finite-difference field step")})},
                 run_magnetometer_fisher});
    e.push_back({{"magnetometer-kalman", "projection filter and small-angle Kalman filter on one record",
                  concat(run_keys("1", "measurement records"), integrator_keys("1e-4", "1", "units of 1/M"),
                         std::vector<KeySpec>{
                             real_key("model.F", "10", "spin size F"),
                             real_key("model.M", "1", "measurement strength M (1/time)"),
                             real_key("model.K", "0", "double-pass coupling K (1/time)"),
                             real_key("model.gamma", "1", "gyromagnetic ratio gamma"),
                             real_key("model.B", "0.1", "true field"),
                             real_key("prior.B_variance", "1", "Kalman prior variance of B"),
                             int_key("output.stride", "100", "store every stride-th step")})},
                 run_magnetometer_kalman});
    e.push_back({{"qec-run", "five-qubit code under depolarizing noise with filter-based feedback",
                  qec_keys("0.25", "10", "truncated")},
                 run_qec_run});
    e.push_back({{"qec-benchmark", "ensemble codeword fidelity versus discrete correction",
                  qec_keys("0.1", "50", "full")},
                 run_qec_benchmark});
    e.push_back({{"collective-cat", "cat-state fidelity under local and collective channels",
                  concat(run_keys("1", "unused; the evolution is deterministic"),
                         integrator_keys("1e-4", "0.1", "units of 1/Gamma"),
                         std::vector<KeySpec>{int_key("model.N", "10", "number of spins"),
                                              real_key("model.Gamma", "1", "channel rate Gamma (1/time)"),
                                              int_key("output.stride", "10", "store every stride-th step")})},
                 run_collective_cat});
    e.push_back({{"collective-squeeze", "counter-twisting spin squeezing with optional decoherence",
                  concat(run_keys("1", "unused; the evolution is deterministic"),
                         integrator_keys("1e-4", "0.1", "units of 1/Lambda"),
                         std::vector<KeySpec>{
                             int_key("model.N", "20", "number of spins"),
                             real_key("model.Lambda", "1", "twisting strength Lambda (1/time)"),
                             real_key("model.Gamma", "0", "decoherence rate (1/time)"),
                             choice_key("model.channel", "none", "decoherence channel",
                                        {"none", "local_z", "local_minus", "collective_z", "collective_minus"}),
                             int_key("output.stride", "10", "store every stride-th step")})},
                 run_collective_squeeze});
    return e;
}

}  // namespace

const std::vector<Experiment>& experiments() {
    static const std::vector<Experiment> all = build_experiments();
    return all;
}

const Experiment* find_experiment(const std::string& name) {
    for (const auto& e : experiments())
        if (e.schema.name == name) return &e;
    return nullptr;
}

std::vector<std::pair<double, double>> ialpha_from_weights(const std::string& path, double alpha) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read weights file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.rfind("trajectory,time,w_", 0) != 0)
        throw ConfigError("'" + path + "' is not a param-ensemble weights file");
    std::map<long, std::vector<std::vector<double>>> traces;
    std::map<long, std::vector<double>> times;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
        if (v.size() < 3) throw ConfigError("'" + path + "': malformed row");
        const long traj = std::lround(v[0]);
        times[traj].push_back(v[1]);
        traces[traj].emplace_back(v.begin() + 2, v.end());
    }
    if (traces.empty()) throw ConfigError("'" + path + "' contains no rows");
    std::vector<std::vector<std::vector<double>>> all;
    const std::size_t length = traces.begin()->second.size();
    for (auto& [k, tr] : traces) {
        if (tr.size() != length)
            throw ConfigError("'" + path + "': trajectories have different lengths");
        all.push_back(std::move(tr));
    }
    const std::vector<double> rate = convergence_rate(all, alpha);
    const auto& t = times.begin()->second;
    std::vector<std::pair<double, double>> out;
    for (std::size_t k = 0; k < rate.size(); ++k) out.emplace_back(t[k], rate[k]);
    return out;
}

}  // namespace qcli
