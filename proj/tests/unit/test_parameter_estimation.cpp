#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "qfilt/errors.hpp"
#include "qfilt/parameter_estimation.hpp"
#include "qfilt/quantum_trajectory.hpp"

using namespace qfilt;

namespace {

Operator plus_x() { return 0.5 * (Operator::Identity(2, 2) + pauli('X')); }

Eigen::Index extended_dim(const std::vector<double>& params) {
    const auto [H, L] = extended_model(params, pauli('Y'), pauli('Z'));
    return observable_space_dim(H, L).dimension;
}

ParticleEnsemble random_scalar_ensemble(std::size_t n, std::mt19937_64& g) {
    std::normal_distribution<double> nd(1.0, 2.0);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    ParticleEnsemble e;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        e.params.push_back(nd(g));
        e.weights.push_back(u(g));
        sum += e.weights.back();
    }
    for (double& p : e.weights) p /= sum;
    return e;
}

}  // namespace

TEST_CASE("effective sample size examples") {
    CHECK(effective_sample_size(std::vector<double>(8, 0.125)) == doctest::Approx(8.0).epsilon(1e-15));
    CHECK(effective_sample_size({0.0, 1.0, 0.0}) == 1.0);
    CHECK(effective_sample_size({0.5, 0.5, 0.0, 0.0}) == 2.0);
    CHECK_THROWS_AS(effective_sample_size({0.5, 0.6}), InvalidArgument);
    CHECK_THROWS_AS(effective_sample_size({1.5, -0.5}), InvalidArgument);
}

TEST_CASE("single-particle ensemble reduces to the known-parameter filter") {
    const double xi = 1.7, dt = 1e-3;
    const Operator L = 0.8 * pauli('Z');
    for (StepScheme scheme : {StepScheme::euler, StepScheme::kraus}) {
        DensityParticles dyn(pauli('Y'), L, plus_x(), Operator(), scheme);
        ParticleEnsemble e = make_ensemble(dyn, {xi});
        SmeStepper ref(DiffusiveModel(xi * pauli('Y'), L), scheme);
        Operator rho = plus_x();
        const WienerPath w = wiener_increments(1, 2000, dt, 3);
        double worst = 0.0;
        for (long k = 0; k < 2000; ++k) {
            const double dM = ref.signal(rho) * dt + w.increments(0, k);
            ensemble_step(dyn, e, dM, dt);
            ref.step(rho, dM, dt);
            worst = std::max(worst, max_abs(e.states[0] - rho));
            CHECK(e.weights[0] == 1.0);
        }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("qubit ensemble step follows the weight and Bloch-angle equations") {
    const double kappa = 1.3, dt = 1e-3, dM = 0.04;
    BlochParticles dyn(kappa);
    ParticleEnsemble e = make_ensemble(dyn, {2.0, 5.0, 8.0}, {0.2, 0.5, 0.3});
    e.angles = {0.3, -1.1, 2.0};
    const ParticleEnsemble before = e;
    double mean = 0.0;
    for (std::size_t i = 0; i < 3; ++i) mean += before.weights[i] * 2.0 * std::sqrt(kappa) * std::sin(before.angles[i]);
    const double dW = dM - mean * dt;
    std::vector<double> p(3);
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double s = 2.0 * std::sqrt(kappa) * std::sin(before.angles[i]);
        p[i] = before.weights[i] + (s - mean) * before.weights[i] * dW;
        sum += p[i];
    }
    const EnsembleStepInfo info = ensemble_step(dyn, e, dM, dt);
    CHECK(info.innovation == doctest::Approx(dW).epsilon(1e-14));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(e.weights[i] == doctest::Approx(p[i] / sum).epsilon(1e-14));
        CHECK(e.angles[i] == bloch_angle_step(before.angles[i], dM, before.params[i], kappa, dt));
    }
}

TEST_CASE("weights stay normalized and non-negative and permutation does not change the estimate") {
    const double dt = 1e-3;
    const std::vector<double> params{0.5, 1.0, 2.0, 3.0, 4.0};
    const TrajectoryRecord r = simulate_truth(qubit_field_model(2.0, 1.0), plus_x(), 2.0, dt, 41, {}, {1000000, true});
    DensityParticles dyn(pauli('Y'), pauli('Z'), plus_x());
    ParticleEnsemble a = make_ensemble(dyn, params);
    std::vector<double> rev(params.rbegin(), params.rend());
    ParticleEnsemble b = make_ensemble(dyn, rev);
    bool identical = true, valid = true;
    for (double dM : r.dY) {
        const EnsembleStepInfo ia = ensemble_step(dyn, a, dM, dt);
        const EnsembleStepInfo ib = ensemble_step(dyn, b, dM, dt);
        identical = identical && ia.innovation == ib.innovation && a.mean() == b.mean();
        double sum = 0.0;
        for (double p : a.weights) {
            valid = valid && p >= 0.0;
            sum += p;
        }
        valid = valid && std::abs(sum - 1.0) < 1e-12;
    }
    CHECK(identical);
    CHECK(valid);
}

TEST_CASE("finite parameter set converges on the true value") {
    // truth 2 kappa within {2, 5, 8, 12} kappa, uniform prior, t = 10 / kappa
    const double dt = 1e-4;
    int converged = 0;
    for (int s = 0; s < 20; ++s) {
        const TrajectoryRecord r =
            simulate_truth(qubit_field_model(2.0, 1.0), plus_x(), 10.0, dt, 700 + static_cast<std::uint64_t>(s), {},
                           {1000000, true});
        DensityParticles dyn(pauli('Y'), pauli('Z'), plus_x());
        ParticleEnsemble e = make_ensemble(dyn, {2.0, 5.0, 8.0, 12.0});
        for (double dM : r.dY) ensemble_step(dyn, e, dM, dt);
        const auto top = std::max_element(e.weights.begin(), e.weights.end());
        if (top == e.weights.begin() && *top > 0.95) ++converged;
    }
    CHECK(converged >= 14);
}

TEST_CASE("observable space dimensions") {
    CHECK(observable_space_dim(Operator::Zero(2, 2), Operator::Zero(2, 2)).dimension == 1);
    const Eigen::Index r = observable_space_dim(pauli('Y'), pauli('Z')).dimension;
    CHECK(r == 3);
    // B = +kappa and -kappa: only 3 of the 6 candidates are independent
    CHECK(extended_dim({1.0, -1.0}) == 3);
    CHECK(extended_dim({2.0, 5.0}) == 2 * r);
    CHECK(extended_dim({2.0, 5.0, 8.0, 12.0}) == 4 * r);
    // a zero parameter removes one independent power
    CHECK(extended_dim({0.0, 2.0, 5.0}) == 3 * r - 1);
    const auto full = observable_space_dim(pauli('X'), sigma_minus());
    CHECK(full.full);
    for (std::size_t i = 0; i < full.basis.size(); ++i)
        for (std::size_t j = 0; j < full.basis.size(); ++j)
            CHECK(std::abs(hs_inner(full.basis[i], full.basis[j]) - (i == j ? 1.0 : 0.0)) < 1e-12);
}

TEST_CASE("observable space dimension is monotone in the parameter set") {
    std::mt19937_64 g(5);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> set;
        Eigen::Index last = 0;
        for (int k = 0; k < 4; ++k) {
            set.push_back(u(g));
            const Eigen::Index d = extended_dim(set);
            CHECK(d >= last);
            last = d;
        }
    }
}

TEST_CASE("Liu-West with a = 1 and h = 0 is multinomial resampling") {
    std::mt19937_64 g(9);
    ParticleEnsemble e = random_scalar_ensemble(200, g);
    const std::set<double> support(e.params.begin(), e.params.end());
    RngStream rng(1);
    liu_west_resample(e, 1.0, 0.0, rng, false);
    for (double x : e.params) CHECK(support.count(x) == 1);
    for (double p : e.weights) CHECK(p == 1.0 / 200.0);
}

TEST_CASE("Liu-West kernel preserves the ensemble mean and variance") {
    std::mt19937_64 g(10);
    const double a = 0.9, h = std::sqrt(1.0 - a * a);
    RngStream rng(2);
    int var_ok = 0, mean_ok = 0;
    for (int rep = 0; rep < 100; ++rep) {
        ParticleEnsemble e = random_scalar_ensemble(1000, g);
        const double m = e.mean(), V = e.variance();
        liu_west_resample(e, a, h, rng, false);
        if (std::abs(e.variance() - V) < 0.15 * V) ++var_ok;
        if (std::abs(e.mean() - m) < 3.0 * std::sqrt(V / 1000.0)) ++mean_ok;
    }
    CHECK(var_ok == 100);
    CHECK(mean_ok >= 99);
}

TEST_CASE("Liu-West rejects bad arguments and degenerate ensembles") {
    std::mt19937_64 g(11);
    ParticleEnsemble e = random_scalar_ensemble(10, g);
    RngStream rng(3);
    CHECK_THROWS_AS(liu_west_resample(e, 1.2, 0.1, rng, false), InvalidArgument);
    CHECK_THROWS_AS(liu_west_resample(e, 0.9, -0.1, rng, false), InvalidArgument);
    std::fill(e.weights.begin(), e.weights.end(), 0.0);
    CHECK_THROWS_AS(liu_west_resample(e, 0.9, 0.1, rng, false), DegenerateEnsemble);
}

TEST_CASE("particle filter with the prior concentrated on the truth stays there") {
    const double dt = 1e-3;
    const TrajectoryRecord r = simulate_truth(qubit_field_model(5.0, 1.0), plus_x(), 1.0, dt, 12, {}, {1000000, true});
    BlochParticles dyn(1.0);
    ParticleFilterConfig cfg;
    cfg.particles = 50;
    cfg.trace_stride = 10;
    const ParticleFilterResult res = particle_filter_run(dyn, r.dY, dt, GaussianPrior{5.0, 0.0}, cfg);
    for (const auto& s : res.trace) {
        CHECK(s.mean == doctest::Approx(5.0).epsilon(1e-14));
        CHECK(s.sd < 1e-7);
    }
}

TEST_CASE("particle filter without resampling is the plain ensemble filter") {
    const double dt = 1e-3;
    const TrajectoryRecord r = simulate_truth(qubit_field_model(3.0, 1.0), plus_x(), 2.0, dt, 13, {}, {1000000, true});
    BlochParticles dyn(1.0);
    const ParticleEnsemble init = make_ensemble(dyn, {1.0, 2.0, 3.0, 4.0, 5.0});
    ParticleFilterConfig cfg;
    cfg.threshold = 0.0;
    const ParticleFilterResult res = particle_filter_run(dyn, r.dY, dt, init, cfg);
    ParticleEnsemble e = init;
    for (double dM : r.dY) ensemble_step(dyn, e, dM, dt);
    CHECK(res.resample_count == 0);
    CHECK(res.final_ensemble.weights == e.weights);
    CHECK(res.estimate == e.mean());
    const ParticleFilterResult again = particle_filter_run(dyn, r.dY, dt, init, cfg);
    CHECK(again.estimate == res.estimate);
}

TEST_CASE("qubit particle filter is consistent with the true field") {
    // N = 1000, a = 0.98, h = 1e-3, threshold 2/3, B uniform on [0, 10 kappa]
    const double dt = 1e-4;
    int inside = 0;
    for (int s = 0; s < 10; ++s) {
        const TrajectoryRecord r = simulate_truth(qubit_field_model(5.0, 1.0), plus_x(), 10.0, dt,
                                                  800 + static_cast<std::uint64_t>(s), {}, {100000000, true});
        BlochParticles dyn(1.0);
        RngStream g(static_cast<std::uint64_t>(s), 7);
        std::vector<double> prior(1000);
        for (double& v : prior) v = 10.0 * g.uniform();
        ParticleFilterConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(s);
        const ParticleFilterResult res = particle_filter_run(dyn, r.dY, dt, make_ensemble(dyn, prior), cfg);
        CHECK(res.resample_count > 0);
        if (std::abs(res.estimate - 5.0) <= 3.0 * res.uncertainty) ++inside;
    }
    CHECK(inside >= 8);
}

TEST_CASE("convergence rate counts trajectories above alpha") {
    const std::vector<std::vector<std::vector<double>>> traces{
        {{0.5, 0.5}, {0.96, 0.04}},
        {{0.5, 0.5}, {0.9, 0.1}},
    };
    const auto rate = convergence_rate(traces);
    REQUIRE(rate.size() == 2);
    CHECK(rate[0] == 0.0);
    CHECK(rate[1] == 0.5);
}
