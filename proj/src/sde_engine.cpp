#include "qfilt/sde_engine.hpp"

#include <cmath>

#include "qfilt/errors.hpp"

namespace qfilt {

namespace {

void check_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) throw NumericFailure(std::string("non-finite ") + what);
}

void require_length(const Eigen::VectorXd& v, int n, const char* what) {
    if (v.size() != n) throw InvalidArgument(std::string(what) + " has the wrong length");
}

// sum_j (Db^j) b^j by central differences, h_k = 1e-6 (1 + |x_k|)
Eigen::VectorXd ito_correction(const SdeSystem& sys, double t, const Eigen::VectorXd& x) {
    Eigen::VectorXd corr = Eigen::VectorXd::Zero(sys.n);
    Eigen::VectorXd xp = x;
    for (int j = 0; j < sys.m; ++j) {
        const Eigen::VectorXd b = sys.diffusion(t, x, j);
        for (int k = 0; k < sys.n; ++k) {
            if (b(k) == 0.0) continue;
            const double h = 1e-6 * (1.0 + std::abs(x(k)));
            xp(k) = x(k) + h;
            const Eigen::VectorXd up = sys.diffusion(t, xp, j);
            xp(k) = x(k) - h;
            const Eigen::VectorXd dn = sys.diffusion(t, xp, j);
            xp(k) = x(k);
            corr += b(k) * (up - dn) / (2.0 * h);
        }
    }
    return corr;
}

SdeSystem shifted(const SdeSystem& sys, double sign, Interpretation target) {
    SdeSystem out = sys;
    out.interpretation = target;
    out.drift = [sys, sign](double t, const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return sys.drift(t, x) + sign * 0.5 * ito_correction(sys, t, x);
    };
    return out;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    engine_.seed(seq);
}

WienerPath wiener_increments(int m, long steps, double dt, std::uint64_t seed, std::uint64_t stream) {
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    if (steps < 1) throw InvalidArgument("steps must be at least 1");
    if (m < 1) throw InvalidArgument("channel count must be at least 1");
    WienerPath path;
    path.dt = dt;
    path.seed = seed;
    path.increments.resize(m, steps);
    RngStream rng(seed, stream);
    const double sdt = std::sqrt(dt);
    for (long s = 0; s < steps; ++s)
        for (int j = 0; j < m; ++j) path.increments(j, s) = sdt * rng.normal();
    return path;
}

Eigen::VectorXd euler_step(const SdeSystem& sys, const Eigen::VectorXd& x, double t, double dt,
                           const Eigen::VectorXd& dW) {
    if (sys.interpretation != Interpretation::ito)
        throw InvalidArgument("integrators accept Ito systems only; convert first");
    require_length(x, sys.n, "state");
    if (dW.size() != sys.m) throw InvalidArgument("noise increment has the wrong length");
    const Eigen::VectorXd a = sys.drift(t, x);
    require_length(a, sys.n, "drift");
    check_finite(a, "drift");
    Eigen::VectorXd out = x + a * dt;
    for (int j = 0; j < sys.m; ++j) {
        const Eigen::VectorXd b = sys.diffusion(t, x, j);
        require_length(b, sys.n, "diffusion");
        check_finite(b, "diffusion");
        out += b * dW(j);
    }
    return out;
}

Eigen::VectorXd predictor_corrector_step(const SdeSystem& sys, const Eigen::VectorXd& x, double dt, double dW) {
    if (sys.interpretation != Interpretation::ito)
        throw InvalidArgument("integrators accept Ito systems only; convert first");
    if (sys.m != 1) throw UnsupportedConfiguration("predictor-corrector needs exactly one noise channel");
    if (!sys.autonomous) throw UnsupportedConfiguration("predictor-corrector needs time-independent coefficients");
    require_length(x, sys.n, "state");

    auto a = [&](const Eigen::VectorXd& y) {
        Eigen::VectorXd v = sys.drift(0.0, y);
        check_finite(v, "drift");
        return v;
    };
    auto b = [&](const Eigen::VectorXd& y) {
        Eigen::VectorXd v = sys.diffusion(0.0, y, 0);
        check_finite(v, "diffusion");
        return v;
    };

    const double sdt = std::sqrt(dt);
    const Eigen::VectorXd ax = a(x);
    const Eigen::VectorXd bx = b(x);
    const Eigen::VectorXd base = x + ax * dt;
    const Eigen::VectorXd bp = b(base + bx * sdt);
    const Eigen::VectorXd bm = b(base - bx * sdt);
    const Eigen::VectorXd support = base + bx * dW;

    const Eigen::VectorXd phi = 0.25 * (bp + bm + 2.0 * bx) * dW + 0.25 * (bp - bm) * ((dW * dW - dt) / sdt);
    const Eigen::VectorXd predictor = x + 0.5 * (a(support) + ax) * dt + phi;
    return x + 0.5 * (a(predictor) + ax) * dt + phi;
}

SdeSystem stratonovich_to_ito(const SdeSystem& sys) {
    if (sys.interpretation != Interpretation::stratonovich)
        throw InvalidArgument("system is not in Stratonovich form");
    return shifted(sys, +1.0, Interpretation::ito);
}

SdeSystem ito_to_stratonovich(const SdeSystem& sys) {
    if (sys.interpretation != Interpretation::ito) throw InvalidArgument("system is not in Ito form");
    return shifted(sys, -1.0, Interpretation::stratonovich);
}

Eigen::VectorXd realify(const Eigen::VectorXcd& z) {
    Eigen::VectorXd x(2 * z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) {
        x(2 * k) = z(k).real();
        x(2 * k + 1) = z(k).imag();
    }
    return x;
}

Eigen::VectorXcd complexify(const Eigen::VectorXd& x) {
    if (x.size() % 2 != 0) throw InvalidArgument("realified vector must have even length");
    Eigen::VectorXcd z(x.size() / 2);
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = {x(2 * k), x(2 * k + 1)};
    return z;
}

SdeSystem complex_system(int n_complex, int m,
                         std::function<Eigen::VectorXcd(double, const Eigen::VectorXcd&)> drift,
                         std::function<Eigen::VectorXcd(double, const Eigen::VectorXcd&, int)> diffusion,
                         Interpretation interp) {
    SdeSystem sys;
    sys.n = 2 * n_complex;
    sys.m = m;
    sys.interpretation = interp;
    sys.drift = [drift](double t, const Eigen::VectorXd& x) { return realify(drift(t, complexify(x))); };
    sys.diffusion = [diffusion](double t, const Eigen::VectorXd& x, int j) {
        return realify(diffusion(t, complexify(x), j));
    };
    return sys;
}

}  // namespace qfilt
