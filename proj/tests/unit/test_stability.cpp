#include "jumpctl/stability.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace jumpctl;
using Catch::Approx;

namespace {

Snapshot smooth_state(int m, double a, double b) {
    Snapshot s;
    for (int i = 0; i <= m; ++i) {
        const double x = double(i) / m;
        s.u.push_back(a * std::sin(M_PI * x) + 0.3);
        s.v.push_back(b * x * (1 - x) + 0.2 * std::cos(2 * x));
    }
    return s;
}

NominalParams plant() {
    NominalParams p;
    p.lambda0 = 1.0;
    p.mu0 = 1.5;
    p.sigma_plus0 = CouplingProfile::constant(0.5);
    p.sigma_minus0 = CouplingProfile::constant(-0.7);
    p.phi0 = -1.2;
    p.rho0_refl = 0.4;
    return p;
}

}  // namespace

TEST_CASE("fit_decay on exact and flat data") {
    std::vector<double> t, v, c;
    for (int k = 0; k <= 50; ++k) {
        t.push_back(0.1 * k);
        v.push_back(3.0 * std::exp(-2.0 * t.back()));
        c.push_back(0.7);
    }
    const auto e = fit_decay(t, v);
    CHECK(e.sigma_hat == Approx(2.0).margin(1e-6));
    CHECK(e.kappa_hat == Approx(3.0).epsilon(1e-9));
    CHECK(e.r_squared == Approx(1.0));
    CHECK(e.accepted);
    const auto f = fit_decay(t, c);
    CHECK(f.sigma_hat == Approx(0.0).margin(1e-12));
    CHECK(f.accepted);
}

TEST_CASE("fit_decay skips nonpositive values and respects the window") {
    std::vector<double> t{0, 1, 2, 3, 4, 5}, v{100, -1, std::exp(-2.0), 0.0, std::exp(-4.0), std::exp(-5.0)};
    const auto e = fit_decay(t, v, 1.0);
    CHECK(e.excluded == 2);
    CHECK(e.n_points == 3);
    CHECK(e.sigma_hat == Approx(1.0));
}

TEST_CASE("fit_decay on a noisy exponential") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> noise(0.0, 0.01);
    std::vector<double> t, v;
    for (int k = 0; k <= 200; ++k) {
        t.push_back(0.05 * k);
        v.push_back(std::exp(-t.back()) * (1.0 + noise(rng)));
    }
    const auto e = fit_decay(t, v);
    CHECK(e.sigma_hat >= 0.95);
    CHECK(e.sigma_hat <= 1.05);
    CHECK(e.sigma_band > 0.0);
}

TEST_CASE("fit_decay rejects noise without trend") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    std::vector<double> t, v;
    for (int k = 0; k < 100; ++k) {
        t.push_back(k);
        v.push_back(u(rng));
    }
    CHECK_FALSE(fit_decay(t, v).accepted);
}

TEST_CASE("lyapunov functional basics") {
    DeltaState d;
    d.lambda = 1.0;
    d.mu = 1.0;
    Snapshot zero{0.0, std::vector<double>(11, 0.0), std::vector<double>(11, 0.0), 0};
    CHECK(lyapunov_value(zero, d, {0.5, 2.0}) == 0.0);

    const auto s = smooth_state(100, 1.0, 2.0);
    const double n = l2_norm(s);
    CHECK(lyapunov_value(s, d, {1e-12, 1.0}) == Approx(n * n).epsilon(1e-9));
    CHECK_THROWS(LyapunovParams{0.0, 1.0}.validate());
}

TEST_CASE("lyapunov functional is sandwiched by the squared norm") {
    DeltaState d;
    d.lambda = 0.8;
    d.mu = 1.7;
    const LyapunovParams p{0.5, 3.0};
    // Extremes of the two weights over x in [0, 1].
    const double m3 = std::min(std::exp(-p.nu / d.lambda) / d.lambda, p.a / d.mu);
    const double m4 = std::max(1.0 / d.lambda, p.a * std::exp(p.nu / d.mu) / d.mu);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = smooth_state(64, g(rng), g(rng));
        const double n2 = std::pow(l2_norm(s), 2);
        const double V = lyapunov_value(s, d, p);
        CHECK(V >= m3 * n2 * (1 - 1e-12));
        CHECK(V <= m4 * n2 * (1 + 1e-12));
    }
}

TEST_CASE("lyapunov functional decreases along the nominal closed loop") {
    const auto P = plant();
    const auto K = solve_kernels(P, 101);
    const auto ctrl = Controller::from_gains(ControllerKind::exact_kernel, gain_slice(K), P.rho0_refl);
    const auto traj = simulate(smooth_state(400, 1.0, 1.0), DeltaPath::constant(DeltaState::from_nominal(P), 3.0),
                               ctrl, {3.0, 0.02, 0.9});
    std::array<double, 1> phis{P.phi0};
    const auto lp = LyapunovParams::defaults_for(phis);
    CHECK(lp.a == Approx(1.0 + 1.44));
    const double transport = 1 / P.lambda0 + 1 / P.mu0;
    double prev = std::numeric_limits<double>::infinity();
    int checked = 0;
    for (const auto& s : traj.snapshots) {
        StatePair st{std::vector<double>(101), std::vector<double>(101)};
        for (int i = 0; i <= 100; ++i) {
            st.u[i] = s.u[4 * i];
            st.v[i] = s.v[4 * i];
        }
        const auto ab = backstepping_transform(st, K, TransformDirection::forward);
        const double V = lyapunov_value({s.t, ab.u, ab.v, 0}, DeltaState::from_nominal(P), lp);
        if (s.t >= transport) {
            CHECK(V <= prev * (1 + 1e-9) + 1e-14);
            ++checked;
        }
        prev = V;
    }
    CHECK(checked > 50);
}

TEST_CASE("parallel_for covers every index and propagates errors") {
    std::vector<int> hit(100, 0);
    parallel_for(100, 4, [&](int i) { hit[i] += 1; });
    for (int h : hit) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](int i) {
                                     if (i == 7) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}

TEST_CASE("monte carlo: deterministic plant hits the finite-time floor") {
    const auto P = plant();
    const auto K = solve_kernels(P, 65);
    McScenario sc;
    sc.initial = smooth_state(200, 1.0, 0.5);
    sc.draw_path = [&](std::uint64_t) { return DeltaPath::constant(DeltaState::from_nominal(P), 2.5); };
    sc.controller = Controller::from_gains(ControllerKind::exact_kernel, gain_slice(K), P.rho0_refl);
    sc.sim = {2.5, 0.05, 0.9};
    sc.t_fit_start = 0.0;
    const auto r = mc_mean_square(sc, 10, 1, 2);
    CHECK(r.fit.sigma_hat > 5.0);
    CHECK(r.mean_square.back() < 1e-6 * r.mean_square.front());
    CHECK(r.median_t10() < 1 / P.lambda0 + 1 / P.mu0);
}

TEST_CASE("monte carlo output does not depend on the worker count") {
    const auto P = plant();
    const auto K = solve_kernels(P, 33);
    auto chain = MarkovChain::with_constant_rates({1.0, 1.4}, {0, 2, 2, 0}, {0.5, 0.5});
    McScenario sc;
    sc.initial = smooth_state(80, 1.0, 0.5);
    sc.draw_path = [&](std::uint64_t seed) {
        std::vector<ModePath> paths{sample_path(chain, seed, 2.0)};
        return product_path(paths, [&](std::span<const int> idx) {
            auto d = DeltaState::from_nominal(P, idx[0]);
            d.lambda = chain.mode_values()[idx[0]];
            return d;
        });
    };
    sc.controller = Controller::from_gains(ControllerKind::exact_kernel, gain_slice(K), P.rho0_refl);
    sc.sim = {2.0, 0.1, 0.9};
    sc.kernels = &K;
    sc.lyapunov = {0.5, 2.5};
    const auto a = mc_mean_square(sc, 12, 77, 1);
    const auto b = mc_mean_square(sc, 12, 77, 3);
    CHECK(a.mean_square == b.mean_square);
    CHECK(a.mean_lyapunov == b.mean_lyapunov);
    CHECK(a.t10 == b.t10);

    std::ostringstream os;
    write_decay_csv(os, a);
    CHECK(os.str().rfind("t,mean_square_norm,fitted_curve\n", 0) == 0);
}
