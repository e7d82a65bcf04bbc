#include "jumpctl/kernels.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace jumpctl;
using Catch::Approx;

namespace {

NominalParams constant_plant() {
    NominalParams p;
    p.lambda0 = 1.0;
    p.mu0 = 2.0;
    p.sigma_plus0 = CouplingProfile::constant(0.6);
    p.sigma_minus0 = CouplingProfile::constant(-0.9);
    p.phi0 = 0.8;
    p.rho0_refl = 0.3;
    return p;
}

// Traffic plant rescaled to unit transport speed.
NominalParams traffic_like() {
    NominalParams p;
    p.lambda0 = 1.0;
    p.mu0 = 2.0;
    const double r = std::exp(-500.0 / 600.0);
    p.sigma_minus0 = CouplingProfile::tabulate([r](double x) { return -0.8333333333333334 * std::pow(r, x); });
    p.phi0 = -2.0;
    p.rho0_refl = r;
    return p;
}

}  // namespace

TEST_CASE("triangle grid layout") {
    TriangleGrid g(5);
    CHECK(g.size() == 15);
    CHECK(g.index(0, 0) == 0);
    CHECK(g.index(4, 4) == 14);
    CHECK(g.coord(4) == 1.0);
    CHECK(g.h() == 0.25);
}

TEST_CASE("zero couplings give zero kernels") {
    NominalParams p;
    p.lambda0 = 1.0;
    p.mu0 = 3.0;
    p.phi0 = 1.0;
    const auto K = solve_kernels(p, 16);
    for (auto k : all_kernels) CHECK(K.sup_abs(k) == 0.0);
    const auto r = kernel_residual(K);
    CHECK(r.sup() == 0.0);
    const auto g = gain_slice(K);
    CHECK(g.sup_abs() == 0.0);
}

TEST_CASE("solver preconditions") {
    auto p = constant_plant();
    CHECK_THROWS_AS(solve_kernels(p, 7), std::invalid_argument);
    p.phi0 = 0.0;
    CHECK_THROWS_AS(solve_kernels(p, 16), std::invalid_argument);
}

TEST_CASE("diagonal traces and edge conditions") {
    const auto p = constant_plant();
    const int n = 41;
    const auto K = solve_kernels(p, n);
    const double lm = p.lambda0 + p.mu0;
    for (int i = 0; i < n; ++i) {
        CHECK(K.at(Kernel::uv, i, i) == Approx(0.6 / lm).margin(1e-12));
        CHECK(K.at(Kernel::vu, i, i) == Approx(0.9 / lm).margin(1e-12));
        CHECK(K.at(Kernel::uu, i, 0) == Approx(p.mu0 / (p.lambda0 * p.phi0) * K.at(Kernel::uv, i, 0)).margin(1e-10));
        CHECK(K.at(Kernel::vv, i, 0) == Approx(p.lambda0 * p.phi0 / p.mu0 * K.at(Kernel::vu, i, 0)).margin(1e-10));
    }
}

TEST_CASE("residual shrinks at first order under refinement") {
    for (const auto& p : {constant_plant(), traffic_like()}) {
        const double r1 = kernel_residual(solve_kernels(p, 33)).pde_sup_max();
        const double r2 = kernel_residual(solve_kernels(p, 65)).pde_sup_max();
        const double ratio = r1 / r2;
        CHECK(ratio >= 1.7);
        CHECK(ratio <= 2.3);
    }
}

TEST_CASE("traffic-like solve at n = 64 has residual below 10 h") {
    const auto K = solve_kernels(traffic_like(), 64);
    CHECK(kernel_residual(K).sup() < 10.0 * K.grid().h());
    // sigma_plus = 0 forces the u-row kernels to vanish.
    CHECK(K.sup_abs(Kernel::uu) == 0.0);
    CHECK(K.sup_abs(Kernel::uv) == 0.0);
    const auto g = gain_slice(K);
    CHECK(std::isfinite(g.sup_abs()));
    CHECK(g.sup_abs() > 0.0);
}

TEST_CASE("zero kernel field residual equals the diagonal data") {
    const auto p = constant_plant();
    KernelSet K(TriangleGrid(16), p);
    const auto r = kernel_residual(K);
    CHECK(r.pde_sup_max() == 0.0);
    CHECK(r.sup() == Approx(0.9 / 3.0));
}

TEST_CASE("gain slice matches the last table row") {
    const auto K = solve_kernels(constant_plant(), 21);
    const auto g = gain_slice(K);
    REQUIRE(g.xi.size() == 21);
    for (int j = 0; j < 21; ++j) {
        CHECK(g.k_vu[j] == K.at(Kernel::vu, 20, j));
        CHECK(g.k_vv[j] == K.at(Kernel::vv, 20, j));
        CHECK(g.vu_at(g.xi[j]) == g.k_vu[j]);
    }
    const auto r = g.resampled(41);
    CHECK(r.vu_at(0.5 * (g.xi[3] + g.xi[4])) == Approx(0.5 * (g.k_vu[3] + g.k_vu[4])));
}

TEST_CASE("transform with zero kernels is the identity") {
    KernelSet K(TriangleGrid(9), constant_plant());
    StatePair s{std::vector<double>(9, 0.3), std::vector<double>(9, -1.0)};
    const auto out = backstepping_transform(s, K, TransformDirection::forward);
    CHECK(out.u == s.u);
    CHECK(out.v == s.v);
}

TEST_CASE("transform with unit K^uu, K^uv") {
    const int n = 11;
    KernelSet K(TriangleGrid(n), constant_plant());
    std::fill(K.table(Kernel::uu).begin(), K.table(Kernel::uu).end(), 1.0);
    std::fill(K.table(Kernel::uv).begin(), K.table(Kernel::uv).end(), 1.0);
    StatePair s{std::vector<double>(n, 1.0), std::vector<double>(n, 1.0)};
    const auto out = backstepping_transform(s, K, TransformDirection::forward);
    for (int i = 0; i < n; ++i) {
        CHECK(out.u[i] == Approx(1.0 - 2.0 * K.grid().coord(i)).margin(1e-13));
        CHECK(out.v[i] == 1.0);
    }
}

TEST_CASE("transform inverse undoes forward") {
    const auto K = solve_kernels(traffic_like(), 128);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    StatePair s{std::vector<double>(128), std::vector<double>(128)};
    for (int i = 0; i < 128; ++i) {
        s.u[i] = g(rng);
        s.v[i] = g(rng);
    }
    const auto back = backstepping_transform(backstepping_transform(s, K, TransformDirection::forward), K,
                                             TransformDirection::inverse);
    for (int i = 0; i < 128; ++i) {
        CHECK(std::abs(back.u[i] - s.u[i]) < 1e-8);
        CHECK(std::abs(back.v[i] - s.v[i]) < 1e-8);
    }
    StatePair bad{std::vector<double>(10), std::vector<double>(10)};
    CHECK_THROWS(backstepping_transform(bad, K, TransformDirection::forward));
}

TEST_CASE("norm equivalence constants are stable under refinement") {
    auto bounds = [](int n) {
        const auto K = solve_kernels(constant_plant(), n);
        std::mt19937_64 rng(5);
        std::normal_distribution<double> g;
        double lo = 1e300, hi = 0.0;
        for (int trial = 0; trial < 30; ++trial) {
            StatePair s{std::vector<double>(n), std::vector<double>(n)};
            // Smooth random states: a few Fourier modes.
            std::array<double, 8> c{};
            for (double& a : c) a = g(rng);
            for (int i = 0; i < n; ++i) {
                const double x = K.grid().coord(i);
                s.u[i] = c[0] + c[1] * std::sin(M_PI * x) + c[2] * std::cos(3 * M_PI * x) + c[3] * x;
                s.v[i] = c[4] + c[5] * std::sin(2 * M_PI * x) + c[6] * std::cos(M_PI * x) + c[7] * x * x;
            }
            const auto t = backstepping_transform(s, K, TransformDirection::forward);
            double a = 0, b = 0;
            for (int i = 0; i < n; ++i) {
                const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
                a += w * (s.u[i] * s.u[i] + s.v[i] * s.v[i]);
                b += w * (t.u[i] * t.u[i] + t.v[i] * t.v[i]);
            }
            lo = std::min(lo, b / a);
            hi = std::max(hi, b / a);
        }
        return std::pair{lo, hi};
    };
    const auto [lo1, hi1] = bounds(33);
    const auto [lo2, hi2] = bounds(129);
    CHECK(lo1 > 0.0);
    CHECK(lo2 > 0.0);
    CHECK(lo2 == Approx(lo1).epsilon(0.05));
    CHECK(hi2 == Approx(hi1).epsilon(0.05));
}

TEST_CASE("kernel csv round trip") {
    const auto p = constant_plant();
    const auto K = solve_kernels(p, 12);
    std::stringstream ss;
    write_kernel_csv(ss, K);
    CHECK(ss.str().rfind("x,xi,Kuu,Kuv,Kvu,Kvv\n", 0) == 0);
    const auto R = read_kernel_csv(ss, p);
    CHECK(R.grid() == K.grid());
    for (auto k : all_kernels) CHECK(R.table(k) == K.table(k));
}

TEST_CASE("resampling preserves a linear field") {
    KernelSet K(TriangleGrid(9), constant_plant());
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j <= i; ++j)
            K.table(Kernel::vv)[K.grid().index(i, j)] = 2.0 * K.grid().coord(i) - K.grid().coord(j);
    const auto R = K.resampled(17);
    for (int i = 0; i < 17; ++i)
        for (int j = 0; j <= i; ++j)
            CHECK(R.at(Kernel::vv, i, j) == Approx(2.0 * R.grid().coord(i) - R.grid().coord(j)).margin(1e-13));
}

TEST_CASE("traffic-like gains agree with an independent Volterra reduction") {
    // With sigma_plus = 0 the system collapses to a scalar Volterra equation
    // for K^vu(s, 0); values below come from solving it at 2e4 nodes.
    const auto K = solve_kernels(traffic_like(), 65);
    CHECK(K.interpolate(Kernel::vu, 1.0, 0.0) == Approx(0.2777777777790182).margin(1e-5));
    CHECK(K.interpolate(Kernel::vv, 1.0, 0.0) == Approx(-0.2777777777790182).margin(1e-5));
    CHECK(K.interpolate(Kernel::vu, 1.0, 0.5) == Approx(0.1831223972780236).margin(1e-5));
}
