#include "jumpctl/kernels.hpp"
#include "jumpctl/params.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace jumpctl;
using Catch::Approx;

namespace {

NominalParams sample_nominal() {
    NominalParams p;
    p.lambda0 = 1.0;
    p.mu0 = 2.0;
    p.sigma_plus0 = CouplingProfile::constant(0.4);
    p.sigma_minus0 = CouplingProfile::tabulate([](double x) { return -0.8 * std::exp(-0.5 * x); });
    p.phi0 = -1.5;
    p.rho0_refl = 0.4;
    return p;
}

}  // namespace

TEST_CASE("profile interpolates linearly and reports constants") {
    auto c = CouplingProfile::constant(2.5);
    CHECK(c.is_constant());
    CHECK(c(0.0) == 2.5);
    CHECK(c(0.77) == 2.5);

    auto t = CouplingProfile::from_table({0.0, 1.0, 4.0});
    CHECK(t(0.25) == Approx(0.5));
    CHECK(t(0.75) == Approx(2.5));
    CHECK(t(1.0) == 4.0);
    CHECK(t.sup_abs() == 4.0);
    CHECK(sup_distance(t, CouplingProfile::constant(1.0)) == Approx(3.0));
}

TEST_CASE("profile rejects empty and non-finite tables") {
    CHECK_THROWS(CouplingProfile::from_table({}));
    CHECK_THROWS(CouplingProfile::from_table({1.0, std::nan("")}));
}

TEST_CASE("nominal params validation") {
    auto p = sample_nominal();
    CHECK_NOTHROW(p.validate());
    p.lambda0 = 0.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = sample_nominal();
    p.mu0 = -1.0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("stochastic params: ordering, composite index, state") {
    StochasticParams s;
    s.lambda = {1.0, 2.0};
    s.mu = {1.0, 1.5, 3.0};
    s.sigma_plus = {0.0};
    s.sigma_minus = {-1.0, 0.0};
    s.phi = {-2.0};
    s.rho_refl = {0.5};
    CHECK_NOTHROW(s.validate());

    const std::array<int, 6> idx{1, 2, 0, 1, 0, 0};
    CHECK(s.composite_index(idx) == ((1 * 3 + 2) * 1 + 0) * 2 + 1);
    const auto d = s.state(idx);
    CHECK(d.lambda == 2.0);
    CHECK(d.mu == 3.0);
    CHECK(d.sigma_minus(0.3) == 0.0);

    s.mu = {1.0, 1.0};
    CHECK_THROWS(s.validate());
    s.mu = {-1.0, 1.0};
    CHECK_THROWS(s.validate());
}

TEST_CASE("expand with the arz family reproduces the exponential coupling") {
    ParameterVector v{0.02, 0.04, 0.0, -1.0 / 60.0, -2.0, std::exp(-500.0 / 600.0)};
    auto p = expand(v, ProfileFamily::arz, 500.0);
    for (double x : {0.0, 0.3, 0.71, 1.0})
        CHECK(p.sigma_minus0(x) == Approx(-1.0 / 60.0 * std::exp(-x * 500.0 / 600.0)).epsilon(1e-6));
    CHECK(features(p).as_array() == v.as_array());
    CHECK(parse_profile_family("arz") == ProfileFamily::arz);
    CHECK_THROWS(parse_profile_family("cubic"));
}

TEST_CASE("coupling terms vanish at the nominal tuple") {
    const auto p = sample_nominal();
    const auto K = solve_kernels(p, 33);
    const auto d = DeltaState::from_nominal(p);
    for (double x : {0.0, 0.4, 1.0})
        for (double xi : {0.0, 0.5 * x, x}) {
            const auto c = coupling_terms(d, p, K, x, xi);
            for (double f : c.as_array()) CHECK(f == 0.0);
        }
}

TEST_CASE("coupling terms: single perturbations") {
    const auto p = sample_nominal();
    const auto K = solve_kernels(p, 33);

    auto d = DeltaState::from_nominal(p);
    d.sigma_plus = CouplingProfile::constant(0.5);
    CHECK(coupling_terms(d, p, K, 0.6, 0.2).f1 == Approx(0.1));

    // Only phi perturbed: g2 = lambda0 (phi0 - phi) K^vu(x, 0).
    d = DeltaState::from_nominal(p);
    d.phi = -1.0;
    const auto c = coupling_terms(d, p, K, 0.6, 0.2);
    CHECK(c.g2 == Approx(p.lambda0 * (p.phi0 - d.phi) * K.interpolate(Kernel::vu, 0.6, 0.0)));
    CHECK(c.f1 == 0.0);
    CHECK(c.g1 == 0.0);
}

TEST_CASE("coupling terms reject bad inputs") {
    auto p = sample_nominal();
    const auto K = solve_kernels(p, 17);
    const auto d = DeltaState::from_nominal(p);
    CHECK_THROWS_AS(coupling_terms(d, p, K, 0.3, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(coupling_terms(d, p, K, 1.2, 0.5), std::invalid_argument);
    p.phi0 = 0.0;
    CHECK_THROWS_AS(coupling_terms(d, p, K, 0.5, 0.1), std::invalid_argument);
}

TEST_CASE("coupling terms are bounded by the parameter distance across modes") {
    const auto p = sample_nominal();
    const auto K = solve_kernels(p, 33);
    std::vector<double> ratios;
    for (double scale : {0.02, 0.1, 0.3}) {
        DeltaState d = DeltaState::from_nominal(p);
        d.lambda *= 1.0 + scale;
        d.mu *= 1.0 - 0.5 * scale;
        d.phi *= 1.0 + scale;
        d.rho_refl *= 1.0 - scale;
        d.sigma_plus = CouplingProfile::constant(0.4 * (1.0 + scale));
        const double dist = parameter_distance(d, p);
        double worst = 0.0;
        for (int i = 0; i <= 10; ++i)
            for (int j = 0; j <= i; ++j)
                for (double f : coupling_terms(d, p, K, i / 10.0, j / 10.0).as_array())
                    worst = std::max(worst, std::abs(f));
        ratios.push_back(worst / dist);
    }
    const double lo = *std::min_element(ratios.begin(), ratios.end());
    const double hi = *std::max_element(ratios.begin(), ratios.end());
    CHECK(std::isfinite(hi));
    CHECK(hi / lo < 3.0);
}
