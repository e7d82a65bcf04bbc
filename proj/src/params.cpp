#include "jumpctl/params.hpp"

#include "jumpctl/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace jumpctl {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void NominalParams::validate() const {
    require(std::isfinite(lambda0) && lambda0 > 0.0, "nominal params: lambda0 must be > 0");
    require(std::isfinite(mu0) && mu0 > 0.0, "nominal params: mu0 must be > 0");
    require(std::isfinite(phi0) && std::isfinite(rho0_refl), "nominal params: non-finite reflection");
    require(std::isfinite(domain_length) && domain_length > 0.0, "nominal params: domain_length must be > 0");
}

DeltaState DeltaState::from_nominal(const NominalParams& p, int mode) {
    return {p.lambda0, p.mu0, p.sigma_plus0, p.sigma_minus0, p.phi0, p.rho0_refl, mode};
}

void DeltaState::validate() const {
    require(std::isfinite(lambda) && lambda > 0.0, "delta state: lambda must be > 0");
    require(std::isfinite(mu) && mu > 0.0, "delta state: mu must be > 0");
    require(std::isfinite(phi) && std::isfinite(rho_refl), "delta state: non-finite reflection");
}

double parameter_distance(const DeltaState& d, const NominalParams& p) {
    return std::abs(d.lambda - p.lambda0) + std::abs(d.mu - p.mu0) +
           sup_distance(d.sigma_plus, p.sigma_plus0) + sup_distance(d.sigma_minus, p.sigma_minus0) +
           std::abs(d.phi - p.phi0) + std::abs(d.rho_refl - p.rho0_refl);
}

const std::array<std::string, StochasticParams::symbol_count>& StochasticParams::symbol_names() {
    static const std::array<std::string, symbol_count> names{"lambda", "mu", "sigma_plus",
                                                            "sigma_minus", "phi", "rho"};
    return names;
}

const std::vector<double>& StochasticParams::modes(int symbol) const {
    switch (symbol) {
        case 0: return lambda;
        case 1: return mu;
        case 2: return sigma_plus;
        case 3: return sigma_minus;
        case 4: return phi;
        case 5: return rho_refl;
        default: throw std::out_of_range("stochastic params: symbol index");
    }
}

void StochasticParams::validate() const {
    for (int s = 0; s < symbol_count; ++s) {
        const auto& m = modes(s);
        if (m.empty())
            throw std::invalid_argument("stochastic params: no modes for " + symbol_names()[s]);
        for (std::size_t k = 0; k < m.size(); ++k) {
            if (!std::isfinite(m[k]))
                throw std::invalid_argument("stochastic params: non-finite mode for " + symbol_names()[s]);
            if (k > 0 && !(m[k] > m[k - 1]))
                throw std::invalid_argument("stochastic params: modes must be strictly increasing for " +
                                            symbol_names()[s]);
        }
    }
    require(lambda.front() > 0.0, "stochastic params: lambda modes must be > 0");
    require(mu.front() > 0.0, "stochastic params: mu modes must be > 0");
}

int StochasticParams::composite_index(std::span<const int> per_symbol) const {
    if (per_symbol.size() != symbol_count) throw std::invalid_argument("composite_index: need six indices");
    int idx = 0;
    for (int s = 0; s < symbol_count; ++s) {
        const int r = static_cast<int>(modes(s).size());
        if (per_symbol[s] < 0 || per_symbol[s] >= r) throw std::out_of_range("composite_index: mode index");
        idx = idx * r + per_symbol[s];
    }
    return idx;
}

DeltaState StochasticParams::state(std::span<const int> per_symbol) const {
    const int j = composite_index(per_symbol);
    return {lambda[per_symbol[0]],
            mu[per_symbol[1]],
            CouplingProfile::constant(sigma_plus[per_symbol[2]]),
            CouplingProfile::constant(sigma_minus[per_symbol[3]]),
            phi[per_symbol[4]],
            rho_refl[per_symbol[5]],
            j};
}

ProfileFamily parse_profile_family(const std::string& name) {
    if (name == "constant") return ProfileFamily::constant;
    if (name == "arz") return ProfileFamily::arz;
    throw std::invalid_argument("unknown profile family '" + name + "'");
}

std::string to_string(ProfileFamily family) {
    return family == ProfileFamily::arz ? "arz" : "constant";
}

NominalParams expand(const ParameterVector& v, ProfileFamily family, double domain_length) {
    NominalParams p;
    p.lambda0 = v.lambda0;
    p.mu0 = v.mu0;
    p.sigma_plus0 = CouplingProfile::constant(v.sigma_plus0);
    p.phi0 = v.phi0;
    p.rho0_refl = v.rho0_refl;
    p.domain_length = domain_length;
    if (family == ProfileFamily::constant) {
        p.sigma_minus0 = CouplingProfile::constant(v.sigma_minus0);
    } else {
        if (!(v.rho0_refl > 0.0)) throw std::invalid_argument("arz profile family needs rho0 > 0");
        const double s0 = v.sigma_minus0;
        const double decay = std::log(v.rho0_refl);
        p.sigma_minus0 = CouplingProfile::tabulate([=](double x) { return s0 * std::exp(decay * x); });
    }
    p.validate();
    return p;
}

ParameterVector features(const NominalParams& p) {
    return {p.lambda0, p.mu0, p.sigma_plus0(0.0), p.sigma_minus0(0.0), p.phi0, p.rho0_refl};
}

CouplingTerms coupling_terms(const DeltaState& d, const NominalParams& p, const KernelSet& K,
                             double x, double xi) {
    if (p.phi0 == 0.0) throw std::invalid_argument("coupling_terms: phi0 must be nonzero");
    if (p.mu0 == 0.0) throw std::invalid_argument("coupling_terms: mu0 must be nonzero");
    if (!(xi >= 0.0 && xi <= x && x <= 1.0))
        throw std::invalid_argument("coupling_terms: (x, xi) outside the triangle");

    const double lam = d.lambda, mu = d.mu, phi = d.phi;
    const double lam0 = p.lambda0, mu0 = p.mu0, phi0 = p.phi0;
    const double speed_ratio = (lam + mu) / (lam0 + mu0);

    CouplingTerms c;
    c.f1 = d.sigma_plus(x) - p.sigma_plus0(x) * speed_ratio;
    c.f2 = (mu - (lam * phi) / (lam0 * phi0) * mu0) * K.interpolate(Kernel::uv, x, 0.0);
    c.f3 = (lam / lam0 * p.sigma_minus0(xi) - d.sigma_minus(xi)) * K.interpolate(Kernel::uv, x, xi);
    c.f4 = (lam0 - lam) * K.d_dx_at(Kernel::uv, x, xi) + (mu - mu0) * K.d_dxi_at(Kernel::uv, x, xi) -
           (d.sigma_plus(xi) - p.sigma_plus0(xi)) * K.interpolate(Kernel::uu, x, xi);

    c.g1 = d.sigma_minus(x) - speed_ratio * p.sigma_minus0(x);
    c.g2 = (mu / mu0 * (lam0 * phi0) - lam * phi) * K.interpolate(Kernel::vu, x, 0.0);
    c.g3 = (mu - mu0) * K.d_dx_at(Kernel::vu, x, xi) - (lam - lam0) * K.d_dxi_at(Kernel::vu, x, xi) -
           (d.sigma_minus(xi) - p.sigma_minus0(xi)) * K.interpolate(Kernel::vv, x, xi);
    c.g4 = (p.sigma_plus0(xi) * mu / mu0 - d.sigma_plus(xi)) * K.interpolate(Kernel::vu, x, xi);
    return c;
}

}  // namespace jumpctl
