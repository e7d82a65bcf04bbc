#pragma once

#include "jumpctl/profile.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace jumpctl {

class KernelSet;

/// Coefficients of the nominal 2x2 plant
///   u_t + lambda0 u_x = sigma_plus0(x) v,   v_t - mu0 v_x = sigma_minus0(x) u,
///   u(0) = phi0 v(0),                       v(1) = rho0_refl u(1) + U.
///
/// Speeds are always per unit of *normalized* length (x in [0, 1]) per unit
/// time; domain_length only converts positions back to physical units.
struct NominalParams {
    double lambda0 = 1.0;
    double mu0 = 1.0;
    CouplingProfile sigma_plus0;
    CouplingProfile sigma_minus0;
    double phi0 = 0.0;
    double rho0_refl = 0.0;
    double domain_length = 1.0;

    void validate() const;
};

/// Current value of the jumping coefficient tuple, plus the composite mode index.
struct DeltaState {
    double lambda = 1.0;
    double mu = 1.0;
    CouplingProfile sigma_plus;
    CouplingProfile sigma_minus;
    double phi = 0.0;
    double rho_refl = 0.0;
    int mode = 0;

    static DeltaState from_nominal(const NominalParams& p, int mode = 0);
    void validate() const;
};

/// Sum over the six coefficients of |X0 - X|, with the sup norm for the
/// spatially varying couplings.
double parameter_distance(const DeltaState& delta, const NominalParams& nominal);

/// Per-symbol mode lists for the abstract scenario, where every coefficient
/// (couplings included) is a scalar jumping among r_X values.
struct StochasticParams {
    std::vector<double> lambda;
    std::vector<double> mu;
    std::vector<double> sigma_plus;
    std::vector<double> sigma_minus;
    std::vector<double> phi;
    std::vector<double> rho_refl;

    static constexpr int symbol_count = 6;
    static const std::array<std::string, symbol_count>& symbol_names();

    const std::vector<double>& modes(int symbol) const;
    void validate() const;

    /// Mixed-radix composite index of the per-symbol mode indices.
    int composite_index(std::span<const int> per_symbol) const;
    DeltaState state(std::span<const int> per_symbol) const;
};

/// The six scalar features that parameterize a nominal plant. For couplings
/// that vary in x the feature is the value at x = 0.
struct ParameterVector {
    double lambda0 = 0.0;
    double mu0 = 0.0;
    double sigma_plus0 = 0.0;
    double sigma_minus0 = 0.0;
    double phi0 = 0.0;
    double rho0_refl = 0.0;

    std::array<double, 6> as_array() const {
        return {lambda0, mu0, sigma_plus0, sigma_minus0, phi0, rho0_refl};
    }
    static ParameterVector from_array(const std::array<double, 6>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5]};
    }
};

/// How the six features expand into coupling profiles.
///  - constant: sigma's are constant in x.
///  - arz:      sigma_minus0(x) = sigma_minus0(0) * rho0_refl^x, the shape the
///              linearized ARZ model produces (rho0_refl = exp(-L/(iota v*))).
enum class ProfileFamily { constant, arz };

ProfileFamily parse_profile_family(const std::string& name);
std::string to_string(ProfileFamily family);

NominalParams expand(const ParameterVector& v, ProfileFamily family, double domain_length = 1.0);
ParameterVector features(const NominalParams& p);

/// Coefficients of the perturbation terms in the target system seen by the
/// nominal backstepping transform when the plant sits at delta instead of the
/// nominal tuple. All eight vanish at delta = nominal.
struct CouplingTerms {
    double f1 = 0, f2 = 0, f3 = 0, f4 = 0;
    double g1 = 0, g2 = 0, g3 = 0, g4 = 0;

    std::array<double, 8> as_array() const { return {f1, f2, f3, f4, g1, g2, g3, g4}; }
};

/// Throws std::invalid_argument when phi0 or mu0 is zero or (x, xi) is outside
/// 0 <= xi <= x <= 1. Kernel derivatives are taken by finite differences on
/// the kernel grid.
CouplingTerms coupling_terms(const DeltaState& delta, const NominalParams& nominal,
                             const KernelSet& kernels, double x, double xi);

}  // namespace jumpctl
