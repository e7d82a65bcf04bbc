#pragma once

#include "jumpctl/markov.hpp"
#include "jumpctl/sim.hpp"

#include <cstdint>
#include <vector>

namespace jumpctl {

class Config;

/// Linearized ARZ road section, SI units (m, s, veh/m).
struct TrafficParams {
    double length = 500.0;
    double vf = 40.0;
    double rho_m = 0.16;
    double rho_star = 0.12;
    double v_star = 10.0;
    double iota = 60.0;
    double gamma = 1.0;

    void validate() const;
    /// Equilibrium pressure vf (rho*/rho_m)^gamma.
    double p_star() const;
    double q_star() const { return rho_star * v_star; }
    /// Congested-wave speed gamma p* - v* (m/s).
    double mu_phys() const { return gamma * p_star() - v_star; }
    /// r = q* (1/v* - 1/(gamma p*)).
    double r_coef() const;
    TrafficParams with_density(double rho) const;
};

/// Riemann-coordinate plant on the normalized domain: speeds are divided by
/// the road length, so lambda0 = v*/L and mu0 = (gamma p* - v*)/L per second,
/// sigma0-(x) = -(1/iota) exp(-x L/(iota v*)), phi0 = (v* - gamma p*)/v*,
/// rho0 = exp(-L/(iota v*)). domain_length = L.
NominalParams arz_nominal(const TrafficParams& tp);
DeltaState arz_delta(const TrafficParams& tp, int mode);

/// (q~, v~) on m+1 uniform nodes over [0, L] <-> (w, v) Riemann variables:
///   w = e^{x/(iota v*)} (q~ - r v~),  v = (q*/(gamma p*)) v~.
StatePair riemann_transform(const StatePair& fields, const TrafficParams& tp, TransformDirection direction);

/// Boundary input of the Riemann plant written in (q~, v~):
///   U = r v~(L) - q~(L) + int_0^1 K^vu(1,s) e^{sL/(iota v*)} (q~ - r v~)(sL) ds
///       + (q*/(gamma p*)) int_0^1 K^vv(1,s) v~(sL) ds.
double arz_control(const StatePair& fields, const GainSlice& gains, const TrafficParams& tp);
/// Speed-limit offset applied at the outlet: v~(L) = q~(L)/rho* + U/rho*.
double speed_limit_command(double riemann_input, const TrafficParams& tp);

struct PhysicalFields {
    std::vector<double> rho;
    std::vector<double> v;
    /// Nodes where v* + v~ <= 0 (density undefined, set to NaN).
    int flagged = 0;
};

/// rho = (q* + q~)/(v* + v~), v = v* + v~.
PhysicalFields reconstruct_fields(const StatePair& fields, const TrafficParams& tp);

struct TrafficScenario {
    TrafficParams nominal;
    std::vector<double> densities;
    std::vector<double> initial_probs;
    double horizon = 200.0;
    int grid_m = 400;
    int mc_runs = 50;
    std::uint64_t mc_seed = 2024;

    void validate() const;
    /// 0 on the diagonal; rows of the extreme modes leave at 20; middle rows
    /// enter an extreme mode at 10 and another middle mode at
    /// 10 + 20 cos^2(0.01 (i + 5 j) t) with 1-based i, j.
    MarkovChain chain() const;
    DeltaPath delta_path(const ModePath& density_path) const;
    DeltaPath draw_path(std::uint64_t seed) const;
    /// Stop-and-go profile rho* (1 + 0.1 sin(3 pi x/L)), v* (1 - 0.1 sin(3 pi x/L)),
    /// as deviations (q~, v~) from the nominal equilibrium.
    StatePair initial_fields() const;
    Snapshot initial_state() const;
    /// Transport period L/lambda_min + L/mu_min over the modes (s).
    double transport_period() const;
};

/// Case-study defaults, overridden by any of the keys
///   road.length_m, traffic.vf_kmh, traffic.rho_max_veh_km, traffic.rho_star_veh_km,
///   traffic.v_star_kmh, traffic.iota_s, traffic.gamma, chain.densities_veh_km,
///   chain.initial_probs, sim.horizon_s, sim.grid_m, mc.runs, mc.seed.
TrafficScenario build_scenario(const Config& config);
TrafficScenario default_scenario();
const std::vector<std::string>& scenario_keys();

/// Converts a Riemann-coordinate snapshot back to physical deviations.
StatePair to_fields(const Snapshot& riemann, const TrafficParams& tp);
Snapshot to_riemann(const StatePair& fields, const TrafficParams& tp, double t = 0.0);

/// Cross-check: upwind flux splitting of the linearized ARZ equations directly
/// in (q~, v~) with q~(0) = 0 and v~(L) = q~(L)/rho* + speed_limit_command(U).
/// Fixed equilibrium, used only at coarse resolution.
struct DirectRun {
    std::vector<double> times;
    std::vector<StatePair> fields;
    std::vector<double> control;
};
DirectRun simulate_arz_direct(const StatePair& initial, const TrafficParams& tp, const GainSlice* gains,
                              double horizon, double output_dt, double cfl = 0.9);

}  // namespace jumpctl
