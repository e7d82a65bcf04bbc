#pragma once

#include "jumpctl/operator.hpp"
#include "jumpctl/stability.hpp"
#include "jumpctl/traffic.hpp"

namespace jumpctl {

/// Gains for `kind` at the nominal plant: the solver for exact_kernel, the
/// model for no_kernel (which then must be non-null). `n` is the kernel grid.
Controller make_controller(ControllerKind kind, const NominalParams& nominal, const OperatorModel* model, int n = 64);

/// Traffic-neighborhood training box: +-fraction around the nominal features.
ParameterRanges traffic_ranges(const TrafficScenario& scenario, double fraction = 0.2);

/// Monte Carlo setup on the traffic chain. The decay fit starts at the
/// nominal plant's convergence time L/lambda0 + L/mu0, which does not depend
/// on the mode set, so fits of different chain families are comparable.
McScenario traffic_mc(const TrafficScenario& scenario, const Controller& controller, double output_dt = 1.0);

/// Densities nominal + spread * (-1, -0.1, 0, 0.1, 0.9) veh/km around the
/// nominal density, keeping the default chain's asymmetric shape (the
/// default is the spread-20 member with a wider upper mode).
TrafficScenario with_density_spread(const TrafficScenario& scenario, double spread_veh_km);

struct FieldGap {
    /// max |rho_a - rho_b| in veh/km and max |v_a - v_b| in km/h over all
    /// output times and nodes.
    double max_rho_veh_km = 0.0;
    double max_v_kmh = 0.0;
};

/// Runs both controllers on the same sampled density path and compares the
/// reconstructed physical fields.
FieldGap closed_loop_gap(const TrafficScenario& scenario, const Controller& a, const Controller& b,
                         std::uint64_t path_seed, double output_dt = 1.0);

/// Space-time CSV `t,x,rho,v` in s, m, veh/km, km/h.
void write_physical_csv(std::ostream& os, const Trajectory& traj, const TrafficParams& tp);

}  // namespace jumpctl
