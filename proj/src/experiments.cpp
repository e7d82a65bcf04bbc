#include "jumpctl/experiments.hpp"

#include <cmath>
#include <ostream>

namespace jumpctl {

Controller make_controller(ControllerKind kind, const NominalParams& nominal, const OperatorModel* model, int n) {
    switch (kind) {
        case ControllerKind::open_loop: return Controller::open_loop();
        case ControllerKind::exact_kernel:
            return Controller::from_gains(kind, gain_slice(solve_kernels(nominal, n)), nominal.rho0_refl);
        case ControllerKind::no_kernel:
            if (!model) throw std::invalid_argument("no_kernel controller needs a trained operator model");
            return Controller::from_gains(kind, gain_slice(infer(*model, features(nominal), n, nominal.domain_length).kernels),
                                          nominal.rho0_refl);
    }
    throw std::invalid_argument("make_controller: unknown controller kind");
}

ParameterRanges traffic_ranges(const TrafficScenario& scenario, double fraction) {
    return ParameterRanges::around(features(arz_nominal(scenario.nominal)), fraction);
}

McScenario traffic_mc(const TrafficScenario& scenario, const Controller& controller, double output_dt) {
    McScenario mc;
    mc.initial = scenario.initial_state();
    mc.draw_path = [scenario](std::uint64_t seed) { return scenario.draw_path(seed); };
    mc.controller = controller;
    mc.sim = {scenario.horizon, output_dt, 0.9};
    const auto p = arz_nominal(scenario.nominal);
    mc.t_fit_start = 1.0 / p.lambda0 + 1.0 / p.mu0;
    return mc;
}

TrafficScenario with_density_spread(const TrafficScenario& scenario, double spread_veh_km) {
    if (!(spread_veh_km > 0.0)) throw std::invalid_argument("density spread must be > 0");
    TrafficScenario s = scenario;
    const double center = scenario.nominal.rho_star * 1000.0;
    s.densities.clear();
    for (double k : {-1.0, -0.1, 0.0, 0.1, 0.9}) s.densities.push_back((center + k * spread_veh_km) / 1000.0);
    s.validate();
    return s;
}

FieldGap closed_loop_gap(const TrafficScenario& scenario, const Controller& a, const Controller& b,
                         std::uint64_t path_seed, double output_dt) {
    const auto path = scenario.draw_path(path_seed);
    const SimOptions opts{scenario.horizon, output_dt, 0.9};
    const auto ta = simulate(scenario.initial_state(), path, a, opts);
    const auto tb = simulate(scenario.initial_state(), path, b, opts);
    if (ta.snapshots.size() != tb.snapshots.size()) throw std::logic_error("closed_loop_gap: output times differ");
    FieldGap gap;
    for (std::size_t k = 0; k < ta.snapshots.size(); ++k) {
        const auto fa = reconstruct_fields(to_fields(ta.snapshots[k], scenario.nominal), scenario.nominal);
        const auto fb = reconstruct_fields(to_fields(tb.snapshots[k], scenario.nominal), scenario.nominal);
        for (std::size_t i = 0; i < fa.rho.size(); ++i) {
            gap.max_rho_veh_km = std::max(gap.max_rho_veh_km, 1000.0 * std::abs(fa.rho[i] - fb.rho[i]));
            gap.max_v_kmh = std::max(gap.max_v_kmh, 3.6 * std::abs(fa.v[i] - fb.v[i]));
        }
        // NaN from a flagged cell must not hide behind max().
        if (fa.flagged || fb.flagged) gap.max_rho_veh_km = gap.max_v_kmh = INFINITY;
    }
    return gap;
}

void write_physical_csv(std::ostream& os, const Trajectory& traj, const TrafficParams& tp) {
    os << "t,x,rho,v\n";
    const auto old = os.precision(10);
    for (const auto& s : traj.snapshots) {
        const auto f = reconstruct_fields(to_fields(s, tp), tp);
        const int m = s.cells();
        for (int i = 0; i <= m; ++i)
            os << s.t << ',' << tp.length * i / m << ',' << 1000.0 * f.rho[i] << ',' << 3.6 * f.v[i] << '\n';
    }
    os.precision(old);
}

}  // namespace jumpctl
