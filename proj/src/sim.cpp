#include "jumpctl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace jumpctl {

const char* to_string(ControllerKind kind) {
    switch (kind) {
        case ControllerKind::open_loop: return "open";
        case ControllerKind::exact_kernel: return "exact";
        case ControllerKind::no_kernel: return "no";
    }
    return "?";
}

ControllerKind parse_controller_kind(const std::string& name) {
    if (name == "open" || name == "open_loop") return ControllerKind::open_loop;
    if (name == "exact" || name == "exact_kernel") return ControllerKind::exact_kernel;
    if (name == "no" || name == "no_kernel") return ControllerKind::no_kernel;
    throw std::invalid_argument("unknown controller '" + name + "' (open|exact|no)");
}

Controller Controller::from_gains(ControllerKind kind, GainSlice gains, double rho0) {
    if (kind == ControllerKind::open_loop) throw std::invalid_argument("open loop takes no gains");
    if (gains.xi.size() < 2 || gains.k_vu.size() != gains.xi.size() || gains.k_vv.size() != gains.xi.size())
        throw std::invalid_argument("controller: malformed gain slice");
    return {kind, std::move(gains), rho0};
}

namespace {

// Trapezoid-weighted gains on m+1 nodes: U = -rho0 u_m + sum wu_i u_i + sum wv_i v_i.
struct Quadrature {
    std::vector<double> wu;
    std::vector<double> wv;
    double rho0 = 0.0;
    bool active = false;
};

Quadrature make_quadrature(const Controller& c, int m) {
    Quadrature q;
    if (c.kind == ControllerKind::open_loop) return q;
    q.active = true;
    q.rho0 = c.rho0;
    const auto g = static_cast<int>(c.gains.xi.size()) == m + 1 ? c.gains : c.gains.resampled(m + 1);
    const double h = 1.0 / m;
    q.wu.resize(m + 1);
    q.wv.resize(m + 1);
    for (int i = 0; i <= m; ++i) {
        const double w = (i == 0 || i == m) ? 0.5 * h : h;
        q.wu[i] = w * g.k_vu[i];
        q.wv[i] = w * g.k_vv[i];
    }
    return q;
}

double apply(const Quadrature& q, const std::vector<double>& u, const std::vector<double>& v) {
    if (!q.active) return 0.0;
    double s = -q.rho0 * u.back();
    for (std::size_t i = 0; i < u.size(); ++i) s += q.wu[i] * u[i] + q.wv[i] * v[i];
    return s;
}

void check_snapshot(const Snapshot& s) {
    if (s.u.size() < 2 || s.u.size() != s.v.size()) throw std::invalid_argument("snapshot: u and v need equal size >= 2");
}

}  // namespace

double control_input(const Controller& controller, const Snapshot& snapshot) {
    check_snapshot(snapshot);
    return apply(make_quadrature(controller, snapshot.cells()), snapshot.u, snapshot.v);
}

double l2_norm(const Snapshot& s) {
    check_snapshot(s);
    const int m = s.cells();
    double acc = 0.0;
    for (int i = 0; i <= m; ++i) {
        const double w = (i == 0 || i == m) ? 0.5 : 1.0;
        acc += w * (s.u[i] * s.u[i] + s.v[i] * s.v[i]);
    }
    return std::sqrt(acc / m);
}

SimulationError::SimulationError(int step, double t)
    : std::runtime_error("simulation produced a non-finite state at step " + std::to_string(step) + " (t = " +
                         std::to_string(t) + ")"),
      step_(step),
      t_(t) {}

Trajectory simulate(const Snapshot& initial, const DeltaPath& path, const Controller& controller,
                    const SimOptions& options) {
    check_snapshot(initial);
    if (!(options.horizon > 0.0)) throw std::invalid_argument("simulate: horizon must be > 0");
    if (!(options.cfl > 0.0 && options.cfl <= 1.0)) throw std::invalid_argument("simulate: cfl must be in (0, 1]");
    if (path.palette.empty() || path.jump_times.empty()) throw std::invalid_argument("simulate: empty delta path");
    if (path.horizon + 1e-9 < options.horizon) throw std::invalid_argument("simulate: delta path shorter than horizon");

    const int m = initial.cells();
    const double dx = 1.0 / m;
    double speed = std::max(path.lambda_bound, path.mu_bound);
    for (const auto& d : path.palette) speed = std::max({speed, d.lambda, d.mu});
    const double dt_max = options.cfl * dx / speed;

    // Couplings sampled once per palette entry.
    std::vector<std::vector<double>> sp(path.palette.size()), sm(path.palette.size());
    for (std::size_t k = 0; k < path.palette.size(); ++k) {
        sp[k] = path.palette[k].sigma_plus.sample(m + 1);
        sm[k] = path.palette[k].sigma_minus.sample(m + 1);
    }

    // Event times: jumps inside the horizon, outputs, and the horizon.
    std::vector<double> events;
    for (double t : path.jump_times)
        if (t > 0.0 && t < options.horizon) events.push_back(t);
    if (options.output_dt > 0.0)
        for (int k = 1;; ++k) {
            const double t = k * options.output_dt;
            if (t >= options.horizon - 1e-12 * options.horizon) break;
            events.push_back(t);
        }
    events.push_back(options.horizon);
    std::sort(events.begin(), events.end());
    events.erase(std::unique(events.begin(), events.end()), events.end());
    std::vector<bool> is_output(events.size(), false);
    if (options.output_dt > 0.0)
        for (std::size_t e = 0; e < events.size(); ++e) {
            const double r = events[e] / options.output_dt;
            is_output[e] = std::abs(r - std::round(r)) < 1e-9;
        }
    is_output.back() = true;

    const Quadrature quad = make_quadrature(controller, m);

    Trajectory traj;
    traj.path = path;
    Snapshot s = initial;
    s.t = 0.0;
    std::size_t interval = path.interval_at(0.0);
    s.mode = path.palette[path.palette_index[interval]].mode;
    traj.snapshots.push_back(s);
    traj.times.push_back(0.0);
    traj.control.push_back(apply(quad, s.u, s.v));
    traj.norm.push_back(l2_norm(s));
    traj.mode.push_back(s.mode);

    std::vector<double> u_new(m + 1), v_new(m + 1);
    // Trapezoid end weight of K^vv(1,1) makes U linear in v_m; solved exactly.
    const double vm_self = quad.active ? quad.wv[m] : 0.0;
    if (std::abs(1.0 - vm_self) < 1e-12) throw std::invalid_argument("simulate: singular boundary closure");

    double t = 0.0;
    for (std::size_t e = 0; e < events.size(); ++e) {
        const double t_end = events[e];
        const std::size_t pidx = static_cast<std::size_t>(path.palette_index[path.interval_at(t)]);
        const DeltaState& d = path.palette[pidx];
        const auto& sigp = sp[pidx];
        const auto& sigm = sm[pidx];
        const auto n_steps = static_cast<long>(std::ceil((t_end - t) / dt_max - 1e-9));
        const double dt = (t_end - t) / static_cast<double>(std::max(1L, n_steps));
        const double cu = d.lambda * dt / dx;
        const double cv = d.mu * dt / dx;
        for (long k = 0; k < std::max(1L, n_steps); ++k) {
            for (int i = 1; i <= m; ++i) u_new[i] = s.u[i] - cu * (s.u[i] - s.u[i - 1]) + dt * sigp[i] * s.v[i];
            for (int i = 0; i < m; ++i) v_new[i] = s.v[i] + cv * (s.v[i + 1] - s.v[i]) + dt * sigm[i] * s.u[i];
            // u(0) depends only on v(0), so setting it first lets U see the
            // final left-boundary value.
            u_new[0] = d.phi * v_new[0];
            v_new[m] = 0.0;
            const double partial = apply(quad, u_new, v_new);
            v_new[m] = (d.rho_refl * u_new[m] + partial) / (1.0 - vm_self);
            const double U = partial + vm_self * v_new[m];
            s.u.swap(u_new);
            s.v.swap(v_new);
            ++traj.steps;
            t = (k + 1 == std::max(1L, n_steps)) ? t_end : t + dt;
            s.t = t;
            s.mode = d.mode;
            const double nrm = l2_norm(s);
            if (!std::isfinite(nrm) || !std::isfinite(U)) throw SimulationError(traj.steps, t);
            traj.times.push_back(t);
            traj.control.push_back(U);
            traj.norm.push_back(nrm);
            traj.mode.push_back(d.mode);
        }
        if (is_output[e]) {
            // Report the mode that holds from this instant on.
            s.mode = path.palette[path.palette_index[path.interval_at(t)]].mode;
            traj.snapshots.push_back(s);
        }
    }
    return traj;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double domain_length) {
    os << "t,x,u,v\n";
    const auto old = os.precision(10);
    for (const auto& s : traj.snapshots) {
        const int m = s.cells();
        for (int i = 0; i <= m; ++i)
            os << s.t << ',' << domain_length * i / m << ',' << s.u[i] << ',' << s.v[i] << '\n';
    }
    os.precision(old);
}

void write_series_csv(std::ostream& os, const Trajectory& traj) {
    os << "t,U,mode,norm\n";
    const auto old = os.precision(10);
    for (std::size_t k = 0; k < traj.times.size(); ++k)
        os << traj.times[k] << ',' << traj.control[k] << ',' << traj.mode[k] << ',' << traj.norm[k] << '\n';
    os.precision(old);
}

}  // namespace jumpctl
