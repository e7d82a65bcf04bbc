#include "jumpctl/traffic.hpp"

#include "jumpctl/config.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace jumpctl {

namespace {

constexpr double kmh = 1.0 / 3.6;
constexpr double veh_km = 1e-3;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void TrafficParams::validate() const {
    for (double x : {length, vf, rho_m, rho_star, v_star, iota, gamma})
        require(std::isfinite(x) && x > 0.0, "traffic params: all parameters must be positive");
    require(rho_star < rho_m, "traffic params: rho* must be below rho_m");
    require(gamma * p_star() > v_star, "traffic params: gamma p* <= v* (not congested, mu0 <= 0)");
}

double TrafficParams::p_star() const { return vf * std::pow(rho_star / rho_m, gamma); }

double TrafficParams::r_coef() const { return q_star() * (1.0 / v_star - 1.0 / (gamma * p_star())); }

TrafficParams TrafficParams::with_density(double rho) const {
    TrafficParams t = *this;
    t.rho_star = rho;
    return t;
}

NominalParams arz_nominal(const TrafficParams& tp) {
    tp.validate();
    NominalParams p;
    p.lambda0 = tp.v_star / tp.length;
    p.mu0 = tp.mu_phys() / tp.length;
    p.sigma_plus0 = CouplingProfile::constant(0.0);
    const double decay = tp.length / (tp.iota * tp.v_star);
    const double iota = tp.iota;
    p.sigma_minus0 = CouplingProfile::tabulate([=](double x) { return -std::exp(-x * decay) / iota; });
    p.phi0 = (tp.v_star - tp.gamma * tp.p_star()) / tp.v_star;
    p.rho0_refl = std::exp(-decay);
    p.domain_length = tp.length;
    return p;
}

DeltaState arz_delta(const TrafficParams& tp, int mode) { return DeltaState::from_nominal(arz_nominal(tp), mode); }

StatePair riemann_transform(const StatePair& f, const TrafficParams& tp, TransformDirection direction) {
    tp.validate();
    if (f.u.size() < 2 || f.u.size() != f.v.size()) throw std::invalid_argument("riemann_transform: bad field sizes");
    const int m = static_cast<int>(f.u.size()) - 1;
    const double r = tp.r_coef();
    const double c = tp.q_star() / (tp.gamma * tp.p_star());
    const double decay = tp.length / (tp.iota * tp.v_star);
    StatePair out{std::vector<double>(m + 1), std::vector<double>(m + 1)};
    for (int i = 0; i <= m; ++i) {
        const double e = std::exp(decay * i / m);
        if (direction == TransformDirection::forward) {
            out.u[i] = e * (f.u[i] - r * f.v[i]);
            out.v[i] = c * f.v[i];
        } else {
            out.v[i] = f.v[i] / c;
            out.u[i] = f.u[i] / e + r * out.v[i];
        }
    }
    return out;
}

double arz_control(const StatePair& f, const GainSlice& g, const TrafficParams& tp) {
    if (f.u.size() < 2 || f.u.size() != f.v.size()) throw std::invalid_argument("arz_control: bad field sizes");
    const int m = static_cast<int>(f.u.size()) - 1;
    const double r = tp.r_coef();
    const double c = tp.q_star() / (tp.gamma * tp.p_star());
    const double decay = tp.length / (tp.iota * tp.v_star);
    double I_q = 0.0, I_v = 0.0;
    for (int i = 0; i <= m; ++i) {
        const double s = double(i) / m;
        const double w = (i == 0 || i == m) ? 0.5 / m : 1.0 / m;
        I_q += w * g.vu_at(s) * std::exp(decay * s) * (f.u[i] - r * f.v[i]);
        I_v += w * g.vv_at(s) * f.v[i];
    }
    return r * f.v[m] - f.u[m] + I_q + c * I_v;
}

double speed_limit_command(double riemann_input, const TrafficParams& tp) { return riemann_input / tp.rho_star; }

PhysicalFields reconstruct_fields(const StatePair& f, const TrafficParams& tp) {
    PhysicalFields out;
    for (std::size_t i = 0; i < f.u.size(); ++i) {
        const double v = tp.v_star + f.v[i];
        out.v.push_back(v);
        if (v <= 0.0) {
            ++out.flagged;
            out.rho.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            out.rho.push_back((tp.q_star() + f.u[i]) / v);
        }
    }
    return out;
}

void TrafficScenario::validate() const {
    nominal.validate();
    require(densities.size() >= 2, "traffic scenario: need at least two densities");
    require(initial_probs.size() == densities.size(), "traffic scenario: one initial probability per density");
    for (std::size_t k = 0; k < densities.size(); ++k) {
        require(k == 0 || densities[k] > densities[k - 1], "traffic scenario: densities must increase");
        nominal.with_density(densities[k]).validate();
    }
    require(horizon > 0.0, "traffic scenario: horizon must be > 0");
    require(grid_m >= 8, "traffic scenario: grid_m must be >= 8");
    require(mc_runs >= 2, "traffic scenario: mc.runs must be >= 2");
}

MarkovChain TrafficScenario::chain() const {
    const int r = static_cast<int>(densities.size());
    // 1-based indices, as in the rate table.
    auto extreme = [r](int i) { return i == 1 || i == r; };
    std::vector<double> bounds(static_cast<std::size_t>(r * r), 0.0);
    for (int i = 1; i <= r; ++i)
        for (int j = 1; j <= r; ++j) {
            if (i == j) continue;
            bounds[(i - 1) * r + (j - 1)] = extreme(i) ? 20.0 : extreme(j) ? 10.0 : 30.0;
        }
    MarkovChain::EntryFn rates = [extreme](double t, int from, int to) {
        const int i = from + 1, j = to + 1;
        if (extreme(i)) return 20.0;
        if (extreme(j)) return 10.0;
        const double c = std::cos(0.01 * (i + 5 * j) * t);
        return 10.0 + 20.0 * c * c;
    };
    return MarkovChain(densities, rates, bounds, initial_probs);
}

DeltaPath TrafficScenario::delta_path(const ModePath& density_path) const {
    std::vector<ModePath> paths{density_path};
    return product_path(paths, [this](std::span<const int> idx) {
        return arz_delta(nominal.with_density(densities[static_cast<std::size_t>(idx[0])]), idx[0]);
    });
}

DeltaPath TrafficScenario::draw_path(std::uint64_t seed) const { return delta_path(sample_path(chain(), seed, horizon)); }

StatePair TrafficScenario::initial_fields() const {
    StatePair f{std::vector<double>(grid_m + 1), std::vector<double>(grid_m + 1)};
    const double rho = nominal.rho_star, v = nominal.v_star;
    for (int i = 0; i <= grid_m; ++i) {
        // 3 pi x / L with x = i L / m.
        const double s = std::sin(3.0 * M_PI * i / grid_m);
        const double rho_x = rho * (1.0 + 0.1 * s);
        const double v_x = v * (1.0 - 0.1 * s);
        f.u[i] = rho_x * v_x - nominal.q_star();
        f.v[i] = v_x - v;
    }
    return f;
}

Snapshot TrafficScenario::initial_state() const { return to_riemann(initial_fields(), nominal); }

double TrafficScenario::transport_period() const {
    double lam = std::numeric_limits<double>::infinity(), mu = lam;
    for (double d : densities) {
        const auto tp = nominal.with_density(d);
        lam = std::min(lam, tp.v_star);
        mu = std::min(mu, tp.mu_phys());
    }
    return nominal.length / lam + nominal.length / mu;
}

TrafficScenario default_scenario() {
    TrafficScenario s;
    s.nominal = TrafficParams{};
    s.densities = {0.100, 0.118, 0.120, 0.122, 0.150};
    s.initial_probs = {0.02, 0.32, 0.32, 0.32, 0.02};
    return s;
}

const std::vector<std::string>& scenario_keys() {
    static const std::vector<std::string> keys{
        "road.length_m",        "traffic.vf_kmh",       "traffic.rho_max_veh_km", "traffic.rho_star_veh_km",
        "traffic.v_star_kmh",   "traffic.iota_s",       "traffic.gamma",          "chain.densities_veh_km",
        "chain.initial_probs",  "sim.horizon_s",        "sim.grid_m",             "mc.runs",
        "mc.seed"};
    return keys;
}

TrafficScenario build_scenario(const Config& c) {
    TrafficScenario s = default_scenario();
    auto& t = s.nominal;
    t.length = c.get_double("road.length_m", t.length);
    t.vf = c.get_double("traffic.vf_kmh", t.vf / kmh) * kmh;
    t.rho_m = c.get_double("traffic.rho_max_veh_km", t.rho_m / veh_km) * veh_km;
    t.rho_star = c.get_double("traffic.rho_star_veh_km", t.rho_star / veh_km) * veh_km;
    t.v_star = c.get_double("traffic.v_star_kmh", t.v_star / kmh) * kmh;
    t.iota = c.get_double("traffic.iota_s", t.iota);
    t.gamma = c.get_double("traffic.gamma", t.gamma);
    if (c.has("chain.densities_veh_km")) {
        s.densities.clear();
        for (double d : c.get_list("chain.densities_veh_km", {})) s.densities.push_back(d * veh_km);
    }
    s.initial_probs = c.get_list("chain.initial_probs", s.initial_probs);
    s.horizon = c.get_double("sim.horizon_s", s.horizon);
    s.grid_m = c.get_int("sim.grid_m", s.grid_m);
    s.mc_runs = c.get_int("mc.runs", s.mc_runs);
    s.mc_seed = c.get_u64("mc.seed", s.mc_seed);
    s.validate();
    return s;
}

StatePair to_fields(const Snapshot& riemann, const TrafficParams& tp) {
    return riemann_transform({riemann.u, riemann.v}, tp, TransformDirection::inverse);
}

Snapshot to_riemann(const StatePair& fields, const TrafficParams& tp, double t) {
    auto r = riemann_transform(fields, tp, TransformDirection::forward);
    return {t, std::move(r.u), std::move(r.v), 0};
}

DirectRun simulate_arz_direct(const StatePair& init, const TrafficParams& tp, const GainSlice* gains,
                              double horizon, double output_dt, double cfl) {
    tp.validate();
    const int m = static_cast<int>(init.u.size()) - 1;
    require(m >= 2 && init.v.size() == init.u.size(), "simulate_arz_direct: bad initial fields");
    require(horizon > 0.0 && output_dt > 0.0, "simulate_arz_direct: horizon and output_dt must be > 0");

    const double vs = tp.v_star, gp = tp.gamma * tp.p_star(), qs = tp.q_star();
    const double mu = gp - vs, r = tp.r_coef(), rho = tp.rho_star;
    const double dx = tp.length / m;
    const double dt_max = cfl * dx / std::max(vs, mu);
    // Linearized sources: [q~; v~]_t + A [q~; v~]_x = S [q~; v~].
    const double s11 = -gp / (tp.iota * vs), s12 = qs * (gp - vs) / (tp.iota * vs * vs);
    const double s21 = -gp / (tp.iota * qs), s22 = (gp - vs) / (tp.iota * vs);

    DirectRun run;
    StatePair w = init;
    StatePair nw = init;
    auto input = [&](const StatePair& f) { return gains ? arz_control(f, *gains, tp) : 0.0; };
    run.times.push_back(0.0);
    run.fields.push_back(w);
    run.control.push_back(input(w));

    double t = 0.0;
    const int outputs = static_cast<int>(std::ceil(horizon / output_dt - 1e-9));
    for (int o = 1; o <= outputs; ++o) {
        const double t_end = std::min(horizon, o * output_dt);
        const auto n = std::max(1L, static_cast<long>(std::ceil((t_end - t) / dt_max - 1e-9)));
        const double dt = (t_end - t) / n, k = dt / dx;
        for (long step = 0; step < n; ++step) {
            for (int i = 1; i < m; ++i) {
                const double dq_l = w.u[i] - w.u[i - 1], dv_l = w.v[i] - w.v[i - 1], dv_r = w.v[i + 1] - w.v[i];
                nw.u[i] = w.u[i] - k * (vs * (dq_l - r * dv_l) - mu * r * dv_r) + dt * (s11 * w.u[i] + s12 * w.v[i]);
                nw.v[i] = w.v[i] + k * mu * dv_r + dt * (s21 * w.u[i] + s22 * w.v[i]);
            }
            nw.u[0] = 0.0;
            nw.v[0] = w.v[0] + k * mu * (w.v[1] - w.v[0]) + dt * (s21 * w.u[0] + s22 * w.v[0]);
            // Outlet: only the right-going invariant z = q~ - r v~ arrives from inside.
            const double z_m = w.u[m] - r * w.v[m];
            const double z_l = w.u[m - 1] - r * w.v[m - 1];
            const double src = (s11 - r * s21) * w.u[m] + (s12 - r * s22) * w.v[m];
            const double z = z_m - k * vs * (z_m - z_l) + dt * src;
            double v_m = w.v[m];
            for (int it = 0; it < 50; ++it) {
                nw.v[m] = v_m;
                nw.u[m] = z + r * v_m;
                // v~ = q~/rho* + U/rho*, i.e. v~ (1 - r/rho*) = (z + U)/rho*.
                const double next = (z + input(nw)) / rho / (1.0 - r / rho);
                if (std::abs(next - v_m) <= 1e-15 * std::max(1.0, std::abs(next))) {
                    v_m = next;
                    break;
                }
                v_m = next;
            }
            nw.v[m] = v_m;
            nw.u[m] = z + r * v_m;
            std::swap(w, nw);
            t = (step + 1 == n) ? t_end : t + dt;
        }
        run.times.push_back(t);
        run.fields.push_back(w);
        run.control.push_back(input(w));
    }
    return run;
}

}  // namespace jumpctl
