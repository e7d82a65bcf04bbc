// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "jumpctl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

using namespace jumpctl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << std::fixed << std::setprecision(1)
              << seconds_since(t0) << " s] " << std::defaultfloat << std::setprecision(6) << o.detail << std::endl;
}

std::string fmt(const char* label, double x) {
    std::ostringstream os;
    os << label << '=' << std::setprecision(4) << x << ' ';
    return os.str();
}

Outcome kolmogorov() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (double c : {0.5, 2.0, 20.0}) {
        const auto chain = MarkovChain::with_constant_rates({0.0, 1.0}, {0.0, c, c, 0.0}, {1.0, 0.0});
        std::vector<double> grid;
        for (int k = 0; k <= 500; ++k) grid.push_back(0.01 * k);
        const auto P = solve_kolmogorov(chain, grid);
        for (std::size_t k = 0; k < grid.size(); ++k)
            worst = std::max(worst, std::abs(P.at(k, 0, 0) - 0.5 * (1.0 + std::exp(-2.0 * c * grid[k]))));
    }
    const auto chain = default_scenario().chain();
    std::vector<double> grid;
    for (int k = 0; k <= 400; ++k) grid.push_back(0.5 * k);
    const auto P = solve_kolmogorov(chain, grid);
    const double secs = seconds_since(t0);
    const bool ok = worst <= 1e-8 && P.max_row_sum_defect <= 1e-10 && P.min_entry_before_clip >= -1e-12 && secs < 5.0;
    return {ok, fmt("closed_form_err", worst) + fmt("traffic_row_sum_defect", P.max_row_sum_defect) +
                    fmt("min_entry", P.min_entry_before_clip) + fmt("runtime_s", secs)};
}

Outcome sampler() {
    const auto t0 = Clock::now();
    const auto chain = default_scenario().chain();
    const std::vector<double> times{10, 50, 100, 150, 200};
    const int paths = 10000, r = chain.size();
    std::vector<std::vector<int>> counts(times.size(), std::vector<int>(r, 0));
    // Paths are consumed one at a time; storing 10^4 of them would need GBs.
    for (int k = 0; k < paths; ++k) {
        const auto path = sample_path(chain, derive_seed(99, static_cast<std::uint64_t>(k)), 200.0);
        for (std::size_t i = 0; i < times.size(); ++i) ++counts[i][path.mode_at(times[i])];
    }
    std::vector<double> grid{0.0};
    grid.insert(grid.end(), times.begin(), times.end());
    const auto P = solve_kolmogorov(chain, grid);
    double worst_z = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const auto p = P.distribution(i + 1, chain.initial_distribution());
        for (int j = 0; j < r; ++j) {
            const double sd = std::sqrt(p[j] * (1 - p[j]) / paths);
            const double freq = double(counts[i][j]) / paths;
            worst_z = std::max(worst_z, std::abs(freq - p[j]) / sd);
        }
    }
    const double secs = seconds_since(t0);
    return {worst_z <= 3.0 && secs < 60.0, fmt("max_z", worst_z) + fmt("runtime_s", secs)};
}

NominalParams constant_plant() {
    return expand({1.0, 2.0, 0.6, -0.9, 0.8, 0.3}, ProfileFamily::constant);
}

NominalParams traffic_unit_speed() {
    // Traffic coupling shape with speeds rescaled so that lambda0 = 1.
    const auto p = arz_nominal(default_scenario().nominal);
    const double s = 1.0 / p.lambda0;
    return expand({1.0, p.mu0 * s, 0.0, p.sigma_minus0(0.0) * s, p.phi0, p.rho0_refl}, ProfileFamily::arz);
}

NominalParams random_plant() {
    std::mt19937_64 rng(31);
    auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    const double phi = u(0.5, 1.5) * (u(0, 1) < 0.5 ? -1 : 1);
    return expand({u(0.5, 2.0), u(0.5, 2.0), u(-1, 1), u(-1, 1), phi, u(0.2, 1.0)}, ProfileFamily::constant);
}

Outcome finite_time() {
    const auto t0 = Clock::now();
    std::ostringstream detail;
    bool ok = true;
    int idx = 0;
    for (const auto& p : {constant_plant(), traffic_unit_speed(), random_plant()}) {
        const auto K = solve_kernels(p, 101);
        const auto ctrl = Controller::from_gains(ControllerKind::exact_kernel, gain_slice(K), p.rho0_refl);
        const int m = 400;
        Snapshot s;
        for (int i = 0; i <= m; ++i) {
            const double x = double(i) / m;
            s.u.push_back(std::sin(2 * M_PI * x) + 0.5);
            s.v.push_back(x * (1 - x));
        }
        const double tf = 1 / p.lambda0 + 1 / p.mu0, horizon = tf + 1.0;
        const auto path = DeltaPath::constant(DeltaState::from_nominal(p), horizon);
        const auto closed = simulate(s, path, ctrl, {horizon, 0.0, 0.9});
        const auto open = simulate(s, path, Controller::open_loop(), {horizon, 0.0, 0.9});
        const double n0 = closed.norm.front();
        double closed_after = 0.0, open_after = 0.0;
        for (std::size_t k = 0; k < closed.times.size(); ++k)
            if (closed.times[k] >= tf + 0.2) closed_after = std::max(closed_after, closed.norm[k] / n0);
        for (std::size_t k = 0; k < open.times.size(); ++k)
            if (open.times[k] >= tf + 0.2) open_after = std::max(open_after, open.norm[k] / n0);
        ok = ok && closed_after <= 1e-3 && open_after > 1e-3;
        detail << "set" << ++idx << "(closed=" << std::setprecision(3) << closed_after << ", open=" << open_after
               << ") ";
    }
    const double secs = seconds_since(t0);
    detail << fmt("runtime_s", secs);
    return {ok && secs < 60.0, detail.str()};
}

Outcome transform_inverse() {
    const auto K = solve_kernels(traffic_unit_speed(), 128);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        StatePair s{std::vector<double>(128), std::vector<double>(128)};
        for (int i = 0; i < 128; ++i) {
            s.u[i] = g(rng);
            s.v[i] = g(rng);
        }
        const auto back = backstepping_transform(backstepping_transform(s, K, TransformDirection::forward), K,
                                                 TransformDirection::inverse);
        for (int i = 0; i < 128; ++i)
            worst = std::max({worst, std::abs(back.u[i] - s.u[i]), std::abs(back.v[i] - s.v[i])});
    }
    return {worst <= 1e-8, fmt("sup_err", worst)};
}

struct Trained {
    KernelDataset ds;
    OperatorModel model;
    OperatorModel small_model;
    SupErrorReport report;
    SupErrorReport small_report;
};
std::optional<Trained> trained;

TrainOptions budget(int epochs, int lbfgs) {
    TrainOptions o;
    o.epochs = epochs;
    o.learning_rate = 3e-3;
    o.lbfgs_iterations = lbfgs;
    o.checkpoint_every = 0;
    return o;
}

Outcome operator_quality() {
    const auto sc = default_scenario();
    DatasetOptions dopt;  // 1000 samples, n = 32, 900/100 split
    Trained t;
    t.ds = generate_dataset(traffic_ranges(sc, 0.2), ProfileFamily::arz, 1.0, 7, dopt);
    const auto res = train(t.ds, budget(500, 5000));
    t.model = res.model;
    t.report = sup_error(t.model, t.ds, t.ds.test);
    std::cout << "  operator error report (" << t.ds.train.size() << " train / " << t.ds.test.size()
              << " held-out samples, n = " << t.ds.n << "):\n";
    std::ostringstream table;
    write_error_report(table, t.report);
    std::istringstream lines(table.str());
    for (std::string line; std::getline(lines, line);) std::cout << "    " << line << "\n";
    const double sup = t.report.max_norm_overall();
    const bool ok = sup <= 1e-2 && res.seconds < 1800.0 && t.ds.train.size() == 900 && t.ds.test.size() == 100;
    trained = std::move(t);
    return {ok, fmt("sup_norm_max", sup) + fmt("train_s", res.seconds)};
}

Outcome speedup() {
    if (!trained) return {false, "no trained model"};
    const auto p = arz_nominal(default_scenario().nominal);
    const int n = 64, trials = 100;
    auto median = [&](const std::function<double()>& f) {
        std::vector<double> t;
        volatile double sink = 0.0;
        for (int i = 0; i < trials; ++i) {
            const auto a = Clock::now();
            sink = sink + f();
            t.push_back(seconds_since(a));
        }
        std::nth_element(t.begin(), t.begin() + trials / 2, t.end());
        return t[trials / 2];
    };
    const double solver = median([&] { return solve_kernels(p, n).at(Kernel::vu, n - 1, 0); });
    const auto v = features(p);
    const double op = median([&] { return infer(trained->model, v, n).kernels.at(Kernel::vu, n - 1, 0); });
    return {solver / op >= 10.0, fmt("solver_median_s", solver) + fmt("operator_median_s", op) +
                                     fmt("speedup", solver / op)};
}

Controller no_controller(const OperatorModel& m) {
    return make_controller(ControllerKind::no_kernel, arz_nominal(default_scenario().nominal), &m, 64);
}

Outcome mean_square() {
    if (!trained) return {false, "no trained model"};
    const auto sc = default_scenario();
    const auto t0 = Clock::now();
    const auto res = mc_mean_square(traffic_mc(sc, no_controller(trained->model)), 50, sc.mc_seed);
    const double secs = seconds_since(t0);
    const double final_ratio = res.mean_square.back() / res.mean_square.front();
    const double t10 = res.median_t10();
    const bool ok = res.fit.sigma_hat > 0 && res.fit.r_squared >= 0.8 && final_ratio <= 0.05 && t10 >= 60 &&
                    t10 <= 180 && secs < 900;
    return {ok, fmt("sigma_hat", res.fit.sigma_hat) + fmt("kappa_hat", res.fit.kappa_hat) +
                    fmt("r2", res.fit.r_squared) + fmt("final_ratio", final_ratio) + fmt("median_t10_s", t10) +
                    fmt("runtime_s", secs)};
}

Outcome closed_loop_gap_trend() {
    if (!trained) return {false, "no trained model"};
    auto& t = *trained;
    const auto res = train(t.ds, budget(500, 500));
    t.small_model = res.model;
    t.small_report = sup_error(t.small_model, t.ds, t.ds.test);
    const auto sc = default_scenario();
    const auto exact = make_controller(ControllerKind::exact_kernel, arz_nominal(sc.nominal), nullptr, 64);
    auto gap_of = [&](const OperatorModel& m) {
        FieldGap worst;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto g = closed_loop_gap(sc, exact, no_controller(m), derive_seed(sc.mc_seed, seed));
            worst.max_rho_veh_km = std::max(worst.max_rho_veh_km, g.max_rho_veh_km);
            worst.max_v_kmh = std::max(worst.max_v_kmh, g.max_v_kmh);
        }
        return worst;
    };
    const auto small = gap_of(t.small_model), large = gap_of(t.model);
    const double e_small = t.small_report.max_norm_overall(), e_large = t.report.max_norm_overall();
    const bool finite = std::isfinite(small.max_rho_veh_km) && std::isfinite(small.max_v_kmh) &&
                        std::isfinite(large.max_rho_veh_km) && std::isfinite(large.max_v_kmh);
    const bool ok = finite && e_large < e_small && large.max_rho_veh_km < small.max_rho_veh_km &&
                    large.max_v_kmh < small.max_v_kmh;
    return {ok, fmt("sup_err_small", e_small) + fmt("drho_small", small.max_rho_veh_km) +
                    fmt("dv_small", small.max_v_kmh) + fmt("sup_err_large", e_large) +
                    fmt("drho_large", large.max_rho_veh_km) + fmt("dv_large", large.max_v_kmh)};
}

Outcome robustness() {
    if (!trained) return {false, "no trained model"};
    const auto sc = default_scenario();
    const auto ctrl = no_controller(trained->model);
    std::vector<double> sigma;
    std::string detail;
    for (double spread : {2.0, 20.0, 40.0}) {
        const auto res = mc_mean_square(traffic_mc(with_density_spread(sc, spread), ctrl), 50, sc.mc_seed);
        sigma.push_back(res.fit.sigma_hat);
        detail += fmt(("sigma_hat(+-" + std::to_string(int(spread)) + ")").c_str(), res.fit.sigma_hat);
    }
    return {sigma[0] >= sigma[1] && sigma[1] >= sigma[2], detail};
}

}  // namespace

int main() {
    criterion("kolmogorov_closed_form_and_row_sums", kolmogorov);
    criterion("sampler_solver_agreement_3sigma", sampler);
    criterion("kernel_finite_time_convergence", finite_time);
    criterion("transform_invertibility", transform_inverse);
    criterion("operator_heldout_sup_error", operator_quality);
    criterion("operator_speedup_n64", speedup);
    criterion("mean_square_stabilization_no_gains", mean_square);
    criterion("no_vs_exact_gap_shrinks_with_training", closed_loop_gap_trend);
    criterion("robustness_trend_density_spread", robustness);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
