#include "jumpctl/config.hpp"
#include "jumpctl/experiments.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <thread>

#ifndef JUMPCTL_VERSION
#define JUMPCTL_VERSION "dev"
#endif

using namespace jumpctl;
namespace fs = std::filesystem;

namespace {

// Every key the tool understands, with its default. Flags write into the
// run.* keys so the manifest alone reproduces a run.
const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> d{
        {"road.length_m", "500"},
        {"traffic.vf_kmh", "144"},
        {"traffic.rho_max_veh_km", "160"},
        {"traffic.rho_star_veh_km", "120"},
        {"traffic.v_star_kmh", "36"},
        {"traffic.iota_s", "60"},
        {"traffic.gamma", "1"},
        {"chain.densities_veh_km", "[100, 118, 120, 122, 150]"},
        {"chain.initial_probs", "[0.02, 0.32, 0.32, 0.32, 0.02]"},
        {"sim.horizon_s", "200"},
        {"sim.grid_m", "400"},
        {"sim.output_dt_s", "1"},
        {"mc.runs", "50"},
        {"mc.seed", "2024"},
        {"demo.runs", "1"},
        {"kernels.n", "64"},
        {"dataset.samples", "1000"},
        {"dataset.grid_n", "32"},
        {"dataset.range_fraction", "0.2"},
        {"dataset.train_fraction", "0.9"},
        {"dataset.seed", "7"},
        {"operator.latent", "32"},
        {"operator.branch_hidden", "[64, 64]"},
        {"operator.trunk_hidden", "[64, 64]"},
        {"operator.epochs", "500"},
        {"operator.learning_rate", "0.003"},
        {"operator.final_lr_factor", "0.1"},
        {"operator.lbfgs_iterations", "5000"},
        {"operator.seed", "1"},
        {"bench.trials", "100"},
        {"run.controller", ""},
        {"run.model", ""},
        {"run.dataset", ""},
    };
    return d;
}

// Generic plant for `kernels` and `simulate`; absent keys fall back to the
// traffic nominal plant.
const std::vector<std::string> plant_keys{"plant.family", "plant.lambda", "plant.mu",     "plant.sigma_plus",
                                          "plant.sigma_minus", "plant.phi", "plant.rho", "plant.horizon"};

struct Flags {
    std::string command;
    std::string config;
    std::string out = "out";
    int jobs = 0;
    std::optional<int> runs;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> controller, model, dataset;
};

struct Run {
    Config cfg;
    fs::path out;
    int jobs = 1;
    std::string command;

    fs::path file(const std::string& name) const { return out / name; }

    std::ofstream open(const std::string& name) const {
        std::ofstream os(file(name));
        if (!os) throw std::runtime_error("cannot write " + file(name).string());
        return os;
    }

    void manifest() const {
        auto os = open("manifest.txt");
        os << "# jumpctl " << JUMPCTL_VERSION << "\n"
           << "# command: " << command << "\n"
           << "# eigen: " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << "\n"
           << "# compiler: " << __VERSION__ << "\n"
           << "# rerun: jumpctl " << command << " --config manifest.txt\n";
        cfg.write(os);
    }

    std::vector<int> ints(const std::string& key) const {
        std::vector<int> v;
        for (double x : cfg.get_list(key, {})) v.push_back(static_cast<int>(x));
        return v;
    }
};

Run resolve(const Flags& f) {
    Run r;
    r.command = f.command;
    for (const auto& [k, v] : defaults()) r.cfg.set(k, v);
    if (!f.config.empty()) {
        const auto user = Config::load(f.config);
        auto known = plant_keys;
        for (const auto& [k, v] : defaults()) known.push_back(k);
        user.require_known(known);
        for (const auto& [k, v] : user.entries()) r.cfg.set(k, v);
    }
    if (f.runs) r.cfg.set(f.command == "traffic-demo" ? "demo.runs" : "mc.runs", std::to_string(*f.runs));
    if (f.seed) {
        const auto key = f.command == "dataset" ? "dataset.seed" : f.command == "train" ? "operator.seed" : "mc.seed";
        r.cfg.set(key, std::to_string(*f.seed));
    }
    if (f.controller) r.cfg.set("run.controller", *f.controller);
    if (f.model) r.cfg.set("run.model", *f.model);
    if (f.dataset) r.cfg.set("run.dataset", *f.dataset);
    r.jobs = f.jobs > 0 ? f.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    r.out = f.out;
    fs::create_directories(r.out);
    return r;
}

bool has_plant(const Config& c) {
    return std::any_of(plant_keys.begin(), plant_keys.end(), [&](const std::string& k) { return c.has(k); });
}

NominalParams plant_of(const Run& r) {
    if (!has_plant(r.cfg)) return arz_nominal(build_scenario(r.cfg).nominal);
    const auto& c = r.cfg;
    const ParameterVector v{c.get_double("plant.lambda", 1.0),     c.get_double("plant.mu", 2.0),
                            c.get_double("plant.sigma_plus", 0.0), c.get_double("plant.sigma_minus", 0.0),
                            c.get_double("plant.phi", 1.0),        c.get_double("plant.rho", 0.5)};
    return expand(v, parse_profile_family(c.get_string("plant.family", "constant")));
}

std::optional<OperatorModel> model_of(const Run& r) {
    const auto path = r.cfg.get_string("run.model", "");
    if (path.empty()) return std::nullopt;
    return load_model(path);
}

ControllerKind controller_of(const Run& r, ControllerKind fallback) {
    const auto name = r.cfg.get_string("run.controller", "");
    if (name.empty()) return fallback;
    return parse_controller_kind(name);
}

Controller build_controller(const Run& r, ControllerKind kind, const NominalParams& p,
                            const std::optional<OperatorModel>& model) {
    if (kind == ControllerKind::no_kernel && !model)
        throw std::invalid_argument("controller 'no' needs --model (train one with `jumpctl train`)");
    return make_controller(kind, p, model ? &*model : nullptr, r.cfg.get_int("kernels.n", 64));
}

TrainOptions train_options(const Run& r) {
    TrainOptions o;
    o.latent = r.cfg.get_int("operator.latent", o.latent);
    o.branch_hidden = r.ints("operator.branch_hidden");
    o.trunk_hidden = r.ints("operator.trunk_hidden");
    o.epochs = r.cfg.get_int("operator.epochs", o.epochs);
    o.learning_rate = r.cfg.get_double("operator.learning_rate", o.learning_rate);
    o.final_lr_factor = r.cfg.get_double("operator.final_lr_factor", o.final_lr_factor);
    o.lbfgs_iterations = r.cfg.get_int("operator.lbfgs_iterations", o.lbfgs_iterations);
    o.seed = r.cfg.get_u64("operator.seed", o.seed);
    o.checkpoint_every = std::max(1, (o.epochs + o.lbfgs_iterations) / 50);
    o.jobs = r.jobs;
    return o;
}

KernelDataset dataset_of(const Run& r) {
    const auto dir = r.cfg.get_string("run.dataset", "");
    if (!dir.empty()) return load_dataset(dir);
    const auto sc = build_scenario(r.cfg);
    DatasetOptions o;
    o.n_samples = r.cfg.get_int("dataset.samples", o.n_samples);
    o.grid_n = r.cfg.get_int("dataset.grid_n", o.grid_n);
    o.train_fraction = r.cfg.get_double("dataset.train_fraction", o.train_fraction);
    o.jobs = r.jobs;
    return generate_dataset(traffic_ranges(sc, r.cfg.get_double("dataset.range_fraction", 0.2)), ProfileFamily::arz,
                            1.0, r.cfg.get_u64("dataset.seed", 7), o);
}

void report_errors(const Run& r, const SupErrorReport& rep, const std::string& name) {
    auto os = r.open(name);
    write_error_report(os, rep);
    write_error_report(std::cout, rep);
    std::cout << "held-out sup error (normalized): " << rep.max_norm_overall() << " over " << rep.samples
              << " samples\n";
}

void cmd_kernels(const Run& r) {
    const auto p = plant_of(r);
    KernelSolveStats stats;
    const auto K = solve_kernels(p, r.cfg.get_int("kernels.n", 64), {}, &stats);
    auto os = r.open("kernels.csv");
    write_kernel_csv(os, K);
    const auto res = kernel_residual(K);
    auto rs = r.open("residuals.csv");
    rs << "quantity,Kuu,Kuv,Kvu,Kvv\n" << std::setprecision(6);
    rs << "pde_sup";
    for (double x : res.pde_sup) rs << ',' << x;
    rs << "\npde_l2";
    for (double x : res.pde_l2) rs << ',' << x;
    // Boundary conditions pair up with the components they constrain.
    rs << "\nboundary_sup," << res.boundary_sup[2] << ',' << res.boundary_sup[0] << ',' << res.boundary_sup[1] << ','
       << res.boundary_sup[3] << '\n';
    const auto g = gain_slice(K);
    auto gs = r.open("gains.csv");
    gs << "xi,k_vu,k_vv\n" << std::setprecision(17);
    for (std::size_t j = 0; j < g.xi.size(); ++j) gs << g.xi[j] << ',' << g.k_vu[j] << ',' << g.k_vv[j] << '\n';
    std::cout << "kernels: n = " << K.grid().n() << ", " << stats.iterations << " sweeps, residual sup " << res.sup()
              << "\n";
}

void cmd_dataset(const Run& r) {
    const auto ds = dataset_of(r);
    save_dataset(ds, r.file("dataset").string());
    std::cout << "dataset: " << ds.size() << " samples (" << ds.train.size() << " train, " << ds.test.size()
              << " test), " << ds.redraws << " redraws\n";
}

void cmd_train(const Run& r) {
    const auto ds = dataset_of(r);
    const auto res = train(ds, train_options(r));
    save_model(res.model, r.file("model.bin").string());
    auto lc = r.open("loss_curve.csv");
    lc << "epoch,train_loss,test_loss,test_sup\n" << std::setprecision(10);
    for (const auto& p : res.curve) lc << p.epoch << ',' << p.train_loss << ',' << p.test_loss << ',' << p.test_sup << '\n';
    if (!ds.test.empty()) report_errors(r, sup_error(res.model, ds, ds.test), "error_report.csv");
    auto tm = r.open("timing.csv");
    tm << "train_seconds\n" << res.seconds << '\n';
    std::cout << "trained in " << res.seconds << " s\n";
}

void cmd_eval_operator(const Run& r) {
    const auto model = model_of(r);
    if (!model) throw std::invalid_argument("eval-operator needs --model");
    const auto ds = dataset_of(r);
    report_errors(r, sup_error(*model, ds, ds.test.empty() ? ds.train : ds.test), "error_report.csv");
}

void cmd_simulate(const Run& r) {
    const auto p = plant_of(r);
    const auto model = model_of(r);
    const auto ctrl = build_controller(r, controller_of(r, ControllerKind::exact_kernel), p, model);
    Snapshot init;
    const int m = r.cfg.get_int("sim.grid_m", 400);
    double horizon = r.cfg.get_double("plant.horizon", 2.0 * (1.0 / p.lambda0 + 1.0 / p.mu0));
    double dt = r.cfg.get_double("sim.output_dt_s", 1.0);
    if (has_plant(r.cfg)) {
        for (int i = 0; i <= m; ++i) {
            const double x = double(i) / m;
            init.u.push_back(std::sin(M_PI * x));
            init.v.push_back(x * (1.0 - x));
        }
        dt = horizon / 100.0;
    } else {
        auto sc = build_scenario(r.cfg);
        init = sc.initial_state();
        horizon = sc.horizon;
    }
    const auto tr = simulate(init, DeltaPath::constant(DeltaState::from_nominal(p), horizon), ctrl, {horizon, dt, 0.9});
    auto ts = r.open("trajectory.csv");
    write_trajectory_csv(ts, tr);
    auto ss = r.open("series.csv");
    write_series_csv(ss, tr);
    std::cout << "simulate (" << to_string(ctrl.kind) << "): norm " << tr.norm.front() << " -> " << tr.norm.back()
              << "\n";
}

void write_summary(const Run& r, const McResult& res, const std::string& name) {
    auto os = r.open(name);
    const auto& f = res.fit;
    os << "kappa_hat,sigma_hat,r_squared,sigma_band,n_runs,n_points,accepted,final_ratio,median_t10\n"
       << std::setprecision(10) << f.kappa_hat << ',' << f.sigma_hat << ',' << f.r_squared << ',' << f.sigma_band
       << ',' << f.n_runs << ',' << f.n_points << ',' << (f.accepted ? 1 : 0) << ','
       << res.mean_square.back() / res.mean_square.front() << ',' << res.median_t10() << '\n';
}

void cmd_mc(const Run& r) {
    const auto sc = build_scenario(r.cfg);
    const auto model = model_of(r);
    const auto kind = controller_of(r, model ? ControllerKind::no_kernel : ControllerKind::exact_kernel);
    const auto ctrl = build_controller(r, kind, arz_nominal(sc.nominal), model);
    const auto res = mc_mean_square(traffic_mc(sc, ctrl, r.cfg.get_double("sim.output_dt_s", 1.0)),
                                    r.cfg.get_int("mc.runs", 50), sc.mc_seed, r.jobs);
    auto os = r.open("decay.csv");
    write_decay_csv(os, res);
    write_summary(r, res, "summary.csv");
    std::cout << "mc (" << to_string(kind) << ", " << res.fit.n_runs << " runs): sigma_hat " << res.fit.sigma_hat
              << ", kappa_hat " << res.fit.kappa_hat << ", r^2 " << res.fit.r_squared << ", median t10 "
              << res.median_t10() << " s\n";
}

void cmd_traffic_demo(const Run& r) {
    const auto sc = build_scenario(r.cfg);
    const auto p = arz_nominal(sc.nominal);
    const auto model = model_of(r);
    const auto kind = controller_of(r, model ? ControllerKind::no_kernel : ControllerKind::exact_kernel);
    const auto ctrl = build_controller(r, kind, p, model);
    const double dt = r.cfg.get_double("sim.output_dt_s", 1.0);

    const auto chain = sc.chain();
    std::vector<double> grid;
    for (double t = 0.0; t <= sc.horizon + 1e-9; t += 0.5) grid.push_back(t);
    auto ps = r.open("probabilities.csv");
    write_probability_csv(ps, solve_kolmogorov(chain, grid), chain.initial_distribution());

    const int runs = r.cfg.get_int("demo.runs", 1);
    for (int k = 0; k < runs; ++k) {
        const std::string tag = runs == 1 ? "" : "_run" + std::to_string(k);
        const auto seed = derive_seed(sc.mc_seed, static_cast<std::uint64_t>(k));
        const auto modes = sample_path(chain, seed, sc.horizon);
        auto ms = r.open("mode_path" + tag + ".csv");
        write_mode_path_csv(ms, modes, chain.mode_values());
        const auto path = sc.delta_path(modes);
        const SimOptions opts{sc.horizon, dt, 0.9};
        auto emit = [&](const std::string& name, const Trajectory& tr) {
            auto fs = r.open(name + "_fields" + tag + ".csv");
            write_physical_csv(fs, tr, sc.nominal);
            auto ss = r.open(name + "_series" + tag + ".csv");
            write_series_csv(ss, tr);
        };
        const auto open = simulate(sc.initial_state(), path, Controller::open_loop(), opts);
        emit("open_loop", open);
        const auto closed = simulate(sc.initial_state(), path, ctrl, opts);
        emit("closed_loop", closed);
        std::cout << "run " << k << ": " << modes.jump_count() << " jumps, open-loop norm " << open.norm.back()
                  << ", closed-loop (" << to_string(kind) << ") norm " << closed.norm.back() << "\n";
        if (kind == ControllerKind::no_kernel) {
            const auto exact = simulate(sc.initial_state(), path, build_controller(r, ControllerKind::exact_kernel, p, model),
                                        opts);
            emit("exact", exact);
            auto es = r.open("field_error" + tag + ".csv");
            es << "t,x,drho,dv\n" << std::setprecision(10);
            for (std::size_t s = 0; s < closed.snapshots.size(); ++s) {
                const auto a = reconstruct_fields(to_fields(exact.snapshots[s], sc.nominal), sc.nominal);
                const auto b = reconstruct_fields(to_fields(closed.snapshots[s], sc.nominal), sc.nominal);
                const int m = closed.snapshots[s].cells();
                for (int i = 0; i <= m; ++i)
                    es << closed.snapshots[s].t << ',' << sc.nominal.length * i / m << ','
                       << 1000.0 * (a.rho[i] - b.rho[i]) << ',' << 3.6 * (a.v[i] - b.v[i]) << '\n';
            }
            const auto gap = closed_loop_gap(sc, build_controller(r, ControllerKind::exact_kernel, p, model), ctrl,
                                             seed, dt);
            std::cout << "  exact vs no: max |drho| " << gap.max_rho_veh_km << " veh/km, max |dv| " << gap.max_v_kmh
                      << " km/h\n";
        }
    }
}

template <class F>
std::vector<double> time_trials(int trials, F&& f) {
    std::vector<double> t;
    for (int i = 0; i < trials; ++i) {
        const auto a = std::chrono::steady_clock::now();
        f();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - a).count());
    }
    std::sort(t.begin(), t.end());
    return t;
}

double quantile(const std::vector<double>& sorted, double q) {
    return sorted[static_cast<std::size_t>(std::min<double>(sorted.size() - 1, std::floor(q * (sorted.size() - 1) + 0.5)))];
}

void cmd_bench_gains(const Run& r) {
    const auto sc = build_scenario(r.cfg);
    const auto p = arz_nominal(sc.nominal);
    const int n = r.cfg.get_int("kernels.n", 64);
    const int trials = r.cfg.get_int("bench.trials", 100);
    if (trials < 1) throw std::invalid_argument("bench.trials must be >= 1");
    auto model = model_of(r);
    if (!model) {
        // Inference cost depends only on the architecture.
        const auto o = train_options(r);
        model = OperatorModel(o.latent, o.branch_hidden, o.trunk_hidden, o.seed);
        std::cerr << "bench-gains: no --model given, timing an untrained network of the configured size\n";
    }
    const auto v = features(p);
    volatile double sink = 0.0;
    const auto solver = time_trials(trials, [&] { sink = sink + solve_kernels(p, n).at(Kernel::vu, n - 1, 0); });
    const auto warm = time_trials(trials, [&] { sink = sink + infer(*model, v, n).kernels.at(Kernel::vu, n - 1, 0); });
    const auto cold = time_trials(trials, [&] {
        model->clear_cache();
        sink = sink + infer(*model, v, n).kernels.at(Kernel::vu, n - 1, 0);
    });
    auto os = r.open("bench_gains.csv");
    os << "method,trials,median_s,p90_s\n" << std::setprecision(6);
    auto row = [&](const char* name, const std::vector<double>& t) {
        os << name << ',' << trials << ',' << quantile(t, 0.5) << ',' << quantile(t, 0.9) << '\n';
    };
    row("solver", solver);
    row("operator", warm);
    row("operator_cold", cold);
    std::cout << "n = " << n << ": solver median " << quantile(solver, 0.5) << " s, operator median "
              << quantile(warm, 0.5) << " s (" << quantile(solver, 0.5) / quantile(warm, 0.5) << "x), cold "
              << quantile(cold, 0.5) << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Backstepping control of Markov-jumping hyperbolic PDEs with neural-operator gains"};
    app.require_subcommand(1);
    Flags flags;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"kernels", "solve the kernel equations and write the tables"},
        {"dataset", "generate a kernel dataset around the traffic nominal plant"},
        {"train", "train the operator model"},
        {"eval-operator", "held-out sup error of a trained model"},
        {"simulate", "one deterministic closed-loop run"},
        {"mc", "Monte Carlo mean-square decay on the traffic chain"},
        {"traffic-demo", "open and closed loop on sampled density paths"},
        {"bench-gains", "time the solver against operator inference"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", flags.config, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--out", flags.out, "output directory")->capture_default_str();
        sub->add_option("--jobs", flags.jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
        sub->add_option("--runs", flags.runs, "number of runs (mc.runs, demo.runs)")->check(CLI::PositiveNumber);
        sub->add_option("--seed", flags.seed, "master seed");
        sub->add_option("--controller", flags.controller, "open | exact | no");
        sub->add_option("--model", flags.model, "trained model file");
        sub->add_option("--dataset", flags.dataset, "dataset directory");
        sub->callback([&flags, name = name] { flags.command = name; });
    }
    CLI11_PARSE(app, argc, argv);

    try {
        const auto run = resolve(flags);
        run.manifest();
        if (flags.command == "kernels") cmd_kernels(run);
        else if (flags.command == "dataset") cmd_dataset(run);
        else if (flags.command == "train") cmd_train(run);
        else if (flags.command == "eval-operator") cmd_eval_operator(run);
        else if (flags.command == "simulate") cmd_simulate(run);
        else if (flags.command == "mc") cmd_mc(run);
        else if (flags.command == "traffic-demo") cmd_traffic_demo(run);
        else if (flags.command == "bench-gains") cmd_bench_gains(run);
    } catch (const std::exception& e) {
        std::cerr << "jumpctl " << flags.command << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
