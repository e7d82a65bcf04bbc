#include "jumpctl/stability.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace jumpctl {

void LyapunovParams::validate() const {
    if (!(nu > 0.0) || !(a > 0.0)) throw std::invalid_argument("lyapunov params: nu and a must be > 0");
}

LyapunovParams LyapunovParams::defaults_for(std::span<const double> phi_modes) {
    double m = 0.0;
    for (double p : phi_modes) m = std::max(m, p * p);
    return {0.5, 1.0 + m};
}

double lyapunov_value(const Snapshot& ab, const DeltaState& d, const LyapunovParams& p) {
    if (!(d.lambda > 0.0 && d.mu > 0.0)) throw std::invalid_argument("lyapunov_value: speeds must be > 0");
    const int m = ab.cells();
    double acc = 0.0;
    for (int i = 0; i <= m; ++i) {
        const double x = double(i) / m;
        const double w = (i == 0 || i == m) ? 0.5 : 1.0;
        acc += w * (std::exp(-p.nu * x / d.lambda) / d.lambda * ab.u[i] * ab.u[i] +
                    p.a * std::exp(p.nu * x / d.mu) / d.mu * ab.v[i] * ab.v[i]);
    }
    return acc / m;
}

DecayEstimate fit_decay(std::span<const double> times, std::span<const double> values, double t_start) {
    if (times.size() != values.size()) throw std::invalid_argument("fit_decay: size mismatch");
    DecayEstimate e;
    double st = 0, sy = 0;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] < t_start) continue;
        if (!(values[k] > 0.0) || !std::isfinite(values[k])) {
            ++e.excluded;
            continue;
        }
        pts.emplace_back(times[k], std::log(values[k]));
        st += times[k];
        sy += pts.back().second;
    }
    e.n_points = static_cast<int>(pts.size());
    if (pts.size() < 2) return e;
    const double n = static_cast<double>(pts.size());
    const double tm = st / n, ym = sy / n;
    double stt = 0, sty = 0, syy = 0;
    for (auto [t, y] : pts) {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    if (stt == 0.0) return e;
    const double slope = sty / stt;
    const double intercept = ym - slope * tm;
    e.sigma_hat = -slope;
    e.kappa_hat = std::exp(intercept);
    // Relative threshold: a series that is flat up to rounding has nothing to explain.
    const double flat = 1e-24 * n * std::max(1.0, ym * ym);
    double ss_res = 0.0;
    for (auto [t, y] : pts) {
        const double r = y - (intercept + slope * t);
        ss_res += r * r;
    }
    e.r_squared = syy <= flat ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    if (pts.size() > 2) e.sigma_band = 1.96 * std::sqrt(ss_res / (n - 2) / stt);
    e.accepted = e.r_squared >= 0.8;
    return e;
}

namespace {

std::vector<double> resample(const std::vector<double>& f, int nodes) {
    const int m = static_cast<int>(f.size()) - 1;
    std::vector<double> out(nodes);
    for (int i = 0; i < nodes; ++i) {
        const double s = double(i) * m / (nodes - 1);
        const int k = std::min(m - 1, static_cast<int>(s));
        const double w = s - k;
        out[i] = (1 - w) * f[k] + w * f[k + 1];
    }
    return out;
}

struct RunOutput {
    std::vector<double> times;
    std::vector<double> square;
    std::vector<double> lyapunov;
    double t10 = 0.0;
    double final_ratio = 0.0;
};

}  // namespace

double McResult::median_t10() const {
    std::vector<double> v;
    for (double t : t10) v.push_back(std::isnan(t) ? std::numeric_limits<double>::infinity() : t);
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

McResult mc_mean_square(const McScenario& sc, int n_runs, std::uint64_t master_seed, int jobs) {
    if (n_runs < 2) throw std::invalid_argument("mc_mean_square: need at least 2 runs");
    if (!sc.draw_path) throw std::invalid_argument("mc_mean_square: missing path generator");
    if (!(sc.sim.output_dt > 0.0)) throw std::invalid_argument("mc_mean_square: output_dt must be > 0");
    if (sc.kernels) sc.lyapunov.validate();

    std::vector<RunOutput> runs(static_cast<std::size_t>(n_runs));
    parallel_for(n_runs, jobs, [&](int r) {
        const auto path = sc.draw_path(derive_seed(master_seed, static_cast<std::uint64_t>(r)));
        const auto traj = simulate(sc.initial, path, sc.controller, sc.sim);
        RunOutput& out = runs[static_cast<std::size_t>(r)];
        for (const auto& s : traj.snapshots) {
            out.times.push_back(s.t);
            const double n = l2_norm(s);
            out.square.push_back(n * n);
            if (sc.kernels) {
                const int nk = sc.kernels->grid().n();
                const StatePair st{resample(s.u, nk), resample(s.v, nk)};
                const auto ab = backstepping_transform(st, *sc.kernels, TransformDirection::forward);
                Snapshot target{s.t, ab.u, ab.v, s.mode};
                out.lyapunov.push_back(lyapunov_value(target, path.at(s.t), sc.lyapunov));
            }
        }
        const double n0 = traj.norm.front();
        out.t10 = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t k = 0; k < traj.norm.size(); ++k)
            if (traj.norm[k] <= 0.1 * n0) {
                out.t10 = traj.times[k];
                break;
            }
        out.final_ratio = n0 > 0.0 ? traj.norm.back() / n0 : 0.0;
    });

    McResult res;
    res.times = runs.front().times;
    res.mean_square.assign(res.times.size(), 0.0);
    if (sc.kernels) res.mean_lyapunov.assign(res.times.size(), 0.0);
    for (const auto& r : runs) {
        if (r.times.size() != res.times.size()) throw std::logic_error("mc_mean_square: runs disagree on output times");
        for (std::size_t k = 0; k < res.times.size(); ++k) {
            res.mean_square[k] += r.square[k] / n_runs;
            if (sc.kernels) res.mean_lyapunov[k] += r.lyapunov[k] / n_runs;
        }
        res.t10.push_back(r.t10);
        res.final_ratio.push_back(r.final_ratio);
    }
    res.fit = fit_decay(res.times, res.mean_square, sc.t_fit_start);
    res.fit.n_runs = n_runs;
    for (double t : res.times) res.fitted.push_back(res.fit.kappa_hat * std::exp(-res.fit.sigma_hat * t));
    return res;
}

void write_decay_csv(std::ostream& os, const McResult& r) {
    os << "t,mean_square_norm,fitted_curve\n";
    const auto old = os.precision(12);
    for (std::size_t k = 0; k < r.times.size(); ++k)
        os << r.times[k] << ',' << r.mean_square[k] << ',' << r.fitted[k] << '\n';
    os.precision(old);
}

}  // namespace jumpctl
