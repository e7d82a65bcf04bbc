#include "jumpctl/markov.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>

namespace jumpctl {

MarkovChain::MarkovChain(std::vector<double> mode_values, RateFn rates, std::vector<double> rate_bounds,
                         std::vector<double> initial_distribution)
    : values_(std::move(mode_values)),
      rates_(std::move(rates)),
      bounds_(std::move(rate_bounds)),
      initial_(std::move(initial_distribution)) {
    const std::size_t r = values_.size();
    if (r == 0) throw std::invalid_argument("markov chain: no modes");
    if (!rates_) throw std::invalid_argument("markov chain: missing rate function");
    if (bounds_.size() != r * r) throw std::invalid_argument("markov chain: rate bound matrix has wrong size");
    if (initial_.size() != r) throw std::invalid_argument("markov chain: initial distribution has wrong size");
    double total = 0.0;
    for (double p : initial_) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("markov chain: initial probability outside [0,1]");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("markov chain: initial distribution must sum to 1");
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            const double b = bounds_[i * r + j];
            if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("markov chain: invalid rate bound");
            if (i == j && b != 0.0) throw std::invalid_argument("markov chain: diagonal rate bound must be 0");
        }
}

MarkovChain::MarkovChain(std::vector<double> mode_values, EntryFn rate, std::vector<double> rate_bounds,
                         std::vector<double> initial_distribution)
    : MarkovChain(
          std::move(mode_values),
          [rate](double t, std::span<double> out) {
              const auto r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(out.size()))));
              for (int i = 0; i < r; ++i)
                  for (int j = 0; j < r; ++j) out[static_cast<std::size_t>(i * r + j)] = i == j ? 0.0 : rate(t, i, j);
          },
          std::move(rate_bounds), std::move(initial_distribution)) {
    if (!rate) throw std::invalid_argument("markov chain: missing rate function");
    entry_ = std::move(rate);
}

MarkovChain MarkovChain::with_constant_rates(std::vector<double> mode_values, std::vector<double> rates,
                                             std::vector<double> initial_distribution) {
    const auto copy = rates;
    return MarkovChain(
        std::move(mode_values),
        [copy](double, std::span<double> out) { std::copy(copy.begin(), copy.end(), out.begin()); },
        std::move(rates), std::move(initial_distribution));
}

double MarkovChain::max_exit_bound() const {
    const int r = size();
    double m = 0.0;
    for (int j = 0; j < r; ++j) {
        double c = 0.0;
        for (int k = 0; k < r; ++k) c += rate_bound(j, k);
        m = std::max(m, c);
    }
    return m;
}

void MarkovChain::rates_at(double t, std::span<double> out) const {
    const int r = size();
    if (out.size() != static_cast<std::size_t>(r * r)) throw std::invalid_argument("rates_at: output size");
    rates_(t, out);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            double& v = out[static_cast<std::size_t>(i * r + j)];
            if (i == j) {
                if (v != 0.0) throw std::invalid_argument("markov chain: tau_ii must be 0");
                continue;
            }
            if (!(v >= 0.0)) throw std::invalid_argument("markov chain: negative transition rate");
            if (v > rate_bound(i, j) * (1.0 + 1e-12))
                throw std::invalid_argument("markov chain: transition rate exceeds its bound");
        }
}

double MarkovChain::rate_at(double t, int from, int to) const {
    const int r = size();
    if (from < 0 || from >= r || to < 0 || to >= r) throw std::out_of_range("rate_at: mode index");
    if (from == to) return 0.0;
    double v;
    if (entry_) {
        v = entry_(t, from, to);
    } else {
        std::vector<double> q(static_cast<std::size_t>(r * r));
        rates_(t, q);
        v = q[static_cast<std::size_t>(from * r + to)];
    }
    if (!(v >= 0.0)) throw std::invalid_argument("markov chain: negative transition rate");
    if (v > rate_bound(from, to) * (1.0 + 1e-12))
        throw std::invalid_argument("markov chain: transition rate exceeds its bound");
    return v;
}

int ModePath::mode_at(double t) const {
    if (jump_times.empty()) throw std::logic_error("mode path: empty");
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    const auto k = it == jump_times.begin() ? 0 : static_cast<std::size_t>(it - jump_times.begin()) - 1;
    return mode_indices[k];
}

void ModePath::validate() const {
    if (jump_times.empty() || jump_times.front() != 0.0) throw std::invalid_argument("mode path: must start at 0");
    if (jump_times.size() != mode_indices.size()) throw std::invalid_argument("mode path: size mismatch");
    for (std::size_t k = 1; k < jump_times.size(); ++k)
        if (!(jump_times[k] > jump_times[k - 1])) throw std::invalid_argument("mode path: jump times not increasing");
    if (!(horizon >= jump_times.back())) throw std::invalid_argument("mode path: jump after horizon");
}

std::vector<double> ProbabilityTrajectory::distribution(std::size_t k, std::span<const double> initial) const {
    std::vector<double> p(static_cast<std::size_t>(states), 0.0);
    for (int i = 0; i < states; ++i)
        for (int j = 0; j < states; ++j) p[j] += initial[i] * at(k, i, j);
    return p;
}

namespace {

// Q = generator: off-diagonal tau, diagonal -c_j.
void generator(const MarkovChain& chain, double t, std::vector<double>& q) {
    const int r = chain.size();
    chain.rates_at(t, q);
    for (int j = 0; j < r; ++j) {
        double c = 0.0;
        for (int k = 0; k < r; ++k) c += q[static_cast<std::size_t>(j * r + k)];
        q[static_cast<std::size_t>(j * r + j)] = -c;
    }
}

// out = P Q.
void multiply(const std::vector<double>& p, const std::vector<double>& q, int r, std::vector<double>& out) {
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            double s = 0.0;
            for (int k = 0; k < r; ++k) s += p[static_cast<std::size_t>(i * r + k)] * q[static_cast<std::size_t>(k * r + j)];
            out[static_cast<std::size_t>(i * r + j)] = s;
        }
}

}  // namespace

ProbabilityTrajectory solve_kolmogorov(const MarkovChain& chain, std::span<const double> t_grid,
                                       const KolmogorovOptions& options) {
    if (t_grid.empty() || t_grid.front() != 0.0) throw std::invalid_argument("solve_kolmogorov: grid must start at 0");
    for (std::size_t k = 1; k < t_grid.size(); ++k)
        if (!(t_grid[k] > t_grid[k - 1])) throw std::invalid_argument("solve_kolmogorov: grid must increase");

    const int r = chain.size();
    const std::size_t rr = static_cast<std::size_t>(r * r);
    const double cmax = chain.max_exit_bound();
    double step = options.max_step;
    if (cmax > 0.0) step = std::min(step, options.step_rate_fraction / cmax);

    ProbabilityTrajectory out;
    out.states = r;
    out.times.assign(t_grid.begin(), t_grid.end());

    std::vector<double> P(rr, 0.0);
    for (int i = 0; i < r; ++i) P[static_cast<std::size_t>(i * r + i)] = 1.0;
    out.matrices.push_back(P);

    std::vector<double> q0(rr), qm(rr), q1(rr), k1(rr), k2(rr), k3(rr), k4(rr), tmp(rr);
    double t = 0.0;
    generator(chain, t, q0);
    for (std::size_t k = 1; k < t_grid.size(); ++k) {
        const double t_end = t_grid[k];
        const auto substeps = static_cast<long>(std::ceil((t_end - t) / step - 1e-9));
        const double dt = (t_end - t) / static_cast<double>(std::max(1L, substeps));
        for (long s = 0; s < std::max(1L, substeps); ++s) {
            const double ts = t + static_cast<double>(s) * dt;
            generator(chain, ts + 0.5 * dt, qm);
            generator(chain, ts + dt, q1);
            multiply(P, q0, r, k1);
            for (std::size_t e = 0; e < rr; ++e) tmp[e] = P[e] + 0.5 * dt * k1[e];
            multiply(tmp, qm, r, k2);
            for (std::size_t e = 0; e < rr; ++e) tmp[e] = P[e] + 0.5 * dt * k2[e];
            multiply(tmp, qm, r, k3);
            for (std::size_t e = 0; e < rr; ++e) tmp[e] = P[e] + dt * k3[e];
            multiply(tmp, q1, r, k4);
            for (std::size_t e = 0; e < rr; ++e) P[e] += dt / 6.0 * (k1[e] + 2.0 * k2[e] + 2.0 * k3[e] + k4[e]);
            q0.swap(q1);
            for (int i = 0; i < r; ++i) {
                double sum = 0.0;
                for (int j = 0; j < r; ++j) sum += P[static_cast<std::size_t>(i * r + j)];
                out.max_row_sum_defect = std::max(out.max_row_sum_defect, std::abs(sum - 1.0));
            }
        }
        t = t_end;
        auto snap = P;
        for (double& v : snap) {
            out.min_entry_before_clip = std::min(out.min_entry_before_clip, v);
            if (v < 0.0) v = 0.0;
        }
        out.matrices.push_back(std::move(snap));
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + (index + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int draw_categorical(std::mt19937_64& rng, std::span<const double> weights, double total) {
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    int last_positive = -1;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] <= 0.0) continue;
        acc += weights[k];
        last_positive = static_cast<int>(k);
        if (u < acc) return last_positive;
    }
    return last_positive;
}

}  // namespace

ModePath sample_path(const MarkovChain& chain, std::uint64_t seed, double horizon) {
    if (!(horizon > 0.0)) throw std::invalid_argument("sample_path: horizon must be > 0");
    const int r = chain.size();
    std::mt19937_64 rng(seed);

    ModePath path;
    path.horizon = horizon;
    const auto& init = chain.initial_distribution();
    int mode = draw_categorical(rng, init, 1.0);
    path.jump_times.push_back(0.0);
    path.mode_indices.push_back(mode);

    std::vector<double> row_bound(static_cast<std::size_t>(r));
    double t = 0.0;
    for (;;) {
        double total = 0.0;
        for (int k = 0; k < r; ++k) {
            row_bound[k] = chain.rate_bound(mode, k);
            total += row_bound[k];
        }
        if (total <= 0.0) break;
        t += -std::log1p(-uniform01(rng)) / total;
        if (t >= horizon) break;
        const int target = draw_categorical(rng, row_bound, total);
        const double accept = chain.rate_at(t, mode, target) / row_bound[target];
        if (uniform01(rng) < accept) {
            mode = target;
            path.jump_times.push_back(t);
            path.mode_indices.push_back(mode);
        }
    }
    return path;
}

DeltaPath DeltaPath::constant(const DeltaState& state, double horizon) {
    DeltaPath p;
    p.palette = {state};
    p.jump_times = {0.0};
    p.palette_index = {0};
    p.horizon = horizon;
    p.lambda_bound = state.lambda;
    p.mu_bound = state.mu;
    return p;
}

std::size_t DeltaPath::interval_at(double t) const {
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    return it == jump_times.begin() ? 0 : static_cast<std::size_t>(it - jump_times.begin()) - 1;
}

DeltaPath product_path(std::span<const ModePath> paths,
                       const std::function<DeltaState(std::span<const int>)>& state_of) {
    if (paths.empty()) throw std::invalid_argument("product_path: no paths");
    const double horizon = paths.front().horizon;
    for (const auto& p : paths) {
        p.validate();
        if (std::abs(p.horizon - horizon) > 1e-12 * std::max(1.0, horizon))
            throw std::invalid_argument("product_path: horizon mismatch");
    }

    std::vector<double> times;
    for (const auto& p : paths) times.insert(times.end(), p.jump_times.begin(), p.jump_times.end());
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    DeltaPath out;
    out.horizon = horizon;
    std::map<std::vector<int>, int> seen;
    std::vector<std::size_t> cursor(paths.size(), 0);
    std::vector<int> modes(paths.size());
    for (double t : times) {
        for (std::size_t s = 0; s < paths.size(); ++s) {
            const auto& jt = paths[s].jump_times;
            while (cursor[s] + 1 < jt.size() && jt[cursor[s] + 1] <= t) ++cursor[s];
            modes[s] = paths[s].mode_indices[cursor[s]];
        }
        auto [it, inserted] = seen.try_emplace(modes, static_cast<int>(out.palette.size()));
        if (inserted) {
            out.palette.push_back(state_of(modes));
            out.palette.back().validate();
        }
        out.jump_times.push_back(t);
        out.palette_index.push_back(it->second);
    }
    for (const auto& d : out.palette) {
        out.lambda_bound = std::max(out.lambda_bound, d.lambda);
        out.mu_bound = std::max(out.mu_bound, d.mu);
    }
    return out;
}

void write_probability_csv(std::ostream& os, const ProbabilityTrajectory& traj, std::span<const double> initial) {
    os << 't';
    for (int j = 0; j < traj.states; ++j) os << ",P_" << (j + 1);
    os << '\n';
    const auto old = os.precision(12);
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        os << traj.times[k];
        for (double p : traj.distribution(k, initial)) os << ',' << p;
        os << '\n';
    }
    os.precision(old);
}

void write_mode_path_csv(std::ostream& os, const ModePath& path, std::span<const double> mode_values) {
    os << "t,mode,value\n";
    const auto old = os.precision(12);
    for (std::size_t k = 0; k < path.jump_times.size(); ++k) {
        const int m = path.mode_indices[k];
        os << path.jump_times[k] << ',' << (m + 1) << ',' << mode_values[static_cast<std::size_t>(m)] << '\n';
    }
    os << path.horizon << ',' << (path.mode_indices.back() + 1) << ','
       << mode_values[static_cast<std::size_t>(path.mode_indices.back())] << '\n';
    os.precision(old);
}

}  // namespace jumpctl
