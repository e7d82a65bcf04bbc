#pragma once

#include "jumpctl/params.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace jumpctl {

/// Finite-state continuous-time Markov chain with time-varying transition
/// rates tau_{kj}(t) (row k = from, column j = to).
class MarkovChain {
public:
    /// Fills the r*r row-major rate matrix at time t.
    using RateFn = std::function<void(double t, std::span<double> rates)>;
    /// Single entry tau_{from,to}(t).
    using EntryFn = std::function<double(double t, int from, int to)>;

    /// rate_bounds: r*r row-major constants with tau_{kj}(t) <= bound_{kj}.
    MarkovChain(std::vector<double> mode_values, RateFn rates, std::vector<double> rate_bounds,
                std::vector<double> initial_distribution);
    MarkovChain(std::vector<double> mode_values, EntryFn rate, std::vector<double> rate_bounds,
                std::vector<double> initial_distribution);

    static MarkovChain with_constant_rates(std::vector<double> mode_values, std::vector<double> rates,
                                           std::vector<double> initial_distribution);

    int size() const { return static_cast<int>(values_.size()); }
    const std::vector<double>& mode_values() const { return values_; }
    const std::vector<double>& initial_distribution() const { return initial_; }
    double rate_bound(int from, int to) const { return bounds_[static_cast<std::size_t>(from * size() + to)]; }
    /// max_j sum_k bound_{jk}.
    double max_exit_bound() const;

    /// Rates at t, validated: nonnegative, zero diagonal, within bounds.
    void rates_at(double t, std::span<double> out) const;
    /// One validated entry; cheap when the chain was built from an EntryFn.
    double rate_at(double t, int from, int to) const;

private:
    std::vector<double> values_;
    RateFn rates_;
    EntryFn entry_;
    std::vector<double> bounds_;
    std::vector<double> initial_;
};

/// Right-continuous piecewise-constant realization: mode_indices[k] holds on
/// [jump_times[k], jump_times[k+1]).
struct ModePath {
    std::vector<double> jump_times;
    std::vector<int> mode_indices;
    double horizon = 0.0;

    int mode_at(double t) const;
    std::size_t jump_count() const { return jump_times.empty() ? 0 : jump_times.size() - 1; }
    void validate() const;
};

/// Transition matrices P(0, t_k), each r*r row-major.
struct ProbabilityTrajectory {
    int states = 0;
    std::vector<double> times;
    std::vector<std::vector<double>> matrices;
    /// Most negative entry seen before clipping.
    double min_entry_before_clip = 0.0;
    /// Largest |row sum - 1| over all solver steps.
    double max_row_sum_defect = 0.0;

    double at(std::size_t k, int i, int j) const { return matrices[k][static_cast<std::size_t>(i * states + j)]; }
    /// initial^T P(0, t_k).
    std::vector<double> distribution(std::size_t k, std::span<const double> initial) const;
};

struct KolmogorovOptions {
    double max_step = 1e-2;
    /// Step is also capped at step_rate_fraction / (largest exit-rate bound).
    double step_rate_fraction = 1e-2;
};

/// Integrates dP/dt = P Q(t), P(0) = I with classical RK4 on fixed substeps.
/// t_grid must start at 0 and increase.
ProbabilityTrajectory solve_kolmogorov(const MarkovChain& chain, std::span<const double> t_grid,
                                       const KolmogorovOptions& options = {});

/// Exact sampling by thinning against the rate bounds. Deterministic in seed.
ModePath sample_path(const MarkovChain& chain, std::uint64_t seed, double horizon);

/// splitmix64 finalizer applied to master + (index+1) * golden gamma: the
/// per-run seed used by every Monte Carlo driver.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Piecewise-constant DeltaState over [0, horizon]. Distinct tuples are kept
/// once in `palette`; each interval refers to its palette entry.
struct DeltaPath {
    std::vector<DeltaState> palette;
    std::vector<double> jump_times;
    std::vector<int> palette_index;
    double horizon = 0.0;
    /// Speed bounds used for the time step; at least the palette maxima.
    double lambda_bound = 0.0;
    double mu_bound = 0.0;

    static DeltaPath constant(const DeltaState& state, double horizon);

    std::size_t interval_at(double t) const;
    const DeltaState& at(double t) const { return palette[palette_index[interval_at(t)]]; }
    std::size_t interval_count() const { return jump_times.size(); }
};

/// Merges one ModePath per symbol: jump times are the sorted union, and each
/// interval carries state_of(per-symbol mode indices).
DeltaPath product_path(std::span<const ModePath> paths,
                       const std::function<DeltaState(std::span<const int>)>& state_of);

/// `t,P_1,...,P_r` with P_j = (initial^T P(0,t))_j.
void write_probability_csv(std::ostream& os, const ProbabilityTrajectory& traj,
                           std::span<const double> initial);
/// `t,mode,value` at every jump time (and t = 0).
void write_mode_path_csv(std::ostream& os, const ModePath& path, std::span<const double> mode_values);

}  // namespace jumpctl
