#pragma once

#include "jumpctl/parallel.hpp"
#include "jumpctl/sim.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <vector>

namespace jumpctl {

struct LyapunovParams {
    double nu = 0.5;
    double a = 1.0;

    void validate() const;
    /// nu = 0.5, a = 1 + max phi^2 over the given modes.
    static LyapunovParams defaults_for(std::span<const double> phi_modes);
};

/// V = int e^{-nu x/lambda}/lambda alpha^2 + a e^{nu x/mu}/mu beta^2 dx on
/// target coordinates (alpha in u, beta in v), trapezoid.
double lyapunov_value(const Snapshot& alpha_beta, const DeltaState& delta, const LyapunovParams& p);

struct DecayEstimate {
    double kappa_hat = 0.0;
    double sigma_hat = 0.0;
    double r_squared = 0.0;
    /// Half-width of the 95% interval on sigma_hat.
    double sigma_band = 0.0;
    int n_runs = 0;
    int n_points = 0;
    int excluded = 0;
    bool accepted = false;
};

/// OLS of log(value) = log kappa - sigma t over points with t >= t_start.
/// Nonpositive values are skipped and counted; the fit is accepted when
/// r^2 >= 0.8 (a flat series, with nothing to explain, counts as r^2 = 1).
DecayEstimate fit_decay(std::span<const double> times, std::span<const double> values,
                        double t_start = -std::numeric_limits<double>::infinity());

/// One Monte Carlo experiment: each run draws its own DeltaPath from a
/// derived seed and simulates from the shared initial state.
struct McScenario {
    Snapshot initial;
    std::function<DeltaPath(std::uint64_t seed)> draw_path;
    Controller controller;
    SimOptions sim;
    double t_fit_start = 0.0;
    /// Optional: when set, the mean Lyapunov value is tracked on this grid.
    const KernelSet* kernels = nullptr;
    LyapunovParams lyapunov;
};

struct McResult {
    DecayEstimate fit;
    std::vector<double> times;
    std::vector<double> mean_square;
    std::vector<double> fitted;
    std::vector<double> mean_lyapunov;
    /// Per run: first time the norm is <= 10% of its initial value (NaN if never).
    std::vector<double> t10;
    /// Per run: final norm / initial norm.
    std::vector<double> final_ratio;
    double median_t10() const;
};

/// Runs in parallel on `jobs` threads (0 = hardware concurrency). Results are
/// combined in run-index order so the output does not depend on `jobs`.
McResult mc_mean_square(const McScenario& scenario, int n_runs, std::uint64_t master_seed, int jobs = 0);

/// `t,mean_square_norm,fitted_curve`.
void write_decay_csv(std::ostream& os, const McResult& result);

}  // namespace jumpctl
