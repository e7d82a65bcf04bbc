#pragma once

#include "jumpctl/kernels.hpp"
#include "jumpctl/markov.hpp"

#include <iosfwd>
#include <vector>

namespace jumpctl {

/// State on m+1 uniform nodes over the normalized domain [0, 1].
struct Snapshot {
    double t = 0.0;
    std::vector<double> u;
    std::vector<double> v;
    int mode = 0;

    int cells() const { return static_cast<int>(u.size()) - 1; }
};

enum class ControllerKind { open_loop, exact_kernel, no_kernel };

const char* to_string(ControllerKind kind);
ControllerKind parse_controller_kind(const std::string& name);

struct Controller {
    ControllerKind kind = ControllerKind::open_loop;
    GainSlice gains;
    double rho0 = 0.0;

    static Controller open_loop() { return {}; }
    static Controller from_gains(ControllerKind kind, GainSlice gains, double rho0);
};

/// U = -rho0 u(1) + int K^vu(1,.) u + int K^vv(1,.) v, trapezoid on the
/// snapshot grid. Gains on another grid are interpolated linearly.
double control_input(const Controller& controller, const Snapshot& snapshot);

/// Trapezoid approximation of (int u^2 + v^2 dx)^(1/2).
double l2_norm(const Snapshot& snapshot);

struct SimOptions {
    double horizon = 1.0;
    /// Snapshot cadence; <= 0 keeps only the initial and final states.
    double output_dt = 0.0;
    double cfl = 0.9;
};

struct Trajectory {
    std::vector<Snapshot> snapshots;
    /// Per-step series, starting with the initial state.
    std::vector<double> times;
    std::vector<double> control;
    std::vector<double> norm;
    std::vector<int> mode;
    DeltaPath path;
    int steps = 0;
};

class SimulationError : public std::runtime_error {
public:
    SimulationError(int step, double t);
    int step() const { return step_; }
    double time() const { return t_; }

private:
    int step_;
    double t_;
};

/// First-order upwind for u_t + lambda u_x = sigma+ v, v_t - mu v_x = sigma- u
/// with u(0) = phi v(0), v(1) = rho u(1) + U. Coefficients follow `path`; the
/// step is CFL-limited against the path's speed bounds and snapped to every
/// jump and output time. Throws SimulationError on a non-finite state.
Trajectory simulate(const Snapshot& initial, const DeltaPath& path, const Controller& controller,
                    const SimOptions& options);

/// Long format `t,x,u,v`; x is scaled by domain_length.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, double domain_length = 1.0);
/// `t,U,mode,norm` per step.
void write_series_csv(std::ostream& os, const Trajectory& traj);

}  // namespace jumpctl
