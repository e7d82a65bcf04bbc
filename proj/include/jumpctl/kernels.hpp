#pragma once

#include "jumpctl/params.hpp"

#include <array>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace jumpctl {

/// Uniform nodes (x_i, xi_j), 0 <= j <= i < n, on the triangle
/// 0 <= xi <= x <= 1 with spacing h = 1/(n-1). Storage is row-major over the
/// triangle: node (i, j) lives at i(i+1)/2 + j.
class TriangleGrid {
public:
    explicit TriangleGrid(int n);

    int n() const { return n_; }
    double h() const { return h_; }
    std::size_t size() const { return static_cast<std::size_t>(n_) * (n_ + 1) / 2; }
    std::size_t index(int i, int j) const {
        return static_cast<std::size_t>(i) * (i + 1) / 2 + static_cast<std::size_t>(j);
    }
    double coord(int i) const { return i == n_ - 1 ? 1.0 : i * h_; }

    friend bool operator==(const TriangleGrid&, const TriangleGrid&) = default;

private:
    int n_;
    double h_;
};

enum class Kernel { uu = 0, uv = 1, vu = 2, vv = 3 };
inline constexpr std::array<Kernel, 4> all_kernels{Kernel::uu, Kernel::uv, Kernel::vu, Kernel::vv};
const char* kernel_name(Kernel k);

/// The four backstepping kernels tabulated on a TriangleGrid, together with
/// the nominal plant they were computed for.
class KernelSet {
public:
    KernelSet(TriangleGrid grid, NominalParams nominal);

    const TriangleGrid& grid() const { return grid_; }
    const NominalParams& nominal() const { return nominal_; }

    std::vector<double>& table(Kernel k) { return tables_[static_cast<int>(k)]; }
    const std::vector<double>& table(Kernel k) const { return tables_[static_cast<int>(k)]; }

    double at(Kernel k, int i, int j) const { return table(k)[grid_.index(i, j)]; }

    /// Piecewise-linear interpolation on the triangulation obtained by cutting
    /// each grid cell along its (1,1) diagonal. Points are clamped into the
    /// triangle.
    double interpolate(Kernel k, double x, double xi) const;

    /// Finite-difference partials at a node: central inside, first-order
    /// one-sided where a neighbour would leave the triangle.
    double d_dx(Kernel k, int i, int j) const;
    double d_dxi(Kernel k, int i, int j) const;
    /// Interpolated partials at an arbitrary point.
    double d_dx_at(Kernel k, double x, double xi) const;
    double d_dxi_at(Kernel k, double x, double xi) const;

    double sup_abs(Kernel k) const;

    /// Same kernels on a different node count, by interpolation.
    KernelSet resampled(int n) const;

private:
    TriangleGrid grid_;
    NominalParams nominal_;
    std::array<std::vector<double>, 4> tables_;
};

/// Control gains K^{vu}(1, .) and K^{vv}(1, .) on the kernel grid's xi nodes.
struct GainSlice {
    std::vector<double> xi;
    std::vector<double> k_vu;
    std::vector<double> k_vv;

    double vu_at(double s) const;
    double vv_at(double s) const;
    /// Linear interpolation onto `nodes` uniform points over [0, 1].
    GainSlice resampled(int nodes) const;
    double sup_abs() const;
};

struct KernelSolverOptions {
    int max_iterations = 200;
    double tolerance = 1e-10;
};

class KernelConvergenceError : public std::runtime_error {
public:
    KernelConvergenceError(int iterations, double last_change);
    int iterations() const { return iterations_; }
    double last_change() const { return last_change_; }

private:
    int iterations_;
    double last_change_;
};

struct KernelSolveStats {
    int iterations = 0;
    double last_change = 0.0;
};

/// Solves the kernel equations
///   lambda0 (K^uu_x + K^uu_xi) = -sigma_minus0(xi) K^uv
///   lambda0 K^uv_x - mu0 K^uv_xi = -sigma_plus0(xi) K^uu
///   mu0 K^vu_x - lambda0 K^vu_xi =  sigma_minus0(xi) K^vv
///   mu0 (K^vv_x + K^vv_xi)       =  sigma_plus0(xi) K^vu
/// with K^uv(x,x) = sigma_plus0(x)/(lambda0+mu0), K^vu(x,x) = -sigma_minus0(x)/(lambda0+mu0),
/// K^uu(x,0) = mu0/(lambda0 phi0) K^uv(x,0), K^vv(x,0) = lambda0 phi0/mu0 K^vu(x,0),
/// by successive approximations of the integral form along characteristics.
///
/// Requires n >= 8 and phi0 != 0. Throws KernelConvergenceError when the
/// sup-change between sweeps is still above tolerance after max_iterations.
KernelSet solve_kernels(const NominalParams& nominal, int n,
                        const KernelSolverOptions& options = {},
                        KernelSolveStats* stats = nullptr);

/// Residuals of the kernel equations, each PDE divided by its x-derivative
/// speed so the numbers are in units of kernel slope. Diagonal and edge
/// conditions are absolute differences.
struct ResidualReport {
    std::array<double, 4> pde_sup{};
    std::array<double, 4> pde_l2{};
    /// K^uv diagonal, K^vu diagonal, K^uu edge, K^vv edge.
    std::array<double, 4> boundary_sup{};

    double sup() const;
    double pde_sup_max() const;
};

ResidualReport kernel_residual(const KernelSet& kernels);

GainSlice gain_slice(const KernelSet& kernels);

struct StatePair {
    std::vector<double> u;
    std::vector<double> v;
};

enum class TransformDirection { forward, inverse };

/// forward: (u, v) -> (alpha, beta) with trapezoid quadrature of the Volterra
/// integrals; inverse: exact inverse of that discrete map by forward
/// substitution in x. State vectors must have kernels.grid().n() entries.
StatePair backstepping_transform(const StatePair& state, const KernelSet& kernels,
                                 TransformDirection direction);

/// CSV with header `x,xi,Kuu,Kuv,Kvu,Kvv`, rows in triangle storage order.
void write_kernel_csv(std::ostream& os, const KernelSet& kernels);
KernelSet read_kernel_csv(std::istream& is, const NominalParams& nominal);

}  // namespace jumpctl
