#include "jumpctl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace jumpctl {

TriangleGrid::TriangleGrid(int n) : n_(n), h_(n > 1 ? 1.0 / (n - 1) : 1.0) {
    if (n < 2) throw std::invalid_argument("triangle grid: need n >= 2");
}

const char* kernel_name(Kernel k) {
    switch (k) {
        case Kernel::uu: return "Kuu";
        case Kernel::uv: return "Kuv";
        case Kernel::vu: return "Kvu";
        case Kernel::vv: return "Kvv";
    }
    return "?";
}

KernelSet::KernelSet(TriangleGrid grid, NominalParams nominal)
    : grid_(grid), nominal_(std::move(nominal)) {
    for (auto& t : tables_) t.assign(grid_.size(), 0.0);
}

namespace {

// Locates (x, xi) in the triangulated grid and returns the three vertices and
// barycentric weights of the containing triangle.
struct Stencil {
    int i[3];
    int j[3];
    double w[3];
};

Stencil locate(const TriangleGrid& g, double x, double xi) {
    const int n = g.n();
    x = std::clamp(x, 0.0, 1.0);
    xi = std::clamp(xi, 0.0, x);
    const double s = x * (n - 1);
    const double t = xi * (n - 1);
    const int i = std::min(static_cast<int>(s), n - 2);
    const int j = std::min(static_cast<int>(t), i);
    const double a = std::clamp(s - i, 0.0, 1.0);
    const double b = std::clamp(t - j, 0.0, 1.0);
    if (b <= a || j == i) {
        const double bb = std::min(a, b);
        return {{i, i + 1, i + 1}, {j, j, j + 1}, {1.0 - a, a - bb, bb}};
    }
    return {{i, i, i + 1}, {j, j + 1, j + 1}, {1.0 - b, b - a, a}};
}

}  // namespace

double KernelSet::interpolate(Kernel k, double x, double xi) const {
    const Stencil st = locate(grid_, x, xi);
    const auto& t = table(k);
    double v = 0.0;
    for (int q = 0; q < 3; ++q) v += st.w[q] * t[grid_.index(st.i[q], st.j[q])];
    return v;
}

double KernelSet::d_dx(Kernel k, int i, int j) const {
    const int n = grid_.n();
    const double h = grid_.h();
    const bool fwd = i + 1 <= n - 1;
    const bool bwd = j <= i - 1;
    if (fwd && bwd) return (at(k, i + 1, j) - at(k, i - 1, j)) / (2.0 * h);
    if (fwd) return (at(k, i + 1, j) - at(k, i, j)) / h;
    if (bwd) return (at(k, i, j) - at(k, i - 1, j)) / h;
    // Corner (n-1, n-1): x-difference one row below the diagonal.
    return (at(k, i, j - 1) - at(k, i - 1, j - 1)) / h;
}

double KernelSet::d_dxi(Kernel k, int i, int j) const {
    const double h = grid_.h();
    const bool up = j + 1 <= i;
    const bool down = j >= 1;
    if (up && down) return (at(k, i, j + 1) - at(k, i, j - 1)) / (2.0 * h);
    if (up) return (at(k, i, j + 1) - at(k, i, j)) / h;
    if (down) return (at(k, i, j) - at(k, i, j - 1)) / h;
    // Corner (0, 0): xi-difference one column to the right.
    return (at(k, i + 1, j + 1) - at(k, i + 1, j)) / h;
}

double KernelSet::d_dx_at(Kernel k, double x, double xi) const {
    const Stencil st = locate(grid_, x, xi);
    double v = 0.0;
    for (int q = 0; q < 3; ++q) v += st.w[q] * d_dx(k, st.i[q], st.j[q]);
    return v;
}

double KernelSet::d_dxi_at(Kernel k, double x, double xi) const {
    const Stencil st = locate(grid_, x, xi);
    double v = 0.0;
    for (int q = 0; q < 3; ++q) v += st.w[q] * d_dxi(k, st.i[q], st.j[q]);
    return v;
}

double KernelSet::sup_abs(Kernel k) const {
    double m = 0.0;
    for (double v : table(k)) m = std::max(m, std::abs(v));
    return m;
}

KernelSet KernelSet::resampled(int n) const {
    KernelSet out(TriangleGrid(n), nominal_);
    const auto& g = out.grid();
    for (Kernel k : all_kernels) {
        auto& t = out.table(k);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) t[g.index(i, j)] = interpolate(k, g.coord(i), g.coord(j));
    }
    return out;
}

namespace {

double linear_at(const std::vector<double>& xs, const std::vector<double>& ys, double s) {
    if (ys.size() == 1) return ys[0];
    const auto n = xs.size();
    s = std::clamp(s, xs.front(), xs.back());
    auto it = std::upper_bound(xs.begin(), xs.end(), s);
    std::size_t k = it == xs.begin() ? 0 : static_cast<std::size_t>(it - xs.begin()) - 1;
    k = std::min(k, n - 2);
    const double w = (s - xs[k]) / (xs[k + 1] - xs[k]);
    return (1.0 - w) * ys[k] + w * ys[k + 1];
}

}  // namespace

double GainSlice::vu_at(double s) const { return linear_at(xi, k_vu, s); }
double GainSlice::vv_at(double s) const { return linear_at(xi, k_vv, s); }

GainSlice GainSlice::resampled(int nodes) const {
    if (nodes < 2) throw std::invalid_argument("gain slice: need at least 2 nodes");
    GainSlice out;
    out.xi.resize(nodes);
    out.k_vu.resize(nodes);
    out.k_vv.resize(nodes);
    for (int k = 0; k < nodes; ++k) {
        const double s = k == nodes - 1 ? 1.0 : static_cast<double>(k) / (nodes - 1);
        out.xi[k] = s;
        out.k_vu[k] = vu_at(s);
        out.k_vv[k] = vv_at(s);
    }
    return out;
}

double GainSlice::sup_abs() const {
    double m = 0.0;
    for (double v : k_vu) m = std::max(m, std::abs(v));
    for (double v : k_vv) m = std::max(m, std::abs(v));
    return m;
}

KernelConvergenceError::KernelConvergenceError(int iterations, double last_change)
    : std::runtime_error([&] {
          std::ostringstream os;
          os << "kernel solver did not converge after " << iterations
             << " sweeps; last sup-change " << last_change;
          return os.str();
      }()),
      iterations_(iterations),
      last_change_(last_change) {}

namespace {

// One sweep of successive approximations is an affine map K -> b + A K over
// the concatenation of the four tables. The geometry of every characteristic
// and its quadrature weights is fixed, so A is assembled once.
struct AffineSweep {
    std::vector<double> offset;
    std::vector<std::size_t> row_start;
    std::vector<std::size_t> col;
    std::vector<double> weight;

    void add(std::size_t c, double w) {
        col.push_back(c);
        weight.push_back(w);
    }
};

AffineSweep assemble_sweep(const NominalParams& p, const TriangleGrid& g) {
    const int n = g.n();
    const double h = g.h();
    const double lam = p.lambda0;
    const double mu = p.mu0;
    const double phi = p.phi0;
    const std::size_t N = g.size();
    const auto off = [&](Kernel k) { return static_cast<std::size_t>(k) * N; };

    std::vector<double> sp(n), sm(n);
    for (int j = 0; j < n; ++j) {
        sp[j] = p.sigma_plus0(g.coord(j));
        sm[j] = p.sigma_minus0(g.coord(j));
    }

    AffineSweep a;
    a.offset.assign(4 * N, 0.0);
    a.row_start.reserve(4 * N + 1);

    // Adds the trapezoid weights of an off-grid characteristic integral
    //   scale * int_0^len sigma(start_xi - xi_rate tau) K(P(tau)) dtau
    // with P(tau) = (x_d + x_rate tau, x_d - xi_rate tau).
    const auto add_slanted = [&](Kernel target, const CouplingProfile& sigma, double scale,
                                 double x_d, double x_rate, double xi_rate, double len) {
        const double span = std::max(x_rate, xi_rate) * len;
        const int steps = std::max(1, static_cast<int>(std::ceil(span / h - 1e-9)));
        const double dt = len / steps;
        for (int q = 0; q <= steps; ++q) {
            const double tau = q * dt;
            const double tw = (q == 0 || q == steps) ? 0.5 * dt : dt;
            const double px = x_d + x_rate * tau;
            const double pxi = x_d - xi_rate * tau;
            const double coef = scale * tw * sigma(pxi);
            if (coef == 0.0) continue;
            const Stencil st = locate(g, px, pxi);
            for (int v = 0; v < 3; ++v)
                if (st.w[v] != 0.0) a.add(off(target) + g.index(st.i[v], st.j[v]), coef * st.w[v]);
        }
    };

    for (Kernel k : all_kernels) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                a.row_start.push_back(a.col.size());
                const std::size_t row = off(k) + g.index(i, j);
                const double x = g.coord(i);
                const double xi = g.coord(j);
                switch (k) {
                    case Kernel::uu:
                    case Kernel::vv: {
                        // Characteristic along (1,1) from the edge xi = 0, through grid nodes.
                        const int i0 = i - j;
                        const bool is_uu = k == Kernel::uu;
                        const Kernel partner = is_uu ? Kernel::uv : Kernel::vu;
                        const double edge = is_uu ? mu / (lam * phi) : lam * phi / mu;
                        a.add(off(partner) + g.index(i0, 0), edge);
                        const double scale = is_uu ? -1.0 / lam : 1.0 / mu;
                        const auto& sig = is_uu ? sm : sp;
                        for (int s = 0; s <= j && j > 0; ++s) {
                            const double tw = (s == 0 || s == j) ? 0.5 * h : h;
                            const double coef = scale * tw * sig[s];
                            if (coef != 0.0) a.add(off(partner) + g.index(i0 + s, s), coef);
                        }
                        break;
                    }
                    case Kernel::uv: {
                        const double len = (x - xi) / (lam + mu);
                        const double x_d = x - lam * len;
                        a.offset[row] = p.sigma_plus0(x_d) / (lam + mu);
                        if (len > 0.0) add_slanted(Kernel::uu, p.sigma_plus0, -1.0, x_d, lam, mu, len);
                        break;
                    }
                    case Kernel::vu: {
                        const double len = (x - xi) / (lam + mu);
                        const double x_d = x - mu * len;
                        a.offset[row] = -p.sigma_minus0(x_d) / (lam + mu);
                        if (len > 0.0) add_slanted(Kernel::vv, p.sigma_minus0, 1.0, x_d, mu, lam, len);
                        break;
                    }
                }
            }
        }
    }
    a.row_start.push_back(a.col.size());
    return a;
}

}  // namespace

KernelSet solve_kernels(const NominalParams& nominal, int n, const KernelSolverOptions& options,
                        KernelSolveStats* stats) {
    nominal.validate();
    if (n < 8) throw std::invalid_argument("solve_kernels: grid needs n >= 8");
    if (nominal.phi0 == 0.0) throw std::invalid_argument("solve_kernels: phi0 must be nonzero");

    const TriangleGrid grid(n);
    const AffineSweep sweep = assemble_sweep(nominal, grid);
    const std::size_t N = grid.size();

    std::vector<double> cur(sweep.offset);
    std::vector<double> next(4 * N);
    double change = 0.0;
    int it = 0;
    for (;;) {
        ++it;
        change = 0.0;
        for (std::size_t r = 0; r < 4 * N; ++r) {
            double v = sweep.offset[r];
            for (std::size_t q = sweep.row_start[r]; q < sweep.row_start[r + 1]; ++q)
                v += sweep.weight[q] * cur[sweep.col[q]];
            next[r] = v;
            change = std::max(change, std::abs(v - cur[r]));
        }
        cur.swap(next);
        if (!std::isfinite(change)) throw KernelConvergenceError(it, change);
        if (change <= options.tolerance) break;
        if (it >= options.max_iterations) throw KernelConvergenceError(it, change);
    }
    if (stats) *stats = {it, change};

    KernelSet out(grid, nominal);
    for (Kernel k : all_kernels) {
        const auto first = cur.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(k) * N);
        std::copy(first, first + static_cast<std::ptrdiff_t>(N), out.table(k).begin());
    }
    return out;
}

double ResidualReport::pde_sup_max() const {
    return *std::max_element(pde_sup.begin(), pde_sup.end());
}

double ResidualReport::sup() const {
    return std::max(pde_sup_max(), *std::max_element(boundary_sup.begin(), boundary_sup.end()));
}

ResidualReport kernel_residual(const KernelSet& K) {
    const auto& g = K.grid();
    const auto& p = K.nominal();
    const int n = g.n();
    const double lam = p.lambda0;
    const double mu = p.mu0;
    ResidualReport rep;
    std::array<double, 4> sq{};
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            const double xi = g.coord(j);
            const double sp = p.sigma_plus0(xi);
            const double sm = p.sigma_minus0(xi);
            const std::array<double, 4> r{
                K.d_dx(Kernel::uu, i, j) + K.d_dxi(Kernel::uu, i, j) + sm * K.at(Kernel::uv, i, j) / lam,
                K.d_dx(Kernel::uv, i, j) - (mu / lam) * K.d_dxi(Kernel::uv, i, j) +
                    sp * K.at(Kernel::uu, i, j) / lam,
                K.d_dx(Kernel::vu, i, j) - (lam / mu) * K.d_dxi(Kernel::vu, i, j) -
                    sm * K.at(Kernel::vv, i, j) / mu,
                K.d_dx(Kernel::vv, i, j) + K.d_dxi(Kernel::vv, i, j) - sp * K.at(Kernel::vu, i, j) / mu,
            };
            for (int c = 0; c < 4; ++c) {
                rep.pde_sup[c] = std::max(rep.pde_sup[c], std::abs(r[c]));
                sq[c] += r[c] * r[c];
            }
        }
        const double x = g.coord(i);
        const double ratio = lam * p.phi0 / mu;
        rep.boundary_sup[0] =
            std::max(rep.boundary_sup[0], std::abs(K.at(Kernel::uv, i, i) - p.sigma_plus0(x) / (lam + mu)));
        rep.boundary_sup[1] =
            std::max(rep.boundary_sup[1], std::abs(K.at(Kernel::vu, i, i) + p.sigma_minus0(x) / (lam + mu)));
        rep.boundary_sup[2] =
            std::max(rep.boundary_sup[2], std::abs(K.at(Kernel::uv, i, 0) - ratio * K.at(Kernel::uu, i, 0)));
        rep.boundary_sup[3] =
            std::max(rep.boundary_sup[3], std::abs(K.at(Kernel::vv, i, 0) - ratio * K.at(Kernel::vu, i, 0)));
    }
    // The triangle has area 1/2; nodes carry equal weight.
    for (int c = 0; c < 4; ++c) rep.pde_l2[c] = std::sqrt(0.5 * sq[c] / static_cast<double>(g.size()));
    return rep;
}

GainSlice gain_slice(const KernelSet& K) {
    const auto& g = K.grid();
    const int n = g.n();
    GainSlice s;
    s.xi.resize(n);
    s.k_vu.resize(n);
    s.k_vv.resize(n);
    for (int j = 0; j < n; ++j) {
        s.xi[j] = g.coord(j);
        s.k_vu[j] = K.at(Kernel::vu, n - 1, j);
        s.k_vv[j] = K.at(Kernel::vv, n - 1, j);
    }
    return s;
}

StatePair backstepping_transform(const StatePair& state, const KernelSet& K, TransformDirection direction) {
    const auto& g = K.grid();
    const int n = g.n();
    if (static_cast<int>(state.u.size()) != n || static_cast<int>(state.v.size()) != n)
        throw std::invalid_argument("backstepping_transform: state grid does not match kernel grid");
    const double h = g.h();
    StatePair out{std::vector<double>(n), std::vector<double>(n)};

    if (direction == TransformDirection::forward) {
        for (int i = 0; i < n; ++i) {
            double iu = 0.0, iv = 0.0;
            for (int j = 0; j <= i && i > 0; ++j) {
                const double w = (j == 0 || j == i) ? 0.5 * h : h;
                iu += w * (K.at(Kernel::uu, i, j) * state.u[j] + K.at(Kernel::uv, i, j) * state.v[j]);
                iv += w * (K.at(Kernel::vu, i, j) * state.u[j] + K.at(Kernel::vv, i, j) * state.v[j]);
            }
            out.u[i] = state.u[i] - iu;
            out.v[i] = state.v[i] - iv;
        }
        return out;
    }

    // Inverse: row i couples only (u_i, v_i) through the trapezoid end weight.
    const auto& alpha = state.u;
    const auto& beta = state.v;
    out.u[0] = alpha[0];
    out.v[0] = beta[0];
    for (int i = 1; i < n; ++i) {
        double su = 0.0, sv = 0.0;
        for (int j = 0; j < i; ++j) {
            const double w = j == 0 ? 0.5 * h : h;
            su += w * (K.at(Kernel::uu, i, j) * out.u[j] + K.at(Kernel::uv, i, j) * out.v[j]);
            sv += w * (K.at(Kernel::vu, i, j) * out.u[j] + K.at(Kernel::vv, i, j) * out.v[j]);
        }
        const double e = 0.5 * h;
        const double a11 = 1.0 - e * K.at(Kernel::uu, i, i);
        const double a12 = -e * K.at(Kernel::uv, i, i);
        const double a21 = -e * K.at(Kernel::vu, i, i);
        const double a22 = 1.0 - e * K.at(Kernel::vv, i, i);
        const double r1 = alpha[i] + su;
        const double r2 = beta[i] + sv;
        const double det = a11 * a22 - a12 * a21;
        if (det == 0.0) throw std::runtime_error("backstepping_transform: singular inverse step");
        out.u[i] = (r1 * a22 - a12 * r2) / det;
        out.v[i] = (a11 * r2 - a21 * r1) / det;
    }
    return out;
}

void write_kernel_csv(std::ostream& os, const KernelSet& K) {
    const auto& g = K.grid();
    os << "x,xi,Kuu,Kuv,Kvu,Kvv\n";
    const auto old = os.precision(17);
    for (int i = 0; i < g.n(); ++i)
        for (int j = 0; j <= i; ++j) {
            os << g.coord(i) << ',' << g.coord(j);
            for (Kernel k : all_kernels) os << ',' << K.at(k, i, j);
            os << '\n';
        }
    os.precision(old);
}

KernelSet read_kernel_csv(std::istream& is, const NominalParams& nominal) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("kernel csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,xi,Kuu,Kuv,Kvu,Kvv") throw std::runtime_error("kernel csv: unexpected header '" + line + "'");
    std::vector<std::array<double, 6>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::array<double, 6> r{};
        std::istringstream ls(line);
        for (int c = 0; c < 6; ++c) {
            std::string cell;
            if (!std::getline(ls, cell, ',')) throw std::runtime_error("kernel csv: short row");
            r[c] = std::stod(cell);
        }
        rows.push_back(r);
    }
    // rows = n(n+1)/2
    const int n = static_cast<int>(std::lround((std::sqrt(8.0 * rows.size() + 1.0) - 1.0) / 2.0));
    if (n < 2 || static_cast<std::size_t>(n) * (n + 1) / 2 != rows.size())
        throw std::runtime_error("kernel csv: row count is not triangular");
    KernelSet K(TriangleGrid(n), nominal);
    const auto& g = K.grid();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const auto& r = rows[g.index(i, j)];
            if (std::abs(r[0] - g.coord(i)) > 1e-9 || std::abs(r[1] - g.coord(j)) > 1e-9)
                throw std::runtime_error("kernel csv: node coordinates out of order");
            for (Kernel k : all_kernels) K.table(k)[g.index(i, j)] = r[2 + static_cast<int>(k)];
        }
    return K;
}

}  // namespace jumpctl
