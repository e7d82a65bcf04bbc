#include "jumpctl/operator.hpp"

#include "jumpctl/config.hpp"
#include "jumpctl/markov.hpp"
#include "jumpctl/parallel.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace jumpctl {

namespace {

const std::array<const char*, 6> feature_names{"lambda0", "mu0", "sigma_plus0", "sigma_minus0", "phi0", "rho0"};

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// (x, xi) of every node of an n-point triangle grid, as a 2 x nodes matrix.
Eigen::MatrixXd trunk_points(int n) {
    TriangleGrid g(n);
    Eigen::MatrixXd pts(2, static_cast<Eigen::Index>(g.size()));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const auto k = static_cast<Eigen::Index>(g.index(i, j));
            pts(0, k) = g.coord(i);
            pts(1, k) = g.coord(j);
        }
    return pts;
}

}  // namespace

Mlp::Mlp(const std::vector<int>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("mlp: need at least input and output sizes");
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int in = dims[l], out = dims[l + 1];
        if (in <= 0 || out <= 0) throw std::invalid_argument("mlp: layer sizes must be positive");
        const double limit = std::sqrt(6.0 / (in + out));
        Eigen::MatrixXd W(out, in);
        // Row-major fill so the draw order matches the file layout.
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) W(r, c) = limit * (2.0 * uniform01(rng) - 1.0);
        weights.push_back(std::move(W));
        biases.push_back(Eigen::VectorXd::Zero(out));
    }
}

std::vector<int> Mlp::dims() const {
    std::vector<int> d{input_dim()};
    for (const auto& W : weights) d.push_back(static_cast<int>(W.rows()));
    return d;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Eigen::MatrixXd z = weights[l] * h;
        z.colwise() += biases[l];
        h = (l + 1 < weights.size()) ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
    return h;
}

ParameterRanges ParameterRanges::around(const ParameterVector& c, double fraction) {
    ParameterRanges r;
    const auto a = c.as_array();
    for (int k = 0; k < 6; ++k) {
        const double x = a[k] * (1.0 - fraction), y = a[k] * (1.0 + fraction);
        r.lo[k] = std::min(x, y);
        r.hi[k] = std::max(x, y);
    }
    return r;
}

bool ParameterRanges::contains(const ParameterVector& v, double slack) const {
    const auto a = v.as_array();
    for (int k = 0; k < 6; ++k) {
        const double pad = slack * std::max(1.0, std::abs(hi[k] - lo[k]));
        if (a[k] < lo[k] - pad || a[k] > hi[k] + pad) return false;
    }
    return true;
}

KernelSet KernelDataset::kernels(int sample) const {
    KernelSet K(TriangleGrid(n), expand(params.at(static_cast<std::size_t>(sample)), family, domain_length));
    for (auto k : all_kernels) K.table(k) = tables[static_cast<std::size_t>(sample)][static_cast<int>(k)];
    return K;
}

KernelDataset generate_dataset(const ParameterRanges& ranges, ProfileFamily family, double domain_length,
                               std::uint64_t seed, const DatasetOptions& o) {
    if (o.n_samples < 1) throw std::invalid_argument("generate_dataset: need at least one sample");
    if (!(o.train_fraction > 0.0 && o.train_fraction <= 1.0))
        throw std::invalid_argument("generate_dataset: train_fraction must be in (0, 1]");
    for (int k = 0; k < 6; ++k)
        if (!(ranges.lo[k] <= ranges.hi[k])) throw std::invalid_argument("generate_dataset: empty range");
    if (!(ranges.lo[0] > 0.0) || !(ranges.lo[1] > 0.0))
        throw std::invalid_argument("generate_dataset: lambda and mu ranges must be positive");

    KernelDataset ds;
    ds.family = family;
    ds.domain_length = domain_length;
    ds.n = o.grid_n;
    ds.seed = seed;
    ds.ranges = ranges;
    ds.residual_threshold = o.residual_threshold > 0.0 ? o.residual_threshold : 10.0 / (o.grid_n - 1);
    const auto N = static_cast<std::size_t>(o.n_samples);
    ds.params.resize(N);
    ds.tables.resize(N);
    ds.residuals.resize(N);
    std::vector<int> redraws(N, 0);

    parallel_for(o.n_samples, o.jobs, [&](int i) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        for (int attempt = 0;; ++attempt) {
            if (attempt > o.max_redraws) throw std::runtime_error("generate_dataset: too many redraws for one sample");
            std::array<double, 6> a{};
            for (int k = 0; k < 6; ++k) a[k] = ranges.lo[k] + (ranges.hi[k] - ranges.lo[k]) * uniform01(rng);
            const auto v = ParameterVector::from_array(a);
            try {
                const auto K = solve_kernels(expand(v, family, domain_length), o.grid_n);
                const double res = kernel_residual(K).sup();
                if (!(res <= ds.residual_threshold)) {
                    ++redraws[static_cast<std::size_t>(i)];
                    continue;
                }
                ds.params[static_cast<std::size_t>(i)] = v;
                ds.residuals[static_cast<std::size_t>(i)] = res;
                for (auto k : all_kernels) ds.tables[static_cast<std::size_t>(i)][static_cast<int>(k)] = K.table(k);
                return;
            } catch (const KernelConvergenceError&) {
                ++redraws[static_cast<std::size_t>(i)];
            }
        }
    });
    for (int r : redraws) ds.redraws += r;
    // Draws are iid, so the leading block is a uniformly random train split.
    const int n_train = std::max(1, static_cast<int>(std::lround(o.train_fraction * o.n_samples)));
    for (int i = 0; i < o.n_samples; ++i) (i < n_train ? ds.train : ds.test).push_back(i);
    return ds;
}

void save_dataset(const KernelDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream info(fs::path(dir) / "dataset.info");
    info << std::setprecision(17);
    info << "family = " << to_string(ds.family) << "\n"
         << "domain_length = " << ds.domain_length << "\n"
         << "n = " << ds.n << "\n"
         << "seed = " << ds.seed << "\n"
         << "samples = " << ds.size() << "\n"
         << "train = " << ds.train.size() << "\n"
         << "redraws = " << ds.redraws << "\n"
         << "residual_threshold = " << ds.residual_threshold << "\n";
    for (const char* side : {"lo", "hi"}) {
        const auto& r = std::string(side) == "lo" ? ds.ranges.lo : ds.ranges.hi;
        info << "range." << side << " = ";
        for (int k = 0; k < 6; ++k) info << (k ? ", " : "") << r[k];
        info << "\n";
    }
    if (!info) throw std::runtime_error("save_dataset: cannot write " + dir + "/dataset.info");

    std::ofstream man(fs::path(dir) / "manifest.csv");
    man << std::setprecision(17) << "index,split,lambda0,mu0,sigma_plus0,sigma_minus0,phi0,rho0,residual\n";
    std::vector<char> split(ds.size(), '?');
    for (int i : ds.train) split[static_cast<std::size_t>(i)] = 'r';
    for (int i : ds.test) split[static_cast<std::size_t>(i)] = 'e';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        man << i << ',' << (split[i] == 'r' ? "train" : "test");
        for (double a : ds.params[i].as_array()) man << ',' << a;
        man << ',' << ds.residuals[i] << '\n';
        std::ostringstream name;
        name << "sample_" << std::setw(4) << std::setfill('0') << i << ".csv";
        std::ofstream out(fs::path(dir) / name.str());
        write_kernel_csv(out, ds.kernels(static_cast<int>(i)));
        if (!out) throw std::runtime_error("save_dataset: cannot write " + name.str());
    }
}

KernelDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto info = Config::load((fs::path(dir) / "dataset.info").string());
    KernelDataset ds;
    ds.family = parse_profile_family(info.get_string("family", "arz"));
    ds.domain_length = info.get_double("domain_length", 1.0);
    ds.n = info.get_int("n", 32);
    ds.seed = info.get_u64("seed", 0);
    ds.redraws = info.get_int("redraws", 0);
    ds.residual_threshold = info.get_double("residual_threshold", 0.0);
    const auto lo = info.get_list("range.lo", {}), hi = info.get_list("range.hi", {});
    if (lo.size() != 6 || hi.size() != 6) throw std::runtime_error("load_dataset: ranges need six entries");
    std::copy(lo.begin(), lo.end(), ds.ranges.lo.begin());
    std::copy(hi.begin(), hi.end(), ds.ranges.hi.begin());

    std::ifstream man(fs::path(dir) / "manifest.csv");
    if (!man) throw std::runtime_error("load_dataset: missing manifest.csv in " + dir);
    std::string line;
    std::getline(man, line);
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9) throw std::runtime_error("load_dataset: malformed manifest row: " + line);
        const int idx = std::stoi(cells[0]);
        if (idx != static_cast<int>(ds.size())) throw std::runtime_error("load_dataset: manifest rows out of order");
        (cells[1] == "train" ? ds.train : ds.test).push_back(idx);
        std::array<double, 6> a{};
        for (int k = 0; k < 6; ++k) a[k] = std::stod(cells[2 + k]);
        ds.params.push_back(ParameterVector::from_array(a));
        ds.residuals.push_back(std::stod(cells[8]));
        std::ostringstream name;
        name << "sample_" << std::setw(4) << std::setfill('0') << idx << ".csv";
        std::ifstream in(fs::path(dir) / name.str());
        if (!in) throw std::runtime_error("load_dataset: missing " + name.str());
        const auto K = read_kernel_csv(in, expand(ds.params.back(), ds.family, ds.domain_length));
        if (K.grid().n() != ds.n) throw std::runtime_error("load_dataset: grid size mismatch in " + name.str());
        std::array<std::vector<double>, 4> t;
        for (auto k : all_kernels) t[static_cast<int>(k)] = K.table(k);
        ds.tables.push_back(std::move(t));
    }
    return ds;
}

OperatorModel::OperatorModel(int latent_width, const std::vector<int>& branch_hidden,
                             const std::vector<int>& trunk_hidden, std::uint64_t seed)
    : latent(latent_width) {
    if (latent_width < 1) throw std::invalid_argument("operator model: latent width must be >= 1");
    std::vector<int> bd{6}, td{2};
    bd.insert(bd.end(), branch_hidden.begin(), branch_hidden.end());
    td.insert(td.end(), trunk_hidden.begin(), trunk_hidden.end());
    bd.push_back(latent_width);
    td.push_back(latent_width);
    for (int c = 0; c < 4; ++c) {
        components[c].branch = Mlp(bd, derive_seed(seed, 2 * c));
        components[c].trunk = Mlp(td, derive_seed(seed, 2 * c + 1));
        // Untrained models predict their bias, and a component whose targets
        // are all zero stays exactly zero through training.
        components[c].branch.weights.back().setZero();
    }
}

OperatorModel& OperatorModel::operator=(const OperatorModel& o) {
    if (this == &o) return *this;
    latent = o.latent;
    family = o.family;
    in_mean = o.in_mean;
    in_std = o.in_std;
    range_lo = o.range_lo;
    range_hi = o.range_hi;
    out_scale = o.out_scale;
    components = o.components;
    cache_ = std::make_shared<Cache>();
    return *this;
}

Eigen::VectorXd OperatorModel::branch_input(const ParameterVector& v) const {
    const auto a = v.as_array();
    Eigen::VectorXd z(6);
    for (int k = 0; k < 6; ++k) z(k) = (a[k] - in_mean[k]) / in_std[k];
    return z;
}

std::shared_ptr<const OperatorModel::Basis> OperatorModel::basis(int n) const {
    std::lock_guard lock(cache_->mutex);
    auto& slot = cache_->bases[n];
    if (!slot) {
        const auto pts = trunk_points(n);
        auto b = std::make_shared<Basis>();
        for (int c = 0; c < 4; ++c) (*b)[c] = components[c].trunk.forward(pts).transpose();
        slot = std::move(b);
    }
    return slot;
}

void OperatorModel::clear_cache() const {
    std::lock_guard lock(cache_->mutex);
    cache_->bases.clear();
}

Eigen::MatrixXd OperatorModel::predict_normalized(const ParameterVector& v, int n) const {
    const auto B = basis(n);
    const Eigen::VectorXd z = branch_input(v);
    Eigen::MatrixXd out((*B)[0].rows(), 4);
    for (int c = 0; c < 4; ++c) {
        const Eigen::VectorXd b = components[c].branch.forward(z);
        out.col(c) = (*B)[c] * b;
        out.col(c).array() += components[c].bias;
    }
    return out;
}

std::array<std::vector<double>, 4> OperatorModel::predict_tables(const ParameterVector& v, int n) const {
    const Eigen::MatrixXd p = predict_normalized(v, n);
    std::array<std::vector<double>, 4> t;
    for (int c = 0; c < 4; ++c) {
        t[c].resize(static_cast<std::size_t>(p.rows()));
        for (Eigen::Index k = 0; k < p.rows(); ++k) t[c][static_cast<std::size_t>(k)] = out_scale[c] * p(k, c);
    }
    return t;
}

TrainingDivergence::TrainingDivergence(int c, int e, double l)
    : std::runtime_error("training diverged: component " + std::string(kernel_name(static_cast<Kernel>(c))) +
                         ", epoch " + std::to_string(e) + ", loss " + std::to_string(l)),
      component(c),
      epoch(e),
      loss(l) {}

namespace {

// Forward pass keeping the activations needed for backprop.
Eigen::MatrixXd forward_keep(const Mlp& net, const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>& acts) {
    acts.resize(net.weights.size() + 1);
    acts[0] = x;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Eigen::MatrixXd z = net.weights[l] * acts[l];
        z.colwise() += net.biases[l];
        if (l + 1 < net.weights.size()) z = z.array().tanh();
        acts[l + 1] = std::move(z);
    }
    return acts.back();
}

// Accumulates dL/dparams into `grad` starting at `offset`, in pack order.
void backward(const Mlp& net, const std::vector<Eigen::MatrixXd>& acts, Eigen::MatrixXd g, Eigen::VectorXd& grad,
              Eigen::Index offset) {
    std::vector<Eigen::Index> at;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        at.push_back(offset);
        offset += net.weights[l].size() + net.biases[l].size();
    }
    for (std::size_t l = net.weights.size(); l-- > 0;) {
        const auto rows = net.weights[l].rows(), cols = net.weights[l].cols();
        Eigen::Map<Eigen::MatrixXd>(grad.data() + at[l], rows, cols) = g * acts[l].transpose();
        grad.segment(at[l] + rows * cols, rows) = g.rowwise().sum();
        if (l > 0) g = (net.weights[l].transpose() * g).array() * (1.0 - acts[l].array().square());
    }
}

Eigen::Index net_size(const Mlp& net) {
    Eigen::Index s = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l) s += net.weights[l].size() + net.biases[l].size();
    return s;
}

// Flat layout: branch layers (W column-major, then b), trunk layers, bias.
Eigen::VectorXd pack(const OperatorModel::Component& c) {
    Eigen::VectorXd p(net_size(c.branch) + net_size(c.trunk) + 1);
    Eigen::Index k = 0;
    for (const Mlp* net : {&c.branch, &c.trunk})
        for (std::size_t l = 0; l < net->weights.size(); ++l) {
            p.segment(k, net->weights[l].size()) = net->weights[l].reshaped();
            k += net->weights[l].size();
            p.segment(k, net->biases[l].size()) = net->biases[l];
            k += net->biases[l].size();
        }
    p(k) = c.bias;
    return p;
}

void unpack(const Eigen::VectorXd& p, OperatorModel::Component& c) {
    Eigen::Index k = 0;
    for (Mlp* net : {&c.branch, &c.trunk})
        for (std::size_t l = 0; l < net->weights.size(); ++l) {
            auto& W = net->weights[l];
            W = Eigen::Map<const Eigen::MatrixXd>(p.data() + k, W.rows(), W.cols());
            k += W.size();
            net->biases[l] = p.segment(k, net->biases[l].size());
            k += net->biases[l].size();
        }
    c.bias = p(k);
}

// Mean squared error of one component over (samples x nodes) and its gradient.
class ComponentLoss {
public:
    ComponentLoss(OperatorModel::Component& c, const Eigen::MatrixXd& xb, const Eigen::MatrixXd& xt,
                  const Eigen::MatrixXd& y)
        : c_(c), xb_(xb), xt_(xt), y_(y) {}

    double operator()(const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
        unpack(p, c_);
        const Eigen::MatrixXd B = forward_keep(c_.branch, xb_, acts_b_);  // latent x samples
        const Eigen::MatrixXd T = forward_keep(c_.trunk, xt_, acts_t_);   // latent x nodes
        Eigen::MatrixXd R = B.transpose() * T;
        R.array() += c_.bias - y_.array();
        const double denom = static_cast<double>(R.size());
        const double loss = R.squaredNorm() / denom;
        R *= 2.0 / denom;
        grad.resize(p.size());
        backward(c_.branch, acts_b_, T * R.transpose(), grad, 0);
        backward(c_.trunk, acts_t_, B * R, grad, net_size(c_.branch));
        grad(p.size() - 1) = R.sum();
        return loss;
    }

private:
    OperatorModel::Component& c_;
    const Eigen::MatrixXd& xb_;
    const Eigen::MatrixXd& xt_;
    const Eigen::MatrixXd& y_;
    std::vector<Eigen::MatrixXd> acts_b_, acts_t_;
};

// Limited-memory BFGS with a backtracking Armijo line search. Returns false
// when the search cannot make progress.
class Lbfgs {
public:
    explicit Lbfgs(int history) : history_(history) {}

    template <class F>
    bool step(F& f, Eigen::VectorXd& p, double& loss, Eigen::VectorXd& grad) {
        Eigen::VectorXd d = -grad;
        const int m = static_cast<int>(s_.size());
        std::vector<double> alpha(static_cast<std::size_t>(m));
        for (int i = m - 1; i >= 0; --i) {
            alpha[i] = rho_[i] * s_[i].dot(d);
            d -= alpha[i] * y_[i];
        }
        if (m > 0) d *= s_.back().dot(y_.back()) / y_.back().squaredNorm();
        for (int i = 0; i < m; ++i) d += s_[i] * (alpha[i] - rho_[i] * y_[i].dot(d));

        double slope = grad.dot(d);
        if (!(slope < 0.0)) {
            // Lost descent: restart from steepest descent.
            s_.clear();
            y_.clear();
            rho_.clear();
            d = -grad;
            slope = -grad.squaredNorm();
        }
        double t = m > 0 ? 1.0 : std::min(1.0, 1e-2 / std::sqrt(grad.squaredNorm()));
        Eigen::VectorXd g_new;
        for (int tries = 0; tries < 40; ++tries, t *= 0.5) {
            const Eigen::VectorXd p_new = p + t * d;
            const double l_new = f(p_new, g_new);
            if (std::isfinite(l_new) && l_new <= loss + 1e-4 * t * slope) {
                const Eigen::VectorXd s = p_new - p, y = g_new - grad;
                const double sy = s.dot(y);
                if (sy > 1e-12 * s.norm() * y.norm()) {
                    s_.push_back(s);
                    y_.push_back(y);
                    rho_.push_back(1.0 / sy);
                    if (static_cast<int>(s_.size()) > history_) {
                        s_.erase(s_.begin());
                        y_.erase(y_.begin());
                        rho_.erase(rho_.begin());
                    }
                }
                p = p_new;
                loss = l_new;
                grad = g_new;
                return true;
            }
        }
        f(p, grad);
        return false;
    }

private:
    int history_;
    std::vector<Eigen::VectorXd> s_, y_;
    std::vector<double> rho_;
};

Eigen::MatrixXd targets(const KernelDataset& ds, const std::vector<int>& split, int c, double scale) {
    const auto G = static_cast<Eigen::Index>(TriangleGrid(ds.n).size());
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(split.size()), G);
    for (std::size_t s = 0; s < split.size(); ++s)
        for (Eigen::Index k = 0; k < G; ++k)
            Y(static_cast<Eigen::Index>(s), k) =
                ds.tables[static_cast<std::size_t>(split[s])][c][static_cast<std::size_t>(k)] / scale;
    return Y;
}

Eigen::MatrixXd branch_inputs(const OperatorModel& m, const KernelDataset& ds, const std::vector<int>& split) {
    Eigen::MatrixXd X(6, static_cast<Eigen::Index>(split.size()));
    for (std::size_t s = 0; s < split.size(); ++s)
        X.col(static_cast<Eigen::Index>(s)) = m.branch_input(ds.params[static_cast<std::size_t>(split[s])]);
    return X;
}

}  // namespace

TrainResult train(const KernelDataset& ds, const TrainOptions& o) {
    if (ds.train.empty()) throw std::invalid_argument("train: empty train split");
    if (o.epochs < 0 || o.lbfgs_iterations < 0 || o.epochs + o.lbfgs_iterations < 1)
        throw std::invalid_argument("train: need at least one optimizer step");
    if (!(o.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    const auto start = std::chrono::steady_clock::now();

    TrainResult res;
    OperatorModel& m = res.model;
    m = OperatorModel(o.latent, o.branch_hidden, o.trunk_hidden, o.seed);
    m.family = ds.family;
    m.range_lo = ds.ranges.lo;
    m.range_hi = ds.ranges.hi;

    const double n_train = static_cast<double>(ds.train.size());
    for (int k = 0; k < 6; ++k) {
        double mean = 0.0;
        for (int i : ds.train) mean += ds.params[static_cast<std::size_t>(i)].as_array()[k];
        mean /= n_train;
        double var = 0.0;
        for (int i : ds.train) var += std::pow(ds.params[static_cast<std::size_t>(i)].as_array()[k] - mean, 2);
        const double sd = std::sqrt(var / n_train);
        m.in_mean[k] = mean;
        // A feature that never varies only needs centering.
        m.in_std[k] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
    }
    for (int c = 0; c < 4; ++c) {
        double s = 0.0;
        for (int i : ds.train)
            for (double x : ds.tables[static_cast<std::size_t>(i)][c]) s = std::max(s, std::abs(x));
        m.out_scale[c] = s > 0.0 ? s : 1.0;
    }

    const Eigen::MatrixXd Xt = trunk_points(ds.n);
    const Eigen::MatrixXd Xb = branch_inputs(m, ds, ds.train);
    const Eigen::MatrixXd Xb_test = branch_inputs(m, ds, ds.test);
    const int total = o.epochs + o.lbfgs_iterations;
    const int checkpoints = o.checkpoint_every > 0 ? total / o.checkpoint_every : 0;
    // Per component: (train loss, test loss, test sup) at each checkpoint.
    std::vector<std::vector<std::array<double, 3>>> curves(4);

    parallel_for(4, o.jobs, [&](int c) {
        auto& comp = m.components[c];
        const Eigen::MatrixXd Y = targets(ds, ds.train, c, m.out_scale[c]);
        const Eigen::MatrixXd Y_test = ds.test.empty() ? Eigen::MatrixXd() : targets(ds, ds.test, c, m.out_scale[c]);
        auto checkpoint = [&](int epoch, double loss) {
            if (o.checkpoint_every <= 0 || epoch % o.checkpoint_every != 0) return;
            double test_loss = 0.0, test_sup = 0.0;
            if (!ds.test.empty()) {
                Eigen::MatrixXd P = comp.branch.forward(Xb_test).transpose() * comp.trunk.forward(Xt);
                P.array() += comp.bias - Y_test.array();
                test_loss = P.squaredNorm() / static_cast<double>(P.size());
                test_sup = P.cwiseAbs().maxCoeff();
            }
            curves[c].push_back({loss, test_loss, test_sup});
        };
        // Zero targets are already reproduced exactly by the initial model.
        if (Y.cwiseAbs().maxCoeff() == 0.0) {
            for (int epoch = 1; epoch <= total; ++epoch) checkpoint(epoch, 0.0);
            return;
        }

        ComponentLoss f(comp, Xb, Xt, Y);
        Eigen::VectorXd p = pack(comp), grad, mom = Eigen::VectorXd::Zero(p.size()), var = mom;
        double loss = 0.0;
        for (int epoch = 1; epoch <= o.epochs; ++epoch) {
            loss = f(p, grad);
            if (!std::isfinite(loss)) throw TrainingDivergence(c, epoch, loss);
            const double lr =
                o.learning_rate * std::pow(o.final_lr_factor, static_cast<double>(epoch - 1) / std::max(1, o.epochs - 1));
            mom = 0.9 * mom + 0.1 * grad;
            var = 0.999 * var + 0.001 * grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(0.9, epoch), c2 = 1.0 - std::pow(0.999, epoch);
            p.array() -= lr * (mom.array() / c1) / ((var.array() / c2).sqrt() + 1e-8);
            unpack(p, comp);
            checkpoint(epoch, loss);
        }

        Lbfgs opt(o.lbfgs_history);
        loss = f(p, grad);
        bool moving = true;
        for (int it = 1; it <= o.lbfgs_iterations; ++it) {
            if (moving) moving = opt.step(f, p, loss, grad);
            if (!std::isfinite(loss)) throw TrainingDivergence(c, o.epochs + it, loss);
            unpack(p, comp);
            checkpoint(o.epochs + it, loss);
        }
        unpack(p, comp);
    });

    for (int k = 0; k < checkpoints; ++k) {
        LossPoint lp;
        lp.epoch = (k + 1) * o.checkpoint_every;
        for (int c = 0; c < 4; ++c) {
            lp.train_loss += curves[c][k][0] / 4.0;
            lp.test_loss += curves[c][k][1] / 4.0;
            lp.test_sup = std::max(lp.test_sup, curves[c][k][2]);
        }
        res.curve.push_back(lp);
    }
    m.clear_cache();
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

InferenceResult infer(const OperatorModel& model, const ParameterVector& v, int n, double domain_length) {
    const auto start = std::chrono::steady_clock::now();
    auto tables = model.predict_tables(v, n);
    InferenceResult out{KernelSet(TriangleGrid(n), expand(v, model.family, domain_length)), false, {}, 0.0};
    for (auto k : all_kernels) out.kernels.table(k) = std::move(tables[static_cast<int>(k)]);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto a = v.as_array();
    for (int k = 0; k < 6; ++k) {
        const double pad = 1e-12 * std::max(1.0, std::abs(model.range_hi[k] - model.range_lo[k]));
        if (a[k] < model.range_lo[k] - pad || a[k] > model.range_hi[k] + pad) out.flagged.push_back(feature_names[k]);
    }
    out.out_of_range = !out.flagged.empty();
    return out;
}

double SupErrorReport::max_norm_overall() const { return *std::max_element(max_norm.begin(), max_norm.end()); }

SupErrorReport sup_error(const KernelPredictor& predict, const KernelDataset& ds, const std::vector<int>& split,
                         const std::array<double, 4>& scale) {
    if (split.empty()) throw std::invalid_argument("sup_error: empty split");
    SupErrorReport r;
    r.samples = static_cast<int>(split.size());
    std::array<double, 4> sum{};
    std::size_t count = 0;
    for (int i : split) {
        const auto pred = predict(ds.params[static_cast<std::size_t>(i)], ds.n);
        const auto& truth = ds.tables[static_cast<std::size_t>(i)];
        for (int c = 0; c < 4; ++c) {
            if (pred[c].size() != truth[c].size()) throw std::invalid_argument("sup_error: prediction size mismatch");
            for (std::size_t k = 0; k < truth[c].size(); ++k) {
                const double e = std::abs(pred[c][k] - truth[c][k]);
                r.max_abs[c] = std::max(r.max_abs[c], e);
                sum[c] += e;
            }
        }
        count += truth[0].size();
    }
    for (int c = 0; c < 4; ++c) {
        r.mean_abs[c] = sum[c] / static_cast<double>(count);
        r.max_norm[c] = r.max_abs[c] / scale[c];
        r.mean_norm[c] = r.mean_abs[c] / scale[c];
    }
    return r;
}

SupErrorReport sup_error(const OperatorModel& model, const KernelDataset& ds, const std::vector<int>& split) {
    return sup_error([&](const ParameterVector& v, int n) { return model.predict_tables(v, n); }, ds, split,
                     model.out_scale);
}

void write_error_report(std::ostream& os, const SupErrorReport& r) {
    os << "component,max_abs_error,mean_abs_error,max_norm_error,mean_norm_error\n";
    const auto old = os.precision(6);
    for (int c = 0; c < 4; ++c)
        os << kernel_name(static_cast<Kernel>(c)) << ',' << r.max_abs[c] << ',' << r.mean_abs[c] << ','
           << r.max_norm[c] << ',' << r.mean_norm[c] << '\n';
    os.precision(old);
}

namespace {

constexpr std::uint32_t format_version = 1;

void put_u32(std::ostream& os, std::uint32_t x) {
    for (int b = 0; b < 4; ++b) os.put(static_cast<char>((x >> (8 * b)) & 0xFF));
}

void put_f64(std::ostream& os, double x) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) os.put(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

std::uint64_t get_bytes(std::istream& is, int n) {
    std::uint64_t x = 0;
    for (int b = 0; b < n; ++b) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) throw ModelFormatError("model file truncated");
        x |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
    }
    return x;
}

std::uint32_t get_u32(std::istream& is) { return static_cast<std::uint32_t>(get_bytes(is, 4)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_bytes(is, 8)); }

void put_net(std::ostream& os, const Mlp& net) {
    const auto d = net.dims();
    put_u32(os, static_cast<std::uint32_t>(net.weights.size()));
    for (int x : d) put_u32(os, static_cast<std::uint32_t>(x));
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        const auto& W = net.weights[l];
        for (Eigen::Index r = 0; r < W.rows(); ++r)
            for (Eigen::Index c = 0; c < W.cols(); ++c) put_f64(os, W(r, c));
        for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) put_f64(os, net.biases[l](r));
    }
}

Mlp get_net(std::istream& is) {
    const auto layers = get_u32(is);
    if (layers < 1 || layers > 64) throw ModelFormatError("model file: implausible layer count");
    std::vector<std::uint32_t> d(layers + 1);
    for (auto& x : d) {
        x = get_u32(is);
        if (x < 1 || x > 1u << 16) throw ModelFormatError("model file: implausible layer width");
    }
    Mlp net;
    for (std::uint32_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd W(d[l + 1], d[l]);
        for (Eigen::Index r = 0; r < W.rows(); ++r)
            for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = get_f64(is);
        Eigen::VectorXd b(d[l + 1]);
        for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = get_f64(is);
        net.weights.push_back(std::move(W));
        net.biases.push_back(std::move(b));
    }
    return net;
}

}  // namespace

void write_model(std::ostream& os, const OperatorModel& m) {
    os.write("NOKB", 4);
    put_u32(os, format_version);
    put_u32(os, m.family == ProfileFamily::arz ? 1u : 0u);
    put_u32(os, 4);
    put_u32(os, static_cast<std::uint32_t>(m.latent));
    put_u32(os, 6);
    for (const auto* arr : {&m.in_mean, &m.in_std, &m.range_lo, &m.range_hi})
        for (double x : *arr) put_f64(os, x);
    for (double x : m.out_scale) put_f64(os, x);
    for (const auto& c : m.components) {
        put_net(os, c.branch);
        put_net(os, c.trunk);
        put_f64(os, c.bias);
    }
}

OperatorModel read_model(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (is.gcount() != 4) throw ModelFormatError("model file truncated");
    if (std::memcmp(magic, "NOKB", 4) != 0) throw ModelFormatError("not a model file (bad magic)");
    if (const auto v = get_u32(is); v != format_version)
        throw ModelFormatError("unsupported model format version " + std::to_string(v));
    OperatorModel m;
    const auto fam = get_u32(is);
    if (fam > 1) throw ModelFormatError("model file: unknown profile family");
    m.family = fam == 1 ? ProfileFamily::arz : ProfileFamily::constant;
    if (get_u32(is) != 4) throw ModelFormatError("model file: expected 4 components");
    m.latent = static_cast<int>(get_u32(is));
    if (get_u32(is) != 6) throw ModelFormatError("model file: expected 6 features");
    for (auto* arr : {&m.in_mean, &m.in_std, &m.range_lo, &m.range_hi})
        for (double& x : *arr) x = get_f64(is);
    for (double& x : m.out_scale) x = get_f64(is);
    for (auto& c : m.components) {
        c.branch = get_net(is);
        c.trunk = get_net(is);
        c.bias = get_f64(is);
        if (c.branch.input_dim() != 6 || c.trunk.input_dim() != 2 || c.branch.output_dim() != m.latent ||
            c.trunk.output_dim() != m.latent)
            throw ModelFormatError("model file: network shapes do not match the header");
    }
    if (is.peek() != std::char_traits<char>::eof()) throw ModelFormatError("model file: trailing bytes");
    return m;
}

void save_model(const OperatorModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_model(os, model);
    if (!os) throw std::runtime_error("failed writing model to '" + path + "'");
}

OperatorModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open model file '" + path + "'");
    return read_model(is);
}

}  // namespace jumpctl
