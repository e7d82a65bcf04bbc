#pragma once

#include "jumpctl/kernels.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <map>
#include <string>
#include <vector>

namespace jumpctl {

/// Fully connected network, tanh on hidden layers, linear output.
/// Weights are (out x in); inputs are columns.
struct Mlp {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    Mlp() = default;
    /// Glorot-uniform weights, zero biases.
    Mlp(const std::vector<int>& dims, std::uint64_t seed);

    int input_dim() const { return static_cast<int>(weights.front().cols()); }
    int output_dim() const { return static_cast<int>(weights.back().rows()); }
    std::vector<int> dims() const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
};

struct ParameterRanges {
    std::array<double, 6> lo{};
    std::array<double, 6> hi{};

    /// [x (1 - f), x (1 + f)] per component, ordered.
    static ParameterRanges around(const ParameterVector& center, double fraction);
    bool contains(const ParameterVector& v, double slack = 1e-12) const;
};

struct KernelDataset {
    ProfileFamily family = ProfileFamily::arz;
    double domain_length = 1.0;
    int n = 32;
    std::uint64_t seed = 0;
    ParameterRanges ranges;
    std::vector<ParameterVector> params;
    /// Four tables per sample, triangle storage order.
    std::vector<std::array<std::vector<double>, 4>> tables;
    std::vector<double> residuals;
    std::vector<int> train;
    std::vector<int> test;
    double residual_threshold = 0.0;
    int redraws = 0;

    std::size_t size() const { return params.size(); }
    KernelSet kernels(int sample) const;
};

struct DatasetOptions {
    int n_samples = 1000;
    int grid_n = 32;
    double train_fraction = 0.9;
    /// Samples whose residual exceeds this are redrawn; <= 0 means 10 h.
    double residual_threshold = 0.0;
    int max_redraws = 1000;
    int jobs = 0;
};

/// Uniform draws from `ranges`, one solver run each. Sample i uses its own
/// stream derive_seed(seed, i), so the result does not depend on `jobs`.
KernelDataset generate_dataset(const ParameterRanges& ranges, ProfileFamily family, double domain_length,
                               std::uint64_t seed, const DatasetOptions& options = {});

/// One CSV per sample (`sample_NNNN.csv`), `manifest.csv` and `dataset.info`.
void save_dataset(const KernelDataset& ds, const std::string& dir);
KernelDataset load_dataset(const std::string& dir);

class OperatorModel {
public:
    struct Component {
        Mlp branch;
        Mlp trunk;
        double bias = 0.0;
    };
    using Basis = std::array<Eigen::MatrixXd, 4>;

    OperatorModel() = default;
    OperatorModel(int latent, const std::vector<int>& branch_hidden, const std::vector<int>& trunk_hidden,
                  std::uint64_t seed);
    // Copies start with an empty trunk cache.
    OperatorModel(const OperatorModel& o) { *this = o; }
    OperatorModel& operator=(const OperatorModel& o);

    int latent = 0;
    ProfileFamily family = ProfileFamily::arz;
    std::array<double, 6> in_mean{};
    std::array<double, 6> in_std{1, 1, 1, 1, 1, 1};
    std::array<double, 6> range_lo{};
    std::array<double, 6> range_hi{};
    std::array<double, 4> out_scale{1, 1, 1, 1};
    std::array<Component, 4> components;

    /// Standardized branch input for one parameter vector.
    Eigen::VectorXd branch_input(const ParameterVector& v) const;
    /// Normalized predictions sum_k b_k t_k + bias, (nodes x 4), at the
    /// nodes of an n-point triangle grid.
    Eigen::MatrixXd predict_normalized(const ParameterVector& v, int n) const;
    /// Physical-unit tables on an n-point grid.
    std::array<std::vector<double>, 4> predict_tables(const ParameterVector& v, int n) const;
    /// Trunk outputs (nodes x p per component) on the n-point grid. Cached,
    /// so repeated inference only evaluates the branch nets.
    std::shared_ptr<const Basis> basis(int n) const;
    /// Drops cached bases; call after editing trunk weights in place.
    void clear_cache() const;

private:
    struct Cache {
        std::mutex mutex;
        std::map<int, std::shared_ptr<const Basis>> bases;
    };
    mutable std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

struct TrainOptions {
    int latent = 32;
    std::vector<int> branch_hidden{64, 64};
    std::vector<int> trunk_hidden{64, 64};
    double learning_rate = 1e-3;
    /// Learning rate decays geometrically to learning_rate * final_lr_factor.
    double final_lr_factor = 0.1;
    int epochs = 500;
    /// Full-batch L-BFGS iterations run after the Adam epochs.
    int lbfgs_iterations = 0;
    int lbfgs_history = 20;
    /// Checkpoints count Adam epochs and L-BFGS iterations together.
    int checkpoint_every = 50;
    std::uint64_t seed = 1;
    int jobs = 1;
};

struct LossPoint {
    int epoch = 0;
    double train_loss = 0.0;
    double test_loss = 0.0;
    /// Held-out sup error in normalized units, max over components.
    double test_sup = 0.0;
};

class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(int component, int epoch, double loss);
    int component;
    int epoch;
    double loss;
};

struct TrainResult {
    OperatorModel model;
    std::vector<LossPoint> curve;
    double seconds = 0.0;
};

/// Full-batch Adam, then optional L-BFGS, on the mean squared error in
/// normalized units over all train samples and grid nodes; one independent
/// branch/trunk pair per kernel component.
TrainResult train(const KernelDataset& ds, const TrainOptions& options = {});

struct InferenceResult {
    KernelSet kernels;
    bool out_of_range = false;
    std::vector<std::string> flagged;
    double seconds = 0.0;
};

InferenceResult infer(const OperatorModel& model, const ParameterVector& delta0, int n, double domain_length = 1.0);

struct SupErrorReport {
    std::array<double, 4> max_abs{};
    std::array<double, 4> mean_abs{};
    /// Same in output-normalized units (divided by the model's scale).
    std::array<double, 4> max_norm{};
    std::array<double, 4> mean_norm{};
    int samples = 0;

    double max_norm_overall() const;
};

using KernelPredictor = std::function<std::array<std::vector<double>, 4>(const ParameterVector&, int n)>;

/// Exact max over every node of every sample in `split`.
SupErrorReport sup_error(const KernelPredictor& predict, const KernelDataset& ds, const std::vector<int>& split,
                         const std::array<double, 4>& scale);
SupErrorReport sup_error(const OperatorModel& model, const KernelDataset& ds, const std::vector<int>& split);

/// Table with max and mean absolute error per component.
void write_error_report(std::ostream& os, const SupErrorReport& report);

class ModelFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little-endian layout: "NOKB", u32 version, u32 family, u32 components,
/// u32 latent, u32 features, f64 mean[6], std[6], lo[6], hi[6], scale[4];
/// then per component the branch and trunk nets (u32 layers, u32 dims[layers+1],
/// each layer's W row-major then b) and an f64 bias.
void write_model(std::ostream& os, const OperatorModel& model);
OperatorModel read_model(std::istream& is);
void save_model(const OperatorModel& model, const std::string& path);
OperatorModel load_model(const std::string& path);

}  // namespace jumpctl
