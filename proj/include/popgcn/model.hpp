#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "popgcn/config.hpp"
#include "popgcn/data.hpp"
#include "popgcn/graph.hpp"

namespace popgcn {

using Rng = std::mt19937_64;

/// GC layer filters of one branch; layers[0] maps d -> h1, the last maps to K.
struct BranchParams {
    std::vector<Matrix> layers;
};

/// All trainable parameters: one branch per graph plus one fusion weight per branch.
struct ModelParams {
    std::vector<BranchParams> branches;
    Vector omega;

    int n_branches() const { return static_cast<int>(branches.size()); }
    /// Number of filter coefficients (everything except omega).
    Eigen::Index n_theta() const;
    Eigen::Index size() const { return n_theta() + omega.size(); }

    void validate() const;
};

/// Glorot-uniform filters, omega = 1/M.
ModelParams init_params(int n_features, std::span<const int> hidden_dims, int n_classes, int n_branches, Rng& rng);

struct LayerTrace {
    Matrix mask;            // inverted-dropout scale per entry (all ones when not training)
    Matrix input;           // layer input after dropout
    Matrix pre_activation;  // prop * input * theta
};

struct BranchTrace {
    std::vector<LayerTrace> layers;
    Matrix logits;
};

struct ForwardTrace {
    std::vector<BranchTrace> branches;
    Matrix fused;
    Matrix probs;
    bool training = false;
};

struct ModelGradients {
    std::vector<std::vector<Matrix>> theta;  // [branch][layer]
    Vector omega;
};

Matrix gc_layer_forward(const Matrix& prop, const Matrix& h, const Matrix& theta, bool apply_relu);

BranchTrace branch_forward(const Matrix& prop, const Matrix& x, const BranchParams& params, double dropout_rate,
                           Rng& rng, bool training);

Matrix fuse_logits(std::span<const Matrix> branch_logits, const Vector& omega);

Matrix softmax_rows(const Matrix& z);

/// Probability floor applied before every logarithm.
inline constexpr double kProbFloor = 1e-12;

double weighted_cross_entropy(const Matrix& probs, std::span<const int> labels, std::span<const int> mask,
                              std::span<const double> class_weights);

/// d(weighted_cross_entropy)/d(logits) for softmax probabilities `probs`.
Matrix cross_entropy_logit_gradient(const Matrix& probs, std::span<const int> labels, std::span<const int> mask,
                                   std::span<const double> class_weights);

ForwardTrace model_forward(std::span<const PropagationMatrix> props, const Matrix& x, const ModelParams& params,
                           double dropout_rate, Rng& rng, bool training);

/// Exact gradients of weighted cross-entropy + l2 * sum ||theta||_F^2.
ModelGradients compute_gradients(const ForwardTrace& trace, std::span<const PropagationMatrix> props,
                                 std::span<const int> labels, std::span<const int> mask,
                                 std::span<const double> class_weights, double l2_coeff, const ModelParams& params);

/// Deterministic objective (no dropout) matching compute_gradients.
double model_objective(std::span<const PropagationMatrix> props, const Matrix& x, const ModelParams& params,
                       std::span<const int> labels, std::span<const int> mask,
                       std::span<const double> class_weights, double l2_coeff);

/// Parameters as one flat vector: filters branch-major then layer-major
/// (column-major within a matrix), omega last.
Vector flatten(const ModelParams& params);
void unflatten(const Vector& flat, ModelParams& params);
Vector flatten(const ModelGradients& grads);

struct GradCheckOptions {
    double step = 1e-5;
    /// Coordinates to perturb: negative means all, otherwise a seeded random
    /// subsample of this size (all when it exceeds the parameter count).
    long long max_coordinates = -1;
    /// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
    double denominator_floor = 1e-4;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates_checked = 0;
    std::size_t worst_coordinate = 0;
    std::optional<std::string> warning;
};

/// Central-difference comparison of `analytic` against `objective` at `x`.
GradCheckResult check_gradient(const std::function<double(const Vector&)>& objective, const Vector& x,
                               const Vector& analytic, const GradCheckOptions& options);

/// Lets tests replace the analytic gradient before comparison.
using GradientTamper = std::function<void(ModelGradients&)>;

/// Builds the dataset's graphs from config.edge_rules, holds out a stratified
/// quarter of the nodes as unlabeled, and compares compute_gradients with
/// central differences (dropout disabled).
GradCheckResult finite_diff_check(const Dataset& dataset, const ModelParams& params, const TrainConfig& config,
                                  std::uint64_t seed, GradCheckOptions options = {},
                                  const GradientTamper& tamper = {});

}  // namespace popgcn
