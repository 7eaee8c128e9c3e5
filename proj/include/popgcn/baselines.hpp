#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "popgcn/config.hpp"
#include "popgcn/data.hpp"
#include "popgcn/model.hpp"
#include "popgcn/train.hpp"

namespace popgcn {

enum class BaselineKind { Linear, DenseNN, AveragedGraphGCN };

/// Report key: "linear", "dense_nn" or "avg_gcn".
std::string to_string(BaselineKind kind);
BaselineKind baseline_from_string(const std::string& name);

/// Fully connected net on node features only. weights[l] is in x out; ReLU
/// after every layer but the last.
struct DenseNet {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    Eigen::Index size() const;
};

/// Zero weights when zero_init, Glorot-uniform otherwise; biases start at zero.
DenseNet init_dense_net(int n_inputs, std::span<const int> hidden_dims, int n_outputs, bool zero_init, Rng& rng);

struct DenseTrace {
    std::vector<Matrix> masks;
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre_activations;
    Matrix probs;
};

DenseTrace dense_forward(const DenseNet& net, const Matrix& x, double dropout_rate, Rng& rng, bool training);

/// Gradient of weighted cross-entropy + l2 * sum ||W||_F^2 (biases unpenalised),
/// returned in the same layout as the net.
DenseNet dense_gradients(const DenseNet& net, const DenseTrace& trace, std::span<const int> labels,
                         std::span<const int> mask, std::span<const double> class_weights, double l2_coeff);

Vector flatten(const DenseNet& net);
void unflatten(const Vector& flat, DenseNet& net);

struct BaselineResult {
    BaselineKind kind = BaselineKind::Linear;
    std::vector<int> architecture;  // hidden widths followed by K
    Metrics test;
    double train_accuracy = 0.0;
    double initial_loss = 0.0;  // inference-mode fit loss before the first update
    int stopped_epoch = 0;
    Matrix probs;               // inference-mode probabilities for every node
};

/// Multinomial logistic regression (single d -> K affine map, zero init).
BaselineResult train_linear(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                            std::uint64_t seed);

/// d -> hidden_dims -> K feed-forward net; graphs unused.
BaselineResult train_dense_nn(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                              std::uint64_t seed);

/// One GC branch on the normalised mean of all affinity matrices, no fusion layer.
BaselineResult train_avg_graph_gcn(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                                   std::uint64_t seed);

/// Same splits and fold seeds as run_cv.
CVReport run_baseline_cv(const Dataset& dataset, const TrainConfig& config, BaselineKind kind);

}  // namespace popgcn
