#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "popgcn/config.hpp"
#include "popgcn/data.hpp"
#include "popgcn/graph.hpp"
#include "popgcn/model.hpp"

namespace popgcn {

/// Inverse-frequency weights w_k = |mask| / (K * count_k). Throws DataError
/// when a class has no member in the mask.
std::vector<double> class_weights(std::span<const int> labels, std::span<const int> mask, int n_classes);

struct ValidationSplit {
    IndexList fit;
    IndexList val;
};

/// Stratified hold-out of round(fraction * count) nodes per class from
/// train_idx, always leaving at least one node of each class in `fit`.
ValidationSplit split_validation(std::span<const int> labels, std::span<const int> train_idx, double fraction,
                                 std::uint64_t seed);

/// Whether the fusion weights are learned (proposed model) or held at 1/M.
enum class FusionMode { Attention, Fixed };

struct EpochRecord {
    int epoch = 0;
    int phase = 1;
    double train_loss = 0.0;  // dropout-mode loss on the fit nodes
    double val_loss = 0.0;    // inference-mode loss on the validation nodes (fit nodes when none)
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    Vector omega;  // fusion weights after this epoch's update
};

struct Checkpoint {
    int epoch = 0;
    double val_loss = 0.0;
};

struct TrainedModel {
    ModelParams params;
    std::vector<PropagationMatrix> props;
    std::vector<EpochRecord> history;
    std::vector<Checkpoint> checkpoints;
    int stopped_epoch = 0;
    int best_epoch = 0;
    Vector omega_after_phase1;
};

/// Two-phase schedule. Phase 1 trains the filters with omega frozen at 1/M
/// for config.phase1_epochs epochs; phase 2 trains filters and omega jointly
/// (omega stays frozen under FusionMode::Fixed) with early stopping on the
/// validation loss. Returns the best phase-2 parameters.
TrainedModel train_model(const Dataset& dataset, std::vector<PropagationMatrix> props, const TrainConfig& config,
                         std::span<const int> train_idx, std::uint64_t seed,
                         FusionMode fusion = FusionMode::Attention);

struct Metrics {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;  // NaN for classes absent from the evaluated nodes
    std::vector<std::vector<int>> confusion;  // [true][predicted]
};

Metrics metrics_from_probs(const Matrix& probs, std::span<const int> labels, std::span<const int> idx,
                           int n_classes);

/// Inference-mode accuracy on test_idx.
Metrics evaluate(const TrainedModel& model, const Dataset& dataset, std::span<const int> test_idx);

struct FoldResult {
    int fold_id = 0;
    Metrics metrics;
    double train_accuracy = 0.0;
    Vector omega_raw;
    Vector omega_normalized;  // omega / sum |omega|
    int stopped_epoch = 0;
    std::uint64_t split_hash = 0;
    double wall_clock_s = 0.0;
};

struct CVReport {
    std::string method;
    std::vector<std::string> elements;
    std::vector<int> architecture;
    TrainConfig config;
    std::vector<FoldResult> folds;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // sample standard deviation

    std::vector<double> accuracies() const;
};

/// Splits used by every CV driver for this dataset and config.
std::vector<FoldSplit> cv_splits(const Dataset& dataset, const TrainConfig& config);

/// Seed handed to the fold-th training run.
std::uint64_t fold_seed(const TrainConfig& config, int fold_id);

using FoldRunner = std::function<FoldResult(const FoldSplit&, std::uint64_t seed)>;

/// Runs every fold (concurrently when hardware allows), stamps split hashes
/// and wall-clock time, and aggregates mean and standard deviation.
CVReport run_folds(std::span<const FoldSplit> folds, const TrainConfig& config, const FoldRunner& runner);

/// Builds graphs once on all nodes, trains on each fold's train nodes and
/// evaluates on its test nodes.
CVReport run_cv(const Dataset& dataset, const TrainConfig& config);

/// Runs fn(0..count-1) on up to hardware_concurrency threads; rethrows the
/// first exception.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace popgcn
