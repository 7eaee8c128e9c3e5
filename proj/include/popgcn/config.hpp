#pragma once

#include <cstdint>
#include <vector>

#include "popgcn/graph.hpp"

namespace popgcn {

/// Hyperparameters shared by the proposed model and the baselines.
struct TrainConfig {
    std::vector<int> hidden_dims{16};
    double dropout_rate = 0.3;
    double l2_coeff = 5e-4;
    double learning_rate = 0.01;
    int phase1_epochs = 150;
    int max_total_epochs = 500;
    int patience = 30;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    std::vector<EdgeRuleSpec> edge_rules;
    int folds = 10;

    /// Throws ConfigError naming the offending "train.*" field.
    void validate() const;
};

}  // namespace popgcn
