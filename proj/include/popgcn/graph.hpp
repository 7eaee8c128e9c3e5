#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgcn/data.hpp"

namespace popgcn {

enum class EdgeKind { Threshold, Equality };

/// Edge rule for one demographic element: connect i and j when
/// |delta_i - delta_j| < beta (Threshold) or delta_i == delta_j (Equality).
struct EdgeRule {
    int element_index = 0;
    EdgeKind kind = EdgeKind::Threshold;
    double beta = 1.0;

    void validate() const;
};

/// Edge rule keyed by element name, as written in configuration files.
/// A missing beta on a threshold rule falls back to the element default.
struct EdgeRuleSpec {
    std::string element;
    EdgeKind kind = EdgeKind::Threshold;
    std::optional<double> beta;
};

/// W(m) = Sim o E(m): symmetric, nonnegative, zero diagonal.
struct AffinityMatrix {
    Matrix weights;
    std::string element_name;
};

/// D^{-1/2} (W + I) D^{-1/2} with D the degree of W + I.
struct PropagationMatrix {
    Matrix matrix;
    std::string element_name;
};

/// Default rule for an element: "age" thresholds at 2; gender/sex/APOE and
/// small-integer columns use equality; anything else thresholds at half the
/// column standard deviation.
EdgeRule default_edge_rule(const std::string& name, std::span<const double> column, int element_index);

/// One rule per demographic element of `dataset`, in column order. Specs
/// override defaults by element name; unknown names are a ConfigError.
std::vector<EdgeRule> resolve_edge_rules(const Dataset& dataset, std::span<const EdgeRuleSpec> specs);

Matrix build_edge_matrix(std::span<const double> delta_column, const EdgeRule& rule);

/// Pearson correlation between feature rows, rectified at zero.
Matrix similarity_matrix(const Matrix& features);

AffinityMatrix build_affinity(const Matrix& sim, const Matrix& edges, std::string element_name = {});

PropagationMatrix normalize_affinity(const AffinityMatrix& w);

/// One affinity per rule, sharing one similarity matrix.
std::vector<AffinityMatrix> build_affinities(const Dataset& dataset, std::span<const EdgeRule> rules);

std::vector<PropagationMatrix> build_propagations(const Dataset& dataset, std::span<const EdgeRule> rules);

/// Entrywise mean of the affinities, named by joining their element names with '+'.
AffinityMatrix average_affinities(std::span<const AffinityMatrix> affinities);

struct GraphStats {
    std::string element_name;
    EdgeRule rule;
    long long edge_count = 0;  // undirected
    double density = 0.0;
    std::vector<long long> degree_histogram;  // index = unweighted degree
    double mean_weight = 0.0;                 // over edges with nonzero affinity
};

GraphStats graph_stats(const Matrix& edges, const AffinityMatrix& affinity, const EdgeRule& rule);

/// Largest |eigenvalue| of a symmetric matrix estimated by power iteration.
double spectral_radius(const Matrix& m, int iterations = 1000);

}  // namespace popgcn
