#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace popgcn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexList = std::vector<int>;

/// Subjects as graph vertices: features X (N x d), labels in [0, K),
/// demographics (N x M) with one named column per demographic element.
struct Dataset {
    Matrix features;
    std::vector<int> labels;
    Matrix demographics;
    std::vector<std::string> element_names;
    int n_classes = 0;

    int n_nodes() const { return static_cast<int>(labels.size()); }
    int n_features() const { return static_cast<int>(features.cols()); }
    int n_elements() const { return static_cast<int>(element_names.size()); }

    /// N x K indicator matrix of the labels.
    Matrix one_hot() const;

    /// Index of the named element, or throws DataError.
    int element_index(const std::string& name) const;

    /// Copy restricted to a subset of demographic elements (by index, in order).
    Dataset with_elements(std::span<const int> elements) const;

    /// Throws DataError when any invariant is violated.
    void validate() const;
};

struct FoldSplit {
    IndexList train_idx;
    IndexList test_idx;
    int fold_id = 0;
};

struct SynthElement {
    std::string name;
    double class_correlation = 1.0;
};

struct SynthConfig {
    int n_nodes = 300;
    int n_features = 20;
    int n_classes = 3;
    double class_separation = 1.0;
    std::vector<SynthElement> informative_elements;
    std::vector<std::string> noise_elements;
    std::uint64_t seed = 0;

    void validate() const;
};

Dataset load_dataset(const std::filesystem::path& features_path,
                     const std::filesystem::path& labels_path,
                     const std::filesystem::path& demographics_path);

/// Writes the three CSV files read by load_dataset. Values are printed with
/// round-trip precision so output is byte-stable for identical input.
void save_dataset(const Dataset& dataset, const std::filesystem::path& directory);

/// Balanced labels, Gaussian class clusters, and demographic columns that
/// either track the label (informative) or are uniform noise.
Dataset generate_synthetic(const SynthConfig& cfg);

/// k stratified folds; test folds partition {0..N-1}.
std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

/// Deterministic per-purpose seed derived from a base seed and a stream id.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// 64-bit FNV-1a hash over a fold's sorted train and test indices.
std::uint64_t split_hash(const FoldSplit& fold);

}  // namespace popgcn
