#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgcn/report.hpp"

namespace popgcn {

struct DataPaths {
    std::filesystem::path features;
    std::filesystem::path labels;
    std::filesystem::path demographics;
};

/// Everything one CLI invocation needs. Exactly one of `paths` / `synth` is set.
struct RunConfig {
    std::optional<DataPaths> paths;
    std::optional<SynthConfig> synth;
    TrainConfig train;
    std::filesystem::path out;
    std::vector<std::string> baselines;
    std::vector<std::vector<std::string>> subsets;
};

/// Relative data paths are resolved against `base_dir` (the config file's directory).
RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir = {});
Json to_json(const RunConfig& config);

Dataset load_run_dataset(const RunConfig& config);

/// Subset expression: "singletons", "all" (every non-empty combination), or
/// ';'-separated groups of '+'-joined element names, e.g. "age+gender;fdg".
std::vector<std::vector<std::string>> parse_subsets(const std::string& expr, std::span<const std::string> elements);

struct SubsetResult {
    std::vector<std::string> elements;
    CVReport report;
};

/// Proposed-model CV restricted to each subset of demographic elements.
std::vector<SubsetResult> ablate_graph_subsets(const Dataset& dataset, const TrainConfig& config,
                                               std::span<const std::vector<std::string>> subsets);

struct GradCheckSummary {
    double max_relative_error = 0.0;
    std::vector<double> per_instance;
    std::vector<int> node_counts;
    std::size_t coordinates_checked = 0;
};

/// Random instances (N cycling through 6..12, d=4, K=3, M=2) checked with
/// dropout off at 64-bit precision.
GradCheckSummary run_gradcheck(std::uint64_t seed, int instances, const TrainConfig& config);

/// Subcommands: synth, graph-stats, cv, compare, gradcheck. Returns the
/// process exit code; errors go to `err` as one JSON line.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace popgcn
