#pragma once

#include <cstdint>

#include "json.hpp"

#include "popgcn/baselines.hpp"
#include "popgcn/config.hpp"
#include "popgcn/data.hpp"
#include "popgcn/graph.hpp"
#include "popgcn/train.hpp"

namespace popgcn {

using Json = nlohmann::json;

// Config parsing throws ConfigError with the dotted path of the bad field.
TrainConfig train_config_from_json(const Json& train, const Json& edge_rules);
SynthConfig synth_config_from_json(const Json& synth);
EdgeRuleSpec edge_rule_from_json(const Json& rule, const std::string& path);

Json to_json(const TrainConfig& config);
Json to_json(const SynthConfig& config);
Json to_json(const EdgeRule& rule, const std::string& element);
Json to_json(const GraphStats& stats);
Json to_json(const Metrics& metrics);
Json to_json(const FoldResult& fold);

/// {"config", "method", "elements", "architecture", "folds", "mean_acc", "std_acc"}
Json to_json(const CVReport& report);

/// Copy of `report` with every "wall_clock_s" member removed.
Json strip_wall_clock(const Json& report);

/// FNV-1a over the canonical dump of strip_wall_clock(report).
std::uint64_t report_hash(const Json& report);

}  // namespace popgcn
