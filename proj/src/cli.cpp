#include "popgcn/cli.hpp"

#include "popgcn/baselines.hpp"
#include "popgcn/error.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace popgcn {
namespace {

constexpr double kGradCheckTolerance = 1e-5;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, sep)) parts.push_back(part);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

std::string read_path(const Json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) throw ConfigError(path + "." + key, "missing");
    if (!obj.at(key).is_string()) throw ConfigError(path + "." + key, "expected a string");
    return obj.at(key).get<std::string>();
}

Json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("config", e.what());
    }
}

void write_json(const Json& j, const std::filesystem::path& out_path, std::ostream& out) {
    if (out_path.empty()) {
        out << j.dump(2) << '\n';
        return;
    }
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    std::ofstream file(out_path);
    if (!file) throw ConfigError("out", "cannot write " + out_path.string());
    file << j.dump(2) << '\n';
    if (!file) throw ConfigError("out", "failed writing " + out_path.string());
}

SynthConfig default_synth() {
    SynthConfig cfg;
    cfg.informative_elements = {{"informative", 0.9}};
    cfg.noise_elements = {"noise"};
    return cfg;
}

TrainConfig restrict_rules(TrainConfig config, std::span<const std::string> elements) {
    std::erase_if(config.edge_rules, [&](const EdgeRuleSpec& r) {
        return std::find(elements.begin(), elements.end(), r.element) == elements.end();
    });
    return config;
}

void error_line(std::ostream& err, const std::string& kind, const std::string& field, const std::string& message) {
    Json j{{"error", kind}, {"message", message}};
    if (!field.empty()) j["field"] = field;
    err << j.dump() << '\n';
}

}  // namespace

RunConfig parse_run_config(const Json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "data" && key != "train" && key != "edge_rules" && key != "out" && key != "compare")
            throw ConfigError(key, "unknown field");

    RunConfig cfg;
    if (!j.contains("data") || !j.at("data").is_object()) throw ConfigError("data", "missing data section");
    const auto& data = j.at("data");
    const bool has_synth = data.contains("synth");
    const bool has_paths = data.contains("features") || data.contains("labels") || data.contains("demographics");
    if (has_synth == has_paths) throw ConfigError("data", "give exactly one of file paths or \"synth\"");
    if (has_synth) {
        for (const auto& [key, value] : data.items())
            if (key != "synth") throw ConfigError("data." + key, "unknown field");
        cfg.synth = synth_config_from_json(data.at("synth"));
    } else {
        for (const auto& [key, value] : data.items())
            if (key != "features" && key != "labels" && key != "demographics")
                throw ConfigError("data." + key, "unknown field");
        cfg.paths = DataPaths{resolve(base_dir, read_path(data, "features", "data")),
                              resolve(base_dir, read_path(data, "labels", "data")),
                              resolve(base_dir, read_path(data, "demographics", "data"))};
    }

    cfg.train = train_config_from_json(j.value("train", Json()), j.value("edge_rules", Json()));
    if (j.contains("out")) {
        if (!j.at("out").is_string()) throw ConfigError("out", "expected a string");
        cfg.out = resolve(base_dir, j.at("out").get<std::string>());
    }

    cfg.baselines = {"linear", "dense_nn", "avg_gcn"};
    if (j.contains("compare")) {
        const auto& cmp = j.at("compare");
        if (!cmp.is_object()) throw ConfigError("compare", "expected an object");
        for (const auto& [key, value] : cmp.items())
            if (key != "baselines" && key != "subsets") throw ConfigError("compare." + key, "unknown field");
        if (cmp.contains("baselines")) {
            cfg.baselines.clear();
            if (!cmp.at("baselines").is_array()) throw ConfigError("compare.baselines", "expected an array");
            for (const auto& b : cmp.at("baselines")) {
                if (!b.is_string()) throw ConfigError("compare.baselines", "expected strings");
                try {
                    baseline_from_string(b.get<std::string>());
                } catch (const ConfigError& e) {
                    throw ConfigError("compare.baselines", e.what());
                }
                cfg.baselines.push_back(b.get<std::string>());
            }
        }
        if (cmp.contains("subsets")) {
            const auto& subs = cmp.at("subsets");
            if (!subs.is_array()) throw ConfigError("compare.subsets", "expected an array of name arrays");
            for (const auto& s : subs) {
                if (!s.is_array() || s.empty()) throw ConfigError("compare.subsets", "each subset must be a non-empty array");
                std::vector<std::string> names;
                for (const auto& n : s) {
                    if (!n.is_string()) throw ConfigError("compare.subsets", "element names must be strings");
                    names.push_back(n.get<std::string>());
                }
                cfg.subsets.push_back(names);
            }
        }
    }
    return cfg;
}

Json to_json(const RunConfig& config) {
    Json data;
    if (config.synth) {
        data["synth"] = to_json(*config.synth);
    } else if (config.paths) {
        data = {{"features", config.paths->features.string()},
                {"labels", config.paths->labels.string()},
                {"demographics", config.paths->demographics.string()}};
    }
    Json train = to_json(config.train);
    Json rules = train["edge_rules"];
    train.erase("edge_rules");
    return Json{{"data", data},
                {"train", train},
                {"edge_rules", rules},
                {"out", config.out.string()},
                {"compare", {{"baselines", config.baselines}, {"subsets", config.subsets}}}};
}

namespace {

// Config echo for reports; the output location does not affect results.
Json report_config(const RunConfig& config) {
    Json j = to_json(config);
    j.erase("out");
    return j;
}

}  // namespace

Dataset load_run_dataset(const RunConfig& config) {
    if (config.synth) return generate_synthetic(*config.synth);
    if (!config.paths) throw ConfigError("data", "no data source");
    return load_dataset(config.paths->features, config.paths->labels, config.paths->demographics);
}

std::vector<std::vector<std::string>> parse_subsets(const std::string& expr, std::span<const std::string> elements) {
    std::vector<std::vector<std::string>> out;
    if (expr == "singletons") {
        for (const auto& e : elements) out.push_back({e});
        return out;
    }
    if (expr == "all") {
        const std::size_t m = elements.size();
        for (std::size_t size = 1; size <= m; ++size) {
            std::vector<bool> pick(m, false);
            std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
            do {
                std::vector<std::string> subset;
                for (std::size_t i = 0; i < m; ++i)
                    if (pick[i]) subset.push_back(elements[i]);
                out.push_back(subset);
            } while (std::prev_permutation(pick.begin(), pick.end()));
        }
        return out;
    }
    for (const auto& group : split(expr, ';')) {
        std::vector<std::string> subset;
        for (const auto& name : split(group, '+')) {
            if (name.empty()) throw ConfigError("subsets", "empty element name in '" + group + "'");
            if (std::find(elements.begin(), elements.end(), name) == elements.end())
                throw ConfigError("subsets", "unknown element '" + name + "'");
            subset.push_back(name);
        }
        if (subset.empty()) throw ConfigError("subsets", "empty subset");
        out.push_back(subset);
    }
    return out;
}

std::vector<SubsetResult> ablate_graph_subsets(const Dataset& dataset, const TrainConfig& config,
                                               std::span<const std::vector<std::string>> subsets) {
    std::vector<SubsetResult> results;
    for (const auto& subset : subsets) {
        if (subset.empty()) throw ConfigError("subsets", "empty subset");
        std::vector<int> idx;
        for (const auto& name : subset) idx.push_back(dataset.element_index(name));
        const Dataset restricted = dataset.with_elements(idx);
        results.push_back({subset, run_cv(restricted, restrict_rules(config, subset))});
    }
    return results;
}

GradCheckSummary run_gradcheck(std::uint64_t seed, int instances, const TrainConfig& config) {
    GradCheckSummary summary;
    for (int i = 0; i < instances; ++i) {
        SynthConfig sc;
        sc.n_nodes = 6 + i % 7;
        sc.n_features = 4;
        sc.n_classes = 3;
        sc.class_separation = 1.0;
        sc.informative_elements = {{"g_informative", 0.8}};
        sc.noise_elements = {"g_noise"};
        sc.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        const Dataset ds = generate_synthetic(sc);

        Rng rng(derive_seed(seed, 500 + static_cast<std::uint64_t>(i)));
        ModelParams params = init_params(ds.n_features(), config.hidden_dims, ds.n_classes, 2, rng);
        std::uniform_real_distribution<double> omega(0.25, 1.25);
        for (Eigen::Index m = 0; m < params.omega.size(); ++m) params.omega(m) = omega(rng);

        const auto result =
            finite_diff_check(ds, params, restrict_rules(config, ds.element_names),
                              derive_seed(seed, 900 + static_cast<std::uint64_t>(i)));
        summary.per_instance.push_back(result.max_relative_error);
        summary.node_counts.push_back(sc.n_nodes);
        summary.coordinates_checked += result.coordinates_checked;
        summary.max_relative_error = std::max(summary.max_relative_error, result.max_relative_error);
    }
    return summary;
}

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-graph GCN with attention fusion for population-graph node classification", "popgcn"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> folds;
    std::string out_path;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as CSV files");
    SynthConfig synth_cli = default_synth();
    synth->add_option("--config", config_path, "Run config JSON (uses data.synth)");
    synth->add_option("--seed", seed, "Random seed");
    synth->add_option("--out", out_path, "Output directory")->required();
    synth->add_option("--nodes", synth_cli.n_nodes, "Number of subjects");
    synth->add_option("--features", synth_cli.n_features, "Feature dimension");
    synth->add_option("--classes", synth_cli.n_classes, "Number of classes");
    synth->add_option("--separation", synth_cli.class_separation, "Distance between class means");

    auto* stats = app.add_subcommand("graph-stats", "Per-element graph statistics as JSON");
    stats->add_option("--config", config_path, "Run config JSON")->required();
    stats->add_option("--seed", seed, "Random seed");
    stats->add_option("--out", out_path, "Output file (stdout when omitted)");

    auto* cv = app.add_subcommand("cv", "Cross-validate the multi-graph model");
    cv->add_option("--config", config_path, "Run config JSON")->required();
    cv->add_option("--seed", seed, "Random seed");
    cv->add_option("--folds", folds, "Number of folds");
    cv->add_option("--out", out_path, "Report path (config \"out\" or stdout when omitted)");

    auto* compare = app.add_subcommand("compare", "Proposed model vs baselines and graph-subset ablations");
    std::optional<std::string> baselines_flag;
    std::optional<std::string> subsets_flag;
    compare->add_option("--config", config_path, "Run config JSON")->required();
    compare->add_option("--seed", seed, "Random seed");
    compare->add_option("--folds", folds, "Number of folds");
    compare->add_option("--out", out_path, "Report path");
    compare->add_option("--baselines", baselines_flag, "Comma list of linear,dense_nn,avg_gcn (or none)");
    compare->add_option("--subsets", subsets_flag, "singletons | all | a+b;c");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
    int instances = 5;
    gradcheck->add_option("--config", config_path, "Run config JSON (train section is used)");
    gradcheck->add_option("--seed", seed, "Random seed");
    gradcheck->add_option("--instances", instances, "Number of random instances")->check(CLI::PositiveNumber);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << app.help();
        error_line(err, "usage", "", e.what());
        return 2;
    }

    try {
        std::optional<RunConfig> run;
        if (!config_path.empty()) {
            const std::filesystem::path path(config_path);
            run = parse_run_config(load_json_file(path), path.parent_path());
        }
        auto apply_flags = [&](RunConfig& cfg) {
            if (seed) {
                cfg.train.seed = *seed;
                if (cfg.synth) cfg.synth->seed = *seed;
            }
            if (folds) {
                cfg.train.folds = *folds;
                cfg.train.validate();
            }
            if (!out_path.empty()) cfg.out = out_path;
        };

        if (synth->parsed()) {
            SynthConfig sc = synth_cli;
            if (run) {
                if (!run->synth) throw ConfigError("data.synth", "synth needs a synthetic data section");
                sc = *run->synth;
            }
            if (seed) sc.seed = *seed;
            save_dataset(generate_synthetic(sc), out_path);
            return 0;
        }

        if (gradcheck->parsed()) {
            TrainConfig train = run ? run->train : TrainConfig{};
            const auto start = std::chrono::steady_clock::now();
            const auto summary = run_gradcheck(seed.value_or(train.seed), instances, train);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            const bool pass = summary.max_relative_error < kGradCheckTolerance;
            out << Json{{"max_relative_error", summary.max_relative_error},
                        {"per_instance", summary.per_instance},
                        {"node_counts", summary.node_counts},
                        {"coordinates_checked", summary.coordinates_checked},
                        {"tolerance", kGradCheckTolerance},
                        {"pass", pass},
                        {"wall_clock_s", secs}}
                       .dump()
                << '\n';
            return pass ? 0 : 1;
        }

        RunConfig& cfg = *run;
        apply_flags(cfg);
        const Dataset dataset = load_run_dataset(cfg);

        if (stats->parsed()) {
            const auto rules = resolve_edge_rules(dataset, cfg.train.edge_rules);
            const Matrix sim = similarity_matrix(dataset.features);
            Json graphs = Json::array();
            for (const auto& rule : rules) {
                std::vector<double> column(dataset.demographics.col(rule.element_index).data(),
                                           dataset.demographics.col(rule.element_index).data() + dataset.n_nodes());
                const Matrix edges = build_edge_matrix(column, rule);
                const auto w = build_affinity(sim, edges, dataset.element_names[rule.element_index]);
                graphs.push_back(to_json(graph_stats(edges, w, rule)));
            }
            write_json({{"n_nodes", dataset.n_nodes()}, {"graphs", graphs}}, cfg.out, out);
            return 0;
        }

        if (cv->parsed()) {
            Json report = to_json(run_cv(dataset, cfg.train));
            report["config"] = report_config(cfg);
            write_json(report, cfg.out, out);
            return 0;
        }

        if (compare->parsed()) {
            if (baselines_flag) {
                cfg.baselines.clear();
                if (*baselines_flag != "none")
                    for (const auto& b : split(*baselines_flag, ',')) {
                        baseline_from_string(b);
                        cfg.baselines.push_back(b);
                    }
            }
            if (subsets_flag) cfg.subsets = parse_subsets(*subsets_flag, dataset.element_names);

            Json report{{"config", report_config(cfg)}};
            report["proposed"] = to_json(run_cv(dataset, cfg.train));
            for (const auto& b : cfg.baselines)
                report[b] = to_json(run_baseline_cv(dataset, cfg.train, baseline_from_string(b)));
            Json subsets = Json::object();
            for (const auto& r : ablate_graph_subsets(dataset, cfg.train, cfg.subsets))
                subsets[join(r.elements, "+")] = to_json(r.report);
            report["subsets"] = subsets;
            write_json(report, cfg.out, out);
            return 0;
        }
    } catch (const ConfigError& e) {
        error_line(err, "config", e.field(), e.what());
        return 1;
    } catch (const DataError& e) {
        error_line(err, "data", "", e.what());
        return 1;
    } catch (const std::exception& e) {
        error_line(err, "runtime", "", e.what());
        return 1;
    }
    return 2;
}

}  // namespace popgcn
