#include "popgcn/report.hpp"

#include "popgcn/error.hpp"

#include <cmath>

namespace popgcn {
namespace {

void require_object(const Json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
}

void reject_unknown(const Json& j, const std::string& path, std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(path + "." + key, "unknown field");
    }
}

template <typename T>
void read(const Json& obj, const char* key, const std::string& path, T& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    const std::string where = path + "." + key;
    try {
        if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError(where, "expected a number");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where, "expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                    throw ConfigError(where, "expected a non-negative integer");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where, "expected a string");
        }
        out = v.get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(where, e.what());
    }
}

Json vector_json(const Vector& v) {
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

void strip_in_place(Json& j) {
    if (j.is_object()) {
        j.erase("wall_clock_s");
        for (auto& [key, value] : j.items()) strip_in_place(value);
    } else if (j.is_array()) {
        for (auto& value : j) strip_in_place(value);
    }
}

}  // namespace

EdgeRuleSpec edge_rule_from_json(const Json& rule, const std::string& path) {
    require_object(rule, path);
    reject_unknown(rule, path, {"element", "kind", "beta"});
    EdgeRuleSpec spec;
    if (!rule.contains("element")) throw ConfigError(path + ".element", "missing");
    read(rule, "element", path, spec.element);
    std::string kind = "threshold";
    read(rule, "kind", path, kind);
    if (kind == "threshold") {
        spec.kind = EdgeKind::Threshold;
    } else if (kind == "equality") {
        spec.kind = EdgeKind::Equality;
    } else {
        throw ConfigError(path + ".kind", "must be \"threshold\" or \"equality\"");
    }
    if (rule.contains("beta") && !rule.at("beta").is_null()) {
        double beta = 0.0;
        read(rule, "beta", path, beta);
        if (spec.kind == EdgeKind::Threshold && !(beta > 0.0))
            throw ConfigError(path + ".beta", "threshold rules need beta > 0");
        spec.beta = beta;
    }
    return spec;
}

TrainConfig train_config_from_json(const Json& train, const Json& edge_rules) {
    TrainConfig cfg;
    if (!train.is_null()) {
        require_object(train, "train");
        reject_unknown(train, "train",
                       {"hidden_dims", "dropout_rate", "l2_coeff", "learning_rate", "phase1_epochs",
                        "max_total_epochs", "patience", "val_fraction", "seed", "folds"});
        read(train, "hidden_dims", "train", cfg.hidden_dims);
        read(train, "dropout_rate", "train", cfg.dropout_rate);
        read(train, "l2_coeff", "train", cfg.l2_coeff);
        read(train, "learning_rate", "train", cfg.learning_rate);
        read(train, "phase1_epochs", "train", cfg.phase1_epochs);
        read(train, "max_total_epochs", "train", cfg.max_total_epochs);
        read(train, "patience", "train", cfg.patience);
        read(train, "val_fraction", "train", cfg.val_fraction);
        read(train, "seed", "train", cfg.seed);
        read(train, "folds", "train", cfg.folds);
    }
    if (!edge_rules.is_null()) {
        if (!edge_rules.is_array()) throw ConfigError("edge_rules", "expected an array");
        for (std::size_t i = 0; i < edge_rules.size(); ++i)
            cfg.edge_rules.push_back(edge_rule_from_json(edge_rules[i], "edge_rules[" + std::to_string(i) + "]"));
    }
    cfg.validate();
    return cfg;
}

SynthConfig synth_config_from_json(const Json& synth) {
    require_object(synth, "data.synth");
    const std::string path = "data.synth";
    reject_unknown(synth, path,
                   {"n_nodes", "n_features", "n_classes", "class_separation", "informative_elements",
                    "noise_elements", "seed"});
    SynthConfig cfg;
    read(synth, "n_nodes", path, cfg.n_nodes);
    read(synth, "n_features", path, cfg.n_features);
    read(synth, "n_classes", path, cfg.n_classes);
    read(synth, "class_separation", path, cfg.class_separation);
    read(synth, "seed", path, cfg.seed);
    if (synth.contains("informative_elements")) {
        const auto& arr = synth.at("informative_elements");
        if (!arr.is_array()) throw ConfigError(path + ".informative_elements", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string p = path + ".informative_elements[" + std::to_string(i) + "]";
            require_object(arr[i], p);
            reject_unknown(arr[i], p, {"name", "class_correlation"});
            SynthElement e;
            if (!arr[i].contains("name")) throw ConfigError(p + ".name", "missing");
            read(arr[i], "name", p, e.name);
            read(arr[i], "class_correlation", p, e.class_correlation);
            cfg.informative_elements.push_back(e);
        }
    }
    if (synth.contains("noise_elements")) {
        const auto& arr = synth.at("noise_elements");
        if (!arr.is_array()) throw ConfigError(path + ".noise_elements", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            if (!arr[i].is_string())
                throw ConfigError(path + ".noise_elements[" + std::to_string(i) + "]", "expected a string");
            cfg.noise_elements.push_back(arr[i].get<std::string>());
        }
    }
    cfg.validate();
    return cfg;
}

Json to_json(const TrainConfig& config) {
    Json rules = Json::array();
    for (const auto& r : config.edge_rules) {
        Json j{{"element", r.element}, {"kind", r.kind == EdgeKind::Threshold ? "threshold" : "equality"}};
        j["beta"] = r.beta ? Json(*r.beta) : Json(nullptr);
        rules.push_back(j);
    }
    return Json{{"hidden_dims", config.hidden_dims},
                {"dropout_rate", config.dropout_rate},
                {"l2_coeff", config.l2_coeff},
                {"learning_rate", config.learning_rate},
                {"phase1_epochs", config.phase1_epochs},
                {"max_total_epochs", config.max_total_epochs},
                {"patience", config.patience},
                {"val_fraction", config.val_fraction},
                {"seed", config.seed},
                {"folds", config.folds},
                {"edge_rules", rules}};
}

Json to_json(const SynthConfig& config) {
    Json informative = Json::array();
    for (const auto& e : config.informative_elements)
        informative.push_back({{"name", e.name}, {"class_correlation", e.class_correlation}});
    return Json{{"n_nodes", config.n_nodes},
                {"n_features", config.n_features},
                {"n_classes", config.n_classes},
                {"class_separation", config.class_separation},
                {"informative_elements", informative},
                {"noise_elements", config.noise_elements},
                {"seed", config.seed}};
}

Json to_json(const EdgeRule& rule, const std::string& element) {
    Json j{{"element", element}, {"kind", rule.kind == EdgeKind::Threshold ? "threshold" : "equality"}};
    j["beta"] = rule.kind == EdgeKind::Threshold ? Json(rule.beta) : Json(nullptr);
    return j;
}

Json to_json(const GraphStats& stats) {
    return Json{{"element", stats.element_name},
                {"rule", to_json(stats.rule, stats.element_name)},
                {"edge_count", stats.edge_count},
                {"density", stats.density},
                {"degree_histogram", stats.degree_histogram},
                {"mean_weight", stats.mean_weight}};
}

Json to_json(const Metrics& metrics) {
    Json per_class = Json::array();
    for (double a : metrics.per_class_accuracy) per_class.push_back(std::isnan(a) ? Json(nullptr) : Json(a));
    return Json{{"accuracy", metrics.accuracy}, {"per_class_accuracy", per_class}, {"confusion", metrics.confusion}};
}

Json to_json(const FoldResult& fold) {
    Json per_class = Json::array();
    for (double a : fold.metrics.per_class_accuracy)
        per_class.push_back(std::isnan(a) ? Json(nullptr) : Json(a));
    return Json{{"fold", fold.fold_id},
                {"accuracy", fold.metrics.accuracy},
                {"per_class_accuracy", per_class},
                {"confusion", fold.metrics.confusion},
                {"train_accuracy", fold.train_accuracy},
                {"omega_raw", vector_json(fold.omega_raw)},
                {"omega_normalized", vector_json(fold.omega_normalized)},
                {"stopped_epoch", fold.stopped_epoch},
                {"split_hash", fold.split_hash},
                {"wall_clock_s", fold.wall_clock_s}};
}

Json to_json(const CVReport& report) {
    Json folds = Json::array();
    for (const auto& f : report.folds) folds.push_back(to_json(f));
    return Json{{"config", to_json(report.config)},
                {"method", report.method},
                {"elements", report.elements},
                {"architecture", report.architecture},
                {"folds", folds},
                {"mean_acc", report.mean_accuracy},
                {"std_acc", report.std_accuracy}};
}

Json strip_wall_clock(const Json& report) {
    Json copy = report;
    strip_in_place(copy);
    return copy;
}

std::uint64_t report_hash(const Json& report) {
    const std::string text = strip_wall_clock(report).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace popgcn
