#include "popgcn/train.hpp"

#include "popgcn/error.hpp"
#include "popgcn/optim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

namespace popgcn {

void TrainConfig::validate() const {
    if (hidden_dims.empty()) throw ConfigError("train.hidden_dims", "need at least one hidden layer");
    for (int h : hidden_dims)
        if (h < 1) throw ConfigError("train.hidden_dims", "widths must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("train.dropout_rate", "must be in [0, 1)");
    if (!(l2_coeff >= 0.0 && std::isfinite(l2_coeff))) throw ConfigError("train.l2_coeff", "must be >= 0");
    if (!(learning_rate > 0.0 && std::isfinite(learning_rate)))
        throw ConfigError("train.learning_rate", "must be > 0");
    if (phase1_epochs < 0) throw ConfigError("train.phase1_epochs", "must be >= 0");
    if (max_total_epochs <= phase1_epochs)
        throw ConfigError("train.max_total_epochs", "must exceed phase1_epochs");
    if (patience < 1) throw ConfigError("train.patience", "must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction", "must be in [0, 1)");
    if (folds < 2) throw ConfigError("train.folds", "must be >= 2");
    for (const auto& r : edge_rules)
        if (r.kind == EdgeKind::Threshold && r.beta && !(*r.beta > 0.0 && std::isfinite(*r.beta)))
            throw ConfigError("edge_rules." + r.element + ".beta", "threshold rules need a finite beta > 0");
}

std::vector<double> class_weights(std::span<const int> labels, std::span<const int> mask, int n_classes) {
    if (mask.empty()) throw DataError("class_weights: empty mask");
    std::vector<long> counts(static_cast<std::size_t>(n_classes), 0);
    for (int i : mask) {
        if (i < 0 || static_cast<std::size_t>(i) >= labels.size())
            throw DataError("class_weights: mask index " + std::to_string(i) + " out of range");
        const int y = labels[i];
        if (y < 0 || y >= n_classes) throw DataError("class_weights: label " + std::to_string(y) + " out of range");
        ++counts[y];
    }
    std::vector<double> weights(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) throw DataError("class_weights: class " + std::to_string(k) + " absent from mask");
        weights[k] = static_cast<double>(mask.size()) / (static_cast<double>(n_classes) * counts[k]);
    }
    return weights;
}

ValidationSplit split_validation(std::span<const int> labels, std::span<const int> train_idx, double fraction,
                                 std::uint64_t seed) {
    std::map<int, IndexList> by_class;
    for (int i : train_idx) by_class[labels[i]].push_back(i);
    Rng rng(seed);
    ValidationSplit split;
    for (auto& [cls, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        auto n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
        n_val = std::min(n_val, members.size() - 1);
        split.val.insert(split.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
        split.fit.insert(split.fit.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
    }
    std::sort(split.fit.begin(), split.fit.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

namespace {

double accuracy_on(const Matrix& probs, std::span<const int> labels, std::span<const int> idx) {
    if (idx.empty()) return 0.0;
    long correct = 0;
    for (int i : idx) {
        Eigen::Index pred = 0;
        probs.row(i).maxCoeff(&pred);
        correct += pred == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace

TrainedModel train_model(const Dataset& dataset, std::vector<PropagationMatrix> props, const TrainConfig& config,
                         std::span<const int> train_idx, std::uint64_t seed, FusionMode fusion) {
    config.validate();
    dataset.validate();
    if (props.empty()) throw ShapeError("train_model: no graphs");
    for (const auto& p : props)
        if (p.matrix.rows() != dataset.n_nodes() || p.matrix.cols() != dataset.n_nodes())
            throw ShapeError("train_model: graph '" + p.element_name + "' does not match " +
                             std::to_string(dataset.n_nodes()) + " nodes");

    Rng init_rng(derive_seed(seed, 1));
    Rng dropout_rng(derive_seed(seed, 2));
    const auto split = split_validation(dataset.labels, train_idx, config.val_fraction, derive_seed(seed, 3));
    const auto weights = class_weights(dataset.labels, split.fit, dataset.n_classes);
    const bool has_val = !split.val.empty();
    const auto& monitor_idx = has_val ? split.val : split.fit;

    TrainedModel model;
    model.params = init_params(dataset.n_features(), config.hidden_dims, dataset.n_classes,
                               static_cast<int>(props.size()), init_rng);
    model.props = std::move(props);
    model.omega_after_phase1 = model.params.omega;

    const Eigen::Index n_theta = model.params.n_theta();
    const Eigen::Index n_omega = model.params.omega.size();
    const Adam::Options adam_opts{config.learning_rate};
    Adam theta_opt(n_theta, adam_opts);
    Adam omega_opt(n_omega, adam_opts);

    double best = std::numeric_limits<double>::infinity();
    ModelParams best_params = model.params;
    int since_best = 0;

    for (int epoch = 1; epoch <= config.max_total_epochs; ++epoch) {
        const int phase = epoch <= config.phase1_epochs ? 1 : 2;
        const auto trace = model_forward(model.props, dataset.features, model.params, config.dropout_rate,
                                         dropout_rng, true);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = phase;
        rec.train_loss = weighted_cross_entropy(trace.probs, dataset.labels, split.fit, weights);
        if (!std::isfinite(rec.train_loss)) throw TrainingError(epoch, "non-finite training loss");

        const auto grads = compute_gradients(trace, model.props, dataset.labels, split.fit, weights,
                                             config.l2_coeff, model.params);
        Vector flat = flatten(model.params);
        const Vector g = flatten(grads);
        theta_opt.step(flat.head(n_theta), g.head(n_theta));
        if (phase == 2 && fusion == FusionMode::Attention) omega_opt.step(flat.tail(n_omega), g.tail(n_omega));
        unflatten(flat, model.params);
        if (!flat.allFinite()) throw TrainingError(epoch, "non-finite parameters after update");

        Rng unused(0);
        const auto eval = model_forward(model.props, dataset.features, model.params, 0.0, unused, false);
        rec.val_loss = weighted_cross_entropy(eval.probs, dataset.labels, monitor_idx, weights);
        if (!std::isfinite(rec.val_loss)) throw TrainingError(epoch, "non-finite validation loss");
        rec.train_accuracy = accuracy_on(eval.probs, dataset.labels, split.fit);
        rec.val_accuracy = accuracy_on(eval.probs, dataset.labels, monitor_idx);
        rec.omega = model.params.omega;
        model.history.push_back(rec);
        model.stopped_epoch = epoch;

        if (phase == 1) {
            model.omega_after_phase1 = model.params.omega;
            continue;
        }
        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_params = model.params;
            model.best_epoch = epoch;
            model.checkpoints.push_back({epoch, rec.val_loss});
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    model.params = std::move(best_params);
    return model;
}

Metrics metrics_from_probs(const Matrix& probs, std::span<const int> labels, std::span<const int> idx,
                           int n_classes) {
    Metrics m;
    m.confusion.assign(static_cast<std::size_t>(n_classes), std::vector<int>(static_cast<std::size_t>(n_classes), 0));
    long correct = 0;
    for (int i : idx) {
        Eigen::Index pred = 0;
        probs.row(i).maxCoeff(&pred);
        ++m.confusion[labels[i]][pred];
        correct += pred == labels[i];
    }
    m.accuracy = idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
    for (int k = 0; k < n_classes; ++k) {
        long total = 0;
        for (int v : m.confusion[k]) total += v;
        m.per_class_accuracy.push_back(total ? static_cast<double>(m.confusion[k][k]) / total
                                             : std::numeric_limits<double>::quiet_NaN());
    }
    return m;
}

Metrics evaluate(const TrainedModel& model, const Dataset& dataset, std::span<const int> test_idx) {
    Rng unused(0);
    const auto trace = model_forward(model.props, dataset.features, model.params, 0.0, unused, false);
    return metrics_from_probs(trace.probs, dataset.labels, test_idx, dataset.n_classes);
}

std::vector<double> CVReport::accuracies() const {
    std::vector<double> out;
    for (const auto& f : folds) out.push_back(f.metrics.accuracy);
    return out;
}

std::vector<FoldSplit> cv_splits(const Dataset& dataset, const TrainConfig& config) {
    return stratified_kfold(dataset.labels, config.folds, derive_seed(config.seed, 0));
}

std::uint64_t fold_seed(const TrainConfig& config, int fold_id) {
    return derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(fold_id));
}

void parallel_for(int count, const std::function<void(int)>& fn) {
    const int workers = std::clamp(static_cast<int>(std::thread::hardware_concurrency()), 1, std::max(count, 1));
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

CVReport run_folds(std::span<const FoldSplit> folds, const TrainConfig& config, const FoldRunner& runner) {
    CVReport report;
    report.config = config;
    report.folds.resize(folds.size());
    parallel_for(static_cast<int>(folds.size()), [&](int f) {
        const auto start = std::chrono::steady_clock::now();
        FoldResult result = runner(folds[f], fold_seed(config, folds[f].fold_id));
        result.fold_id = folds[f].fold_id;
        result.split_hash = split_hash(folds[f]);
        result.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        report.folds[f] = std::move(result);
    });

    const auto acc = report.accuracies();
    const double n = static_cast<double>(acc.size());
    double sum = 0.0;
    for (double a : acc) sum += a;
    report.mean_accuracy = acc.empty() ? 0.0 : sum / n;
    double ss = 0.0;
    for (double a : acc) ss += (a - report.mean_accuracy) * (a - report.mean_accuracy);
    report.std_accuracy = acc.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return report;
}

CVReport run_cv(const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    dataset.validate();
    const auto rules = resolve_edge_rules(dataset, config.edge_rules);
    const auto props = build_propagations(dataset, rules);
    const auto folds = cv_splits(dataset, config);

    auto report = run_folds(folds, config, [&](const FoldSplit& fold, std::uint64_t seed) {
        const auto model = train_model(dataset, props, config, fold.train_idx, seed);
        FoldResult r;
        r.metrics = evaluate(model, dataset, fold.test_idx);
        r.train_accuracy = evaluate(model, dataset, fold.train_idx).accuracy;
        r.omega_raw = model.params.omega;
        const double l1 = model.params.omega.cwiseAbs().sum();
        r.omega_normalized = l1 > 0.0 ? Vector(model.params.omega / l1) : Vector(model.params.omega);
        r.stopped_epoch = model.stopped_epoch;
        return r;
    });
    report.method = "proposed";
    report.elements = dataset.element_names;
    report.architecture = config.hidden_dims;
    report.architecture.push_back(dataset.n_classes);
    return report;
}

}  // namespace popgcn
