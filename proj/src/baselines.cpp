#include "popgcn/baselines.hpp"

#include "popgcn/error.hpp"
#include "popgcn/optim.hpp"

#include <cmath>
#include <limits>

namespace popgcn {
namespace {

Matrix inverted_dropout(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return Matrix::Ones(rows, cols);
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    Matrix mask(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = keep(rng) ? scale : 0.0;
    return mask;
}

std::vector<int> architecture_of(const TrainConfig& config, int n_classes, bool hidden) {
    std::vector<int> arch = hidden ? config.hidden_dims : std::vector<int>{};
    arch.push_back(n_classes);
    return arch;
}

/// Shared loop for the feature-only baselines: Adam on all parameters,
/// early stopping on validation loss from the first epoch.
BaselineResult fit_dense(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                         std::uint64_t seed, BaselineKind kind, DenseNet net, double dropout_rate) {
    const auto split = split_validation(dataset.labels, fold.train_idx, config.val_fraction, derive_seed(seed, 3));
    const auto weights = class_weights(dataset.labels, split.fit, dataset.n_classes);
    const auto& monitor_idx = split.val.empty() ? split.fit : split.val;
    Rng dropout_rng(derive_seed(seed, 2));
    Rng unused(0);

    BaselineResult result;
    result.kind = kind;
    result.initial_loss = weighted_cross_entropy(dense_forward(net, dataset.features, 0.0, unused, false).probs,
                                                 dataset.labels, split.fit, weights);

    Adam opt(net.size(), Adam::Options{config.learning_rate});
    double best = std::numeric_limits<double>::infinity();
    DenseNet best_net = net;
    int since_best = 0;
    for (int epoch = 1; epoch <= config.max_total_epochs; ++epoch) {
        const auto trace = dense_forward(net, dataset.features, dropout_rate, dropout_rng, true);
        const auto grads = dense_gradients(net, trace, dataset.labels, split.fit, weights, config.l2_coeff);
        Vector flat = flatten(net);
        opt.step(flat, flatten(grads));
        unflatten(flat, net);

        const auto eval = dense_forward(net, dataset.features, 0.0, unused, false);
        const double val_loss = weighted_cross_entropy(eval.probs, dataset.labels, monitor_idx, weights);
        if (!std::isfinite(val_loss)) throw TrainingError(epoch, "non-finite validation loss");
        result.stopped_epoch = epoch;
        if (val_loss < best) {
            best = val_loss;
            best_net = net;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    result.probs = dense_forward(best_net, dataset.features, 0.0, unused, false).probs;
    result.test = metrics_from_probs(result.probs, dataset.labels, fold.test_idx, dataset.n_classes);
    result.train_accuracy =
        metrics_from_probs(result.probs, dataset.labels, fold.train_idx, dataset.n_classes).accuracy;
    return result;
}

}  // namespace

std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::Linear: return "linear";
        case BaselineKind::DenseNN: return "dense_nn";
        case BaselineKind::AveragedGraphGCN: return "avg_gcn";
    }
    return "unknown";
}

BaselineKind baseline_from_string(const std::string& name) {
    if (name == "linear") return BaselineKind::Linear;
    if (name == "dense_nn") return BaselineKind::DenseNN;
    if (name == "avg_gcn") return BaselineKind::AveragedGraphGCN;
    throw ConfigError("baselines", "unknown baseline '" + name + "'");
}

Eigen::Index DenseNet::size() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
}

DenseNet init_dense_net(int n_inputs, std::span<const int> hidden_dims, int n_outputs, bool zero_init, Rng& rng) {
    std::vector<int> widths{n_inputs};
    widths.insert(widths.end(), hidden_dims.begin(), hidden_dims.end());
    widths.push_back(n_outputs);
    DenseNet net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        if (widths[l] < 1 || widths[l + 1] < 1) throw ShapeError("dense layer widths must be positive");
        Matrix w = Matrix::Zero(widths[l], widths[l + 1]);
        if (!zero_init) {
            const double range = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
            std::uniform_real_distribution<double> dist(-range, range);
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vector::Zero(widths[l + 1]));
    }
    return net;
}

DenseTrace dense_forward(const DenseNet& net, const Matrix& x, double dropout_rate, Rng& rng, bool training) {
    if (net.weights.empty()) throw ShapeError("dense_forward: empty net");
    DenseTrace trace;
    Matrix activation = x;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        if (activation.cols() != net.weights[l].rows())
            throw ShapeError("dense_forward: layer " + std::to_string(l) + " expects " +
                             std::to_string(net.weights[l].rows()) + " inputs, got " +
                             std::to_string(activation.cols()));
        trace.masks.push_back(inverted_dropout(activation.rows(), activation.cols(), dropout_rate, rng, training));
        trace.inputs.push_back(activation.cwiseProduct(trace.masks.back()));
        Matrix z = trace.inputs.back() * net.weights[l];
        z.rowwise() += net.biases[l].transpose();
        trace.pre_activations.push_back(z);
        if (l + 1 < net.weights.size()) activation = z.cwiseMax(0.0);
    }
    trace.probs = softmax_rows(trace.pre_activations.back());
    return trace;
}

DenseNet dense_gradients(const DenseNet& net, const DenseTrace& trace, std::span<const int> labels,
                         std::span<const int> mask, std::span<const double> class_weights, double l2_coeff) {
    if (trace.inputs.size() != net.weights.size()) throw ShapeError("dense_gradients: trace depth mismatch");
    DenseNet grads = net;
    Matrix d_pre = cross_entropy_logit_gradient(trace.probs, labels, mask, class_weights);
    for (std::size_t l = net.weights.size(); l-- > 0;) {
        grads.weights[l] = trace.inputs[l].transpose() * d_pre + (2.0 * l2_coeff) * net.weights[l];
        grads.biases[l] = d_pre.colwise().sum().transpose();
        if (l == 0) break;
        const Matrix d_input = (d_pre * net.weights[l].transpose()).cwiseProduct(trace.masks[l]);
        d_pre = (d_input.array() * (trace.pre_activations[l - 1].array() > 0.0).cast<double>()).matrix();
    }
    return grads;
}

Vector flatten(const DenseNet& net) {
    Vector flat(net.size());
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        flat.segment(at, net.weights[l].size()) = net.weights[l].reshaped();
        at += net.weights[l].size();
        flat.segment(at, net.biases[l].size()) = net.biases[l];
        at += net.biases[l].size();
    }
    return flat;
}

void unflatten(const Vector& flat, DenseNet& net) {
    if (flat.size() != net.size()) throw ShapeError("unflatten: dense net size mismatch");
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        net.weights[l].reshaped() = flat.segment(at, net.weights[l].size());
        at += net.weights[l].size();
        net.biases[l] = flat.segment(at, net.biases[l].size());
        at += net.biases[l].size();
    }
}

BaselineResult train_linear(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                            std::uint64_t seed) {
    config.validate();
    dataset.validate();
    Rng rng(derive_seed(seed, 1));
    auto net = init_dense_net(dataset.n_features(), {}, dataset.n_classes, true, rng);
    auto result = fit_dense(dataset, fold, config, seed, BaselineKind::Linear, std::move(net), 0.0);
    result.architecture = architecture_of(config, dataset.n_classes, false);
    return result;
}

BaselineResult train_dense_nn(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                              std::uint64_t seed) {
    config.validate();
    dataset.validate();
    Rng rng(derive_seed(seed, 1));
    auto net = init_dense_net(dataset.n_features(), config.hidden_dims, dataset.n_classes, false, rng);
    auto result = fit_dense(dataset, fold, config, seed, BaselineKind::DenseNN, std::move(net), config.dropout_rate);
    result.architecture = architecture_of(config, dataset.n_classes, true);
    return result;
}

namespace {

PropagationMatrix averaged_propagation(const Dataset& dataset, const TrainConfig& config) {
    const auto rules = resolve_edge_rules(dataset, config.edge_rules);
    const auto affinities = build_affinities(dataset, rules);
    return normalize_affinity(average_affinities(affinities));
}

BaselineResult avg_gcn_on(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                          std::uint64_t seed, const PropagationMatrix& prop) {
    const auto model = train_model(dataset, {prop}, config, fold.train_idx, seed, FusionMode::Fixed);
    BaselineResult result;
    result.kind = BaselineKind::AveragedGraphGCN;
    result.architecture = architecture_of(config, dataset.n_classes, true);
    Rng unused(0);
    result.probs = model_forward(model.props, dataset.features, model.params, 0.0, unused, false).probs;
    result.test = metrics_from_probs(result.probs, dataset.labels, fold.test_idx, dataset.n_classes);
    result.train_accuracy =
        metrics_from_probs(result.probs, dataset.labels, fold.train_idx, dataset.n_classes).accuracy;
    result.stopped_epoch = model.stopped_epoch;
    return result;
}

}  // namespace

BaselineResult train_avg_graph_gcn(const Dataset& dataset, const FoldSplit& fold, const TrainConfig& config,
                                   std::uint64_t seed) {
    config.validate();
    dataset.validate();
    return avg_gcn_on(dataset, fold, config, seed, averaged_propagation(dataset, config));
}

CVReport run_baseline_cv(const Dataset& dataset, const TrainConfig& config, BaselineKind kind) {
    config.validate();
    dataset.validate();
    const auto folds = cv_splits(dataset, config);
    PropagationMatrix prop;
    if (kind == BaselineKind::AveragedGraphGCN) prop = averaged_propagation(dataset, config);

    auto report = run_folds(folds, config, [&](const FoldSplit& fold, std::uint64_t seed) {
        BaselineResult r;
        switch (kind) {
            case BaselineKind::Linear: r = train_linear(dataset, fold, config, seed); break;
            case BaselineKind::DenseNN: r = train_dense_nn(dataset, fold, config, seed); break;
            case BaselineKind::AveragedGraphGCN: r = avg_gcn_on(dataset, fold, config, seed, prop); break;
        }
        FoldResult out;
        out.metrics = r.test;
        out.train_accuracy = r.train_accuracy;
        out.stopped_epoch = r.stopped_epoch;
        if (kind == BaselineKind::AveragedGraphGCN) {
            out.omega_raw = Vector::Ones(1);
            out.omega_normalized = Vector::Ones(1);
        }
        return out;
    });
    report.method = to_string(kind);
    if (kind == BaselineKind::AveragedGraphGCN) report.elements = dataset.element_names;
    report.architecture = architecture_of(config, dataset.n_classes, kind != BaselineKind::Linear);
    return report;
}

}  // namespace popgcn
