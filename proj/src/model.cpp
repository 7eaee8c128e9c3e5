#include "popgcn/model.hpp"

#include "popgcn/error.hpp"
#include "popgcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace popgcn {
namespace {

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return Matrix::Ones(rows, cols);
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    Matrix mask(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = keep(rng) ? scale : 0.0;
    return mask;
}

void check_labels_mask(std::span<const int> labels, std::span<const int> mask, Eigen::Index n_rows,
                       std::size_t n_classes) {
    if (mask.empty()) throw ShapeError("empty training mask");
    if (static_cast<Eigen::Index>(labels.size()) != n_rows)
        throw ShapeError("labels length " + std::to_string(labels.size()) + " != " + std::to_string(n_rows) +
                         " rows");
    for (int i : mask) {
        if (i < 0 || i >= n_rows) throw ShapeError("mask index " + std::to_string(i) + " out of range");
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
            throw ShapeError("label of node " + std::to_string(i) + " has no class weight");
    }
}

}  // namespace

Eigen::Index ModelParams::n_theta() const {
    Eigen::Index n = 0;
    for (const auto& b : branches)
        for (const auto& t : b.layers) n += t.size();
    return n;
}

void ModelParams::validate() const {
    if (branches.empty()) throw ShapeError("model has no branches");
    if (omega.size() != n_branches())
        throw ShapeError("omega has " + std::to_string(omega.size()) + " entries for " +
                         std::to_string(n_branches()) + " branches");
    if (!omega.allFinite()) throw ShapeError("omega has non-finite entries");
    for (int m = 0; m < n_branches(); ++m) {
        const auto& layers = branches[m].layers;
        if (layers.empty()) throw ShapeError("branch " + std::to_string(m) + " has no layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (!layers[l].allFinite())
                throw ShapeError("branch " + std::to_string(m) + " layer " + std::to_string(l) + " is not finite");
            if (l > 0 && layers[l - 1].cols() != layers[l].rows())
                throw ShapeError("branch " + std::to_string(m) + ": layer " + std::to_string(l - 1) + " is " +
                                 dims(layers[l - 1]) + " but layer " + std::to_string(l) + " is " +
                                 dims(layers[l]));
        }
        if (layers.front().rows() != branches[0].layers.front().rows() ||
            layers.back().cols() != branches[0].layers.back().cols())
            throw ShapeError("branch " + std::to_string(m) + " input/output width differs from branch 0");
    }
}

ModelParams init_params(int n_features, std::span<const int> hidden_dims, int n_classes, int n_branches,
                        Rng& rng) {
    if (n_branches < 1) throw ShapeError("need at least one branch");
    std::vector<int> widths{n_features};
    widths.insert(widths.end(), hidden_dims.begin(), hidden_dims.end());
    widths.push_back(n_classes);
    for (int w : widths)
        if (w < 1) throw ShapeError("layer widths must be positive");

    ModelParams params;
    params.branches.resize(n_branches);
    for (auto& branch : params.branches) {
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            const double range = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
            std::uniform_real_distribution<double> dist(-range, range);
            Matrix theta(widths[l], widths[l + 1]);
            for (Eigen::Index j = 0; j < theta.cols(); ++j)
                for (Eigen::Index i = 0; i < theta.rows(); ++i) theta(i, j) = dist(rng);
            branch.layers.push_back(std::move(theta));
        }
    }
    params.omega = Vector::Constant(n_branches, 1.0 / n_branches);
    return params;
}

Matrix gc_layer_forward(const Matrix& prop, const Matrix& h, const Matrix& theta, bool apply_relu) {
    if (prop.rows() != prop.cols() || prop.cols() != h.rows() || h.cols() != theta.rows())
        throw ShapeError("gc_layer_forward: cannot chain " + dims(prop) + " * " + dims(h) + " * " + dims(theta));
    Matrix z = prop * (h * theta);
    return apply_relu ? relu(z) : z;
}

BranchTrace branch_forward(const Matrix& prop, const Matrix& x, const BranchParams& params, double dropout_rate,
                           Rng& rng, bool training) {
    if (params.layers.empty()) throw ShapeError("branch_forward: branch has no layers");
    BranchTrace trace;
    trace.layers.reserve(params.layers.size());
    Matrix activation = x;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        LayerTrace layer;
        layer.mask = dropout_mask(activation.rows(), activation.cols(), dropout_rate, rng, training);
        layer.input = activation.cwiseProduct(layer.mask);
        layer.pre_activation = gc_layer_forward(prop, layer.input, params.layers[l], false);
        const bool last = l + 1 == params.layers.size();
        if (!last) activation = relu(layer.pre_activation);
        trace.layers.push_back(std::move(layer));
    }
    trace.logits = trace.layers.back().pre_activation;
    return trace;
}

Matrix fuse_logits(std::span<const Matrix> branch_logits, const Vector& omega) {
    if (branch_logits.empty()) throw ShapeError("fuse_logits: no branches");
    if (omega.size() != static_cast<Eigen::Index>(branch_logits.size()))
        throw ShapeError("fuse_logits: " + std::to_string(branch_logits.size()) + " branches but " +
                         std::to_string(omega.size()) + " weights");
    Matrix fused = Matrix::Zero(branch_logits[0].rows(), branch_logits[0].cols());
    for (std::size_t m = 0; m < branch_logits.size(); ++m) {
        if (branch_logits[m].rows() != fused.rows() || branch_logits[m].cols() != fused.cols())
            throw ShapeError("fuse_logits: branch " + std::to_string(m) + " is " + dims(branch_logits[m]) +
                             ", expected " + dims(fused));
        fused += omega(static_cast<Eigen::Index>(m)) * branch_logits[m];
    }
    return fused;
}

Matrix softmax_rows(const Matrix& z) {
    Matrix p = z.colwise() - z.rowwise().maxCoeff();
    p = p.array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

double weighted_cross_entropy(const Matrix& probs, std::span<const int> labels, std::span<const int> mask,
                              std::span<const double> class_weights) {
    check_labels_mask(labels, mask, probs.rows(), class_weights.size());
    double total = 0.0;
    for (int i : mask) {
        const int y = labels[i];
        total -= class_weights[y] * std::log(std::max(probs(i, y), kProbFloor));
    }
    return total / static_cast<double>(mask.size());
}

Matrix cross_entropy_logit_gradient(const Matrix& probs, std::span<const int> labels, std::span<const int> mask,
                                   std::span<const double> class_weights) {
    check_labels_mask(labels, mask, probs.rows(), class_weights.size());
    // (w_y / |mask|) * (p - onehot) on labeled rows whose target probability
    // is above the clamp floor; the clamped log is flat below it.
    Matrix upstream = Matrix::Zero(probs.rows(), probs.cols());
    const double inv_count = 1.0 / static_cast<double>(mask.size());
    for (int i : mask) {
        const int y = labels[i];
        if (probs(i, y) < kProbFloor) continue;
        const double c = class_weights[y] * inv_count;
        upstream.row(i) = c * probs.row(i);
        upstream(i, y) -= c;
    }
    return upstream;
}

ForwardTrace model_forward(std::span<const PropagationMatrix> props, const Matrix& x, const ModelParams& params,
                           double dropout_rate, Rng& rng, bool training) {
    if (static_cast<int>(props.size()) != params.n_branches())
        throw ShapeError("model_forward: " + std::to_string(props.size()) + " graphs for " +
                         std::to_string(params.n_branches()) + " branches");
    ForwardTrace trace;
    trace.training = training;
    std::vector<Matrix> logits;
    for (int m = 0; m < params.n_branches(); ++m) {
        trace.branches.push_back(branch_forward(props[m].matrix, x, params.branches[m], dropout_rate, rng, training));
        logits.push_back(trace.branches.back().logits);
    }
    trace.fused = fuse_logits(logits, params.omega);
    trace.probs = softmax_rows(trace.fused);
    return trace;
}

ModelGradients compute_gradients(const ForwardTrace& trace, std::span<const PropagationMatrix> props,
                                 std::span<const int> labels, std::span<const int> mask,
                                 std::span<const double> class_weights, double l2_coeff, const ModelParams& params) {
    const int n_branches = params.n_branches();
    if (static_cast<int>(trace.branches.size()) != n_branches || static_cast<int>(props.size()) != n_branches)
        throw ShapeError("compute_gradients: trace, graphs and params disagree on branch count");
    for (int m = 0; m < n_branches; ++m)
        if (trace.branches[m].layers.size() != params.branches[m].layers.size())
            throw ShapeError("compute_gradients: branch " + std::to_string(m) + " depth differs from trace");
    const Matrix upstream = cross_entropy_logit_gradient(trace.probs, labels, mask, class_weights);

    ModelGradients grads;
    grads.omega.resize(n_branches);
    grads.theta.resize(n_branches);
    for (int m = 0; m < n_branches; ++m) {
        const auto& branch = trace.branches[m];
        const auto& layers = params.branches[m].layers;
        const Matrix& prop = props[m].matrix;
        grads.omega(m) = upstream.cwiseProduct(branch.logits).sum();

        auto& out = grads.theta[m];
        out.resize(layers.size());
        Matrix d_pre = params.omega(m) * upstream;
        for (std::size_t l = layers.size(); l-- > 0;) {
            const auto& lt = branch.layers[l];
            const Matrix s = prop.transpose() * d_pre;
            out[l] = lt.input.transpose() * s + (2.0 * l2_coeff) * layers[l];
            if (l == 0) break;
            const Matrix d_input = s * layers[l].transpose();
            const auto& below = branch.layers[l - 1].pre_activation;
            d_pre = (d_input.cwiseProduct(lt.mask).array() * (below.array() > 0.0).cast<double>()).matrix();
        }
    }
    return grads;
}

double model_objective(std::span<const PropagationMatrix> props, const Matrix& x, const ModelParams& params,
                       std::span<const int> labels, std::span<const int> mask,
                       std::span<const double> class_weights, double l2_coeff) {
    Rng unused(0);
    const auto trace = model_forward(props, x, params, 0.0, unused, false);
    double penalty = 0.0;
    for (const auto& b : params.branches)
        for (const auto& t : b.layers) penalty += t.squaredNorm();
    return weighted_cross_entropy(trace.probs, labels, mask, class_weights) + l2_coeff * penalty;
}

Vector flatten(const ModelParams& params) {
    Vector flat(params.size());
    Eigen::Index at = 0;
    for (const auto& b : params.branches)
        for (const auto& t : b.layers) {
            flat.segment(at, t.size()) = t.reshaped();
            at += t.size();
        }
    flat.tail(params.omega.size()) = params.omega;
    return flat;
}

void unflatten(const Vector& flat, ModelParams& params) {
    if (flat.size() != params.size())
        throw ShapeError("unflatten: got " + std::to_string(flat.size()) + " values for " +
                         std::to_string(params.size()) + " parameters");
    Eigen::Index at = 0;
    for (auto& b : params.branches)
        for (auto& t : b.layers) {
            t.reshaped() = flat.segment(at, t.size());
            at += t.size();
        }
    params.omega = flat.tail(params.omega.size());
}

Vector flatten(const ModelGradients& grads) {
    Eigen::Index total = grads.omega.size();
    for (const auto& b : grads.theta)
        for (const auto& t : b) total += t.size();
    Vector flat(total);
    Eigen::Index at = 0;
    for (const auto& b : grads.theta)
        for (const auto& t : b) {
            flat.segment(at, t.size()) = t.reshaped();
            at += t.size();
        }
    flat.tail(grads.omega.size()) = grads.omega;
    return flat;
}

GradCheckResult check_gradient(const std::function<double(const Vector&)>& objective, const Vector& x,
                               const Vector& analytic, const GradCheckOptions& options) {
    if (analytic.size() != x.size())
        throw ShapeError("check_gradient: gradient has " + std::to_string(analytic.size()) + " entries for " +
                         std::to_string(x.size()) + " parameters");
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(x.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_coordinates >= 0 && options.max_coordinates < x.size()) {
        Rng rng(options.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<std::size_t>(options.max_coordinates));
        std::sort(coords.begin(), coords.end());
    }

    GradCheckResult result;
    if (coords.empty()) {
        result.warning = "no coordinates perturbed; reporting zero error";
        return result;
    }
    Vector probe = x;
    for (auto c : coords) {
        const double saved = probe(c);
        probe(c) = saved + options.step;
        const double up = objective(probe);
        probe(c) = saved - options.step;
        const double down = objective(probe);
        probe(c) = saved;
        const double numeric = (up - down) / (2.0 * options.step);
        const double denom = std::max({std::abs(analytic(c)), std::abs(numeric), options.denominator_floor});
        const double rel = std::abs(analytic(c) - numeric) / denom;
        if (rel > result.max_relative_error || !std::isfinite(rel)) {
            result.max_relative_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
            result.worst_coordinate = static_cast<std::size_t>(c);
        }
    }
    result.coordinates_checked = coords.size();
    return result;
}

GradCheckResult finite_diff_check(const Dataset& dataset, const ModelParams& params, const TrainConfig& config,
                                  std::uint64_t seed, GradCheckOptions options, const GradientTamper& tamper) {
    dataset.validate();
    params.validate();
    const auto rules = resolve_edge_rules(dataset, config.edge_rules);
    const auto props = build_propagations(dataset, rules);

    // Hold out a stratified quarter of the nodes so masking is exercised.
    Rng rng(derive_seed(seed, 0));
    std::map<int, IndexList> by_class;
    for (int i = 0; i < dataset.n_nodes(); ++i) by_class[dataset.labels[i]].push_back(i);
    IndexList mask;
    for (auto& [cls, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const std::size_t held = members.size() / 4;
        mask.insert(mask.end(), members.begin() + static_cast<std::ptrdiff_t>(held), members.end());
    }
    std::sort(mask.begin(), mask.end());
    const auto weights = class_weights(dataset.labels, mask, dataset.n_classes);

    Rng unused(0);
    const auto trace = model_forward(props, dataset.features, params, 0.0, unused, true);
    auto grads = compute_gradients(trace, props, dataset.labels, mask, weights, config.l2_coeff, params);
    if (tamper) tamper(grads);

    ModelParams scratch = params;
    auto objective = [&](const Vector& flat) {
        unflatten(flat, scratch);
        return model_objective(props, dataset.features, scratch, dataset.labels, mask, weights, config.l2_coeff);
    };
    options.seed = derive_seed(seed, 1);
    return check_gradient(objective, flatten(params), flatten(grads), options);
}

}  // namespace popgcn
