#include "popgcn/graph.hpp"

#include "popgcn/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace popgcn {
namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool is_categorical_name(const std::string& lname) {
    return lname == "gender" || lname == "sex" || lname.rfind("apoe", 0) == 0;
}

bool looks_categorical(std::span<const double> column) {
    std::set<double> distinct;
    for (double v : column) {
        if (v != std::round(v)) return false;
        distinct.insert(v);
        if (distinct.size() > 10) return false;
    }
    return true;
}

double stddev(std::span<const double> column) {
    if (column.empty()) return 0.0;
    double mean = 0.0;
    for (double v : column) mean += v;
    mean /= static_cast<double>(column.size());
    double var = 0.0;
    for (double v : column) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(column.size()));
}

void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols())
        throw ShapeError(std::string(what) + " must be square, got " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()));
}

std::vector<double> column_of(const Matrix& m, int c) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = m(i, c);
    return out;
}

}  // namespace

void EdgeRule::validate() const {
    if (kind == EdgeKind::Threshold && !(beta > 0.0 && std::isfinite(beta)))
        throw ConfigError("edge_rules.beta", "threshold rules need a finite beta > 0");
}

EdgeRule default_edge_rule(const std::string& name, std::span<const double> column, int element_index) {
    const auto lname = lower(name);
    if (lname == "age") return {element_index, EdgeKind::Threshold, 2.0};
    if (is_categorical_name(lname) || looks_categorical(column))
        return {element_index, EdgeKind::Equality, 0.0};
    const double beta = 0.5 * stddev(column);
    if (!(beta > 0.0)) return {element_index, EdgeKind::Equality, 0.0};
    return {element_index, EdgeKind::Threshold, beta};
}

std::vector<EdgeRule> resolve_edge_rules(const Dataset& dataset, std::span<const EdgeRuleSpec> specs) {
    for (const auto& s : specs) {
        if (std::find(dataset.element_names.begin(), dataset.element_names.end(), s.element) ==
            dataset.element_names.end())
            throw ConfigError("edge_rules." + s.element, "no demographic element with this name");
    }
    std::vector<EdgeRule> rules;
    for (int m = 0; m < dataset.n_elements(); ++m) {
        const auto column = column_of(dataset.demographics, m);
        EdgeRule rule = default_edge_rule(dataset.element_names[m], column, m);
        for (const auto& s : specs) {
            if (s.element != dataset.element_names[m]) continue;
            rule.kind = s.kind;
            if (s.kind == EdgeKind::Equality) {
                rule.beta = 0.0;
            } else if (s.beta) {
                rule.beta = *s.beta;
            } else if (rule.beta <= 0.0) {
                rule.beta = 0.5 * stddev(column);
            }
            try {
                rule.validate();
            } catch (const ConfigError& e) {
                throw ConfigError("edge_rules." + s.element + ".beta", "threshold rules need a finite beta > 0");
            }
        }
        rules.push_back(rule);
    }
    return rules;
}

Matrix build_edge_matrix(std::span<const double> delta_column, const EdgeRule& rule) {
    rule.validate();
    const auto n = static_cast<Eigen::Index>(delta_column.size());
    for (Eigen::Index i = 0; i < n; ++i)
        if (!std::isfinite(delta_column[i]))
            throw DataError("non-finite demographic value at row " + std::to_string(i));

    Matrix e = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const bool linked = rule.kind == EdgeKind::Equality
                                    ? delta_column[i] == delta_column[j]
                                    : std::abs(delta_column[i] - delta_column[j]) < rule.beta;
            if (linked) e(i, j) = e(j, i) = 1.0;
        }
    }
    return e;
}

Matrix similarity_matrix(const Matrix& features) {
    if (features.cols() < 2)
        throw ShapeError("similarity_matrix: need at least 2 features, got " + std::to_string(features.cols()));
    Matrix z = features.colwise() - features.rowwise().mean();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double norm = z.row(i).norm();
        if (!(norm > 0.0) || !std::isfinite(norm))
            throw DataError("similarity_matrix: zero-variance feature row " + std::to_string(i));
        z.row(i) /= norm;
    }
    Matrix s = z * z.transpose();
    const auto n = s.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double rho = std::clamp(0.5 * (s(i, j) + s(j, i)), 0.0, 1.0);
            s(i, j) = s(j, i) = rho;
        }
    }
    return s;
}

AffinityMatrix build_affinity(const Matrix& sim, const Matrix& edges, std::string element_name) {
    require_square(sim, "similarity");
    require_square(edges, "edge matrix");
    if (sim.rows() != edges.rows())
        throw ShapeError("build_affinity: similarity is " + std::to_string(sim.rows()) + "x" +
                         std::to_string(sim.cols()) + ", edges are " + std::to_string(edges.rows()) + "x" +
                         std::to_string(edges.cols()));
    AffinityMatrix w{sim.cwiseProduct(edges), std::move(element_name)};
    w.weights.diagonal().setZero();
    return w;
}

PropagationMatrix normalize_affinity(const AffinityMatrix& w) {
    require_square(w.weights, "affinity");
    const auto n = w.weights.rows();
    Matrix hat = w.weights;
    hat.diagonal().array() += 1.0;
    const Vector degree = hat.rowwise().sum();
    const Vector inv_sqrt = degree.array().rsqrt();

    Matrix out(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) out(i, j) = hat(i, j) * (inv_sqrt(i) * inv_sqrt(j));
        out(j, j) = hat(j, j) / degree(j);
    }
    return {std::move(out), w.element_name};
}

std::vector<AffinityMatrix> build_affinities(const Dataset& dataset, std::span<const EdgeRule> rules) {
    const Matrix sim = similarity_matrix(dataset.features);
    std::vector<AffinityMatrix> out;
    out.reserve(rules.size());
    for (const auto& rule : rules) {
        if (rule.element_index < 0 || rule.element_index >= dataset.n_elements())
            throw ShapeError("edge rule refers to element " + std::to_string(rule.element_index));
        const auto column = column_of(dataset.demographics, rule.element_index);
        out.push_back(build_affinity(sim, build_edge_matrix(column, rule),
                                     dataset.element_names[rule.element_index]));
    }
    return out;
}

std::vector<PropagationMatrix> build_propagations(const Dataset& dataset, std::span<const EdgeRule> rules) {
    std::vector<PropagationMatrix> out;
    for (const auto& w : build_affinities(dataset, rules)) out.push_back(normalize_affinity(w));
    return out;
}

AffinityMatrix average_affinities(std::span<const AffinityMatrix> affinities) {
    if (affinities.empty()) throw ShapeError("average_affinities: empty list");
    AffinityMatrix avg{Matrix::Zero(affinities[0].weights.rows(), affinities[0].weights.cols()), {}};
    for (std::size_t m = 0; m < affinities.size(); ++m) {
        if (affinities[m].weights.rows() != avg.weights.rows() || affinities[m].weights.cols() != avg.weights.cols())
            throw ShapeError("average_affinities: shape mismatch at graph " + std::to_string(m));
        avg.weights += affinities[m].weights;
        avg.element_name += (m ? "+" : "") + affinities[m].element_name;
    }
    avg.weights /= static_cast<double>(affinities.size());
    return avg;
}

GraphStats graph_stats(const Matrix& edges, const AffinityMatrix& affinity, const EdgeRule& rule) {
    GraphStats stats;
    stats.element_name = affinity.element_name;
    stats.rule = rule;
    const auto n = edges.rows();
    std::vector<long long> degree(static_cast<std::size_t>(n), 0);
    double weight_sum = 0.0;
    long long weighted = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (edges(i, j) == 0.0) continue;
            ++stats.edge_count;
            ++degree[i];
            ++degree[j];
            if (affinity.weights(i, j) > 0.0) {
                weight_sum += affinity.weights(i, j);
                ++weighted;
            }
        }
    }
    const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    stats.density = pairs > 0 ? static_cast<double>(stats.edge_count) / pairs : 0.0;
    const long long max_degree = degree.empty() ? 0 : *std::max_element(degree.begin(), degree.end());
    stats.degree_histogram.assign(static_cast<std::size_t>(max_degree + 1), 0);
    for (long long d : degree) ++stats.degree_histogram[d];
    stats.mean_weight = weighted ? weight_sum / static_cast<double>(weighted) : 0.0;
    return stats;
}

double spectral_radius(const Matrix& m, int iterations) {
    require_square(m, "matrix");
    if (m.rows() == 0) return 0.0;
    Vector v = Vector::LinSpaced(m.rows(), 1.0, 2.0);
    v.normalize();
    double estimate = 0.0;
    for (int it = 0; it < iterations; ++it) {
        Vector next = m * v;
        estimate = next.norm();
        if (estimate == 0.0) return 0.0;
        v = next / estimate;
    }
    return estimate;
}

}  // namespace popgcn
