#include "doctest.h"

#include "popgcn/error.hpp"
#include "popgcn/model.hpp"
#include "popgcn/train.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace popgcn;
using namespace popgcn::test;

namespace {

std::vector<PropagationMatrix> random_props(int n, int m, std::mt19937_64& rng) {
    std::vector<PropagationMatrix> props;
    for (int b = 0; b < m; ++b)
        props.push_back(normalize_affinity({random_affinity(n, 0.5, rng), "g" + std::to_string(b)}));
    return props;
}

ModelParams random_params(int d, std::vector<int> hidden, int k, int m, std::mt19937_64& rng) {
    Rng init(rng());
    auto p = init_params(d, hidden, k, m, init);
    std::uniform_real_distribution<double> u(0.25, 1.25);
    for (int b = 0; b < m; ++b) p.omega(b) = u(rng);
    return p;
}

// Straightforward re-implementation of the deterministic objective, used as
// an oracle for the analytic gradient.
double oracle_objective(const std::vector<PropagationMatrix>& props, const Matrix& x, const ModelParams& p,
                        const std::vector<int>& labels, const std::vector<int>& mask,
                        const std::vector<double>& w, double l2) {
    const Eigen::Index n = x.rows();
    Matrix fused = Matrix::Zero(n, p.branches[0].layers.back().cols());
    double penalty = 0.0;
    for (std::size_t b = 0; b < props.size(); ++b) {
        Matrix h = x;
        const auto& layers = p.branches[b].layers;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            Matrix z = props[b].matrix * h * layers[l];
            if (l + 1 < layers.size())
                for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = std::max(0.0, z.data()[i]);
            h = z;
            penalty += layers[l].squaredNorm();
        }
        fused += p.omega(static_cast<Eigen::Index>(b)) * h;
    }
    double loss = 0.0;
    for (int i : mask) {
        const double mx = fused.row(i).maxCoeff();
        double denom = 0.0;
        for (Eigen::Index c = 0; c < fused.cols(); ++c) denom += std::exp(fused(i, c) - mx);
        const double prob = std::exp(fused(i, labels[i]) - mx) / denom;
        loss -= w[labels[i]] * std::log(std::max(prob, 1e-12));
    }
    return loss / static_cast<double>(mask.size()) + l2 * penalty;
}

}  // namespace

TEST_CASE("gc layer hand-evaluated examples") {
    Matrix prop = Matrix::Identity(1, 1);
    Matrix h(1, 2);
    h << -1, 2;
    CHECK(gc_layer_forward(prop, h, Matrix::Identity(2, 2), true) == (Matrix(1, 2) << 0, 2).finished());
    CHECK(gc_layer_forward(prop, h, Matrix::Identity(2, 2), false) == h);

    Matrix half = Matrix::Constant(2, 2, 0.5);
    Matrix ones = Matrix::Ones(2, 1);
    CHECK(gc_layer_forward(half, ones, Matrix::Ones(1, 1), true) == ones);

    CHECK_THROWS_AS(gc_layer_forward(half, Matrix::Ones(3, 1), Matrix::Ones(1, 1), true), ShapeError);
    CHECK_THROWS_AS(gc_layer_forward(half, ones, Matrix::Ones(2, 1), true), ShapeError);
}

TEST_CASE("branch_forward is deterministic without dropout") {
    std::mt19937_64 rng(1);
    const auto props = random_props(8, 1, rng);
    const Matrix x = random_matrix(8, 4, rng);
    const auto params = random_params(4, {5, 3}, 3, 1, rng);
    Rng a(10), b(99);
    const auto t1 = branch_forward(props[0].matrix, x, params.branches[0], 0.5, a, false);
    const auto t2 = branch_forward(props[0].matrix, x, params.branches[0], 0.5, b, false);
    CHECK(t1.logits == t2.logits);
    for (const auto& layer : t1.layers) CHECK(layer.mask.isOnes());
}

TEST_CASE("dropout masks are inverted-scaled and replayable") {
    std::mt19937_64 rng(2);
    const auto props = random_props(10, 2, rng);
    const Matrix x = random_matrix(10, 4, rng);
    const auto params = random_params(4, {6}, 3, 2, rng);
    const double p = 0.4;
    Rng drng(5);
    const auto trace = model_forward(props, x, params, p, drng, true);
    for (int b = 0; b < 2; ++b) {
        Matrix h = x;
        const auto& bt = trace.branches[b];
        for (std::size_t l = 0; l < bt.layers.size(); ++l) {
            const Matrix& mask = bt.layers[l].mask;
            for (Eigen::Index i = 0; i < mask.size(); ++i) {
                const double v = mask.data()[i];
                CHECK((v == 0.0 || v == doctest::Approx(1.0 / (1.0 - p))));
            }
            Matrix z = props[b].matrix * (h.cwiseProduct(mask)) * params.branches[b].layers[l];
            if (l + 1 < bt.layers.size()) z = z.cwiseMax(0.0);
            h = z;
        }
        CHECK((h - bt.logits).cwiseAbs().maxCoeff() < 1e-12);
    }
    Rng again(5);
    CHECK(model_forward(props, x, params, p, again, true).probs == trace.probs);
}

TEST_CASE("fuse_logits example") {
    const std::vector<Matrix> logits{(Matrix(1, 2) << 1, 2).finished(), (Matrix(1, 2) << 3, 4).finished()};
    CHECK(fuse_logits(logits, Vector::Constant(2, 0.5)) == (Matrix(1, 2) << 2, 3).finished());
    CHECK_THROWS_AS(fuse_logits(logits, Vector::Ones(3)), ShapeError);
}

TEST_CASE("softmax rows") {
    const double c = 0.7;
    Matrix z(2, 2);
    z << c, c + std::log(2.0), 1000 + c, 1000 + c + std::log(2.0);
    const Matrix p = softmax_rows(z);
    CHECK(p(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(p(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK((p.row(0) - p.row(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.allFinite());
}

TEST_CASE("weighted cross-entropy examples") {
    const std::vector<int> labels{0, 1, 2};
    const std::vector<int> mask{0, 1, 2};
    const std::vector<double> ones{1, 1, 1};
    const Matrix uniform = Matrix::Constant(3, 3, 1.0 / 3.0);
    CHECK(weighted_cross_entropy(uniform, labels, mask, ones) == doctest::Approx(std::log(3.0)).epsilon(1e-14));

    Matrix perfect = Matrix::Identity(3, 3);
    CHECK(weighted_cross_entropy(perfect, labels, mask, ones) == 0.0);

    const std::vector<double> twos{2, 2, 2};
    CHECK(weighted_cross_entropy(uniform, labels, mask, twos) ==
          doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-14));

    // A zero probability is floored, never infinite.
    Matrix wrong = Matrix::Zero(3, 3);
    wrong.col(0).setOnes();
    const std::vector<int> only1{1};
    CHECK(weighted_cross_entropy(wrong, labels, only1, ones) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("a single branch with unit weight reduces to that branch") {
    std::mt19937_64 rng(3);
    const auto props = random_props(9, 1, rng);
    const Matrix x = random_matrix(9, 4, rng);
    auto params = random_params(4, {5}, 3, 1, rng);
    params.omega(0) = 1.0;
    Rng r(0);
    const auto trace = model_forward(props, x, params, 0.0, r, false);
    CHECK(trace.fused == trace.branches[0].logits);
    CHECK(trace.probs == softmax_rows(trace.branches[0].logits));
}

TEST_CASE("identical branches with weights summing to one collapse (property)") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 2 + trial % 3;
        const auto one = random_props(7, 1, rng);
        const std::vector<PropagationMatrix> props(m, one[0]);
        const Matrix x = random_matrix(7, 4, rng);
        auto params = random_params(4, {5}, 3, m, rng);
        for (int b = 1; b < m; ++b) params.branches[b] = params.branches[0];
        params.omega /= params.omega.sum();
        Rng r(0);
        const auto trace = model_forward(props, x, params, 0.0, r, false);
        CHECK((trace.fused - trace.branches[0].logits).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("model output is row-stochastic and permutation equivariant (property)") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 5 + trial % 10;
        auto props = random_props(n, 2, rng);
        const Matrix x = random_matrix(n, 4, rng);
        const auto params = random_params(4, {6}, 3, 2, rng);
        const auto perm = random_permutation(n, rng);
        Rng r(0);
        const Matrix probs = model_forward(props, x, params, 0.0, r, false).probs;
        CHECK((probs.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
        CHECK(probs.minCoeff() >= 0.0);

        auto permuted = props;
        for (auto& p : permuted) p.matrix = permute_both(p.matrix, perm);
        const Matrix probs_p = model_forward(permuted, permute_rows(x, perm), params, 0.0, r, false).probs;
        CHECK((probs_p - permute_rows(probs, perm)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("scaling all fusion weights keeps the predicted class") {
    std::mt19937_64 rng(7);
    const auto props = random_props(12, 3, rng);
    const Matrix x = random_matrix(12, 4, rng);
    auto params = random_params(4, {6}, 3, 3, rng);
    Rng r(0);
    const Matrix base = model_forward(props, x, params, 0.0, r, false).probs;
    params.omega *= 3.5;
    const Matrix scaled = model_forward(props, x, params, 0.0, r, false).probs;
    for (Eigen::Index i = 0; i < base.rows(); ++i) {
        Eigen::Index a = 0, b = 0;
        base.row(i).maxCoeff(&a);
        scaled.row(i).maxCoeff(&b);
        CHECK(a == b);
    }
}

TEST_CASE("fusion gradient vanishes for zero logits") {
    std::mt19937_64 rng(8);
    const auto props = random_props(6, 2, rng);
    const Matrix x = random_matrix(6, 4, rng);
    auto params = random_params(4, {}, 3, 2, rng);
    for (auto& b : params.branches) b.layers[0].setZero();
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    const std::vector<int> mask{0, 1, 2, 3, 4, 5};
    const std::vector<double> w{1, 1, 1};
    Rng r(0);
    const auto trace = model_forward(props, x, params, 0.0, r, false);
    const auto g = compute_gradients(trace, props, labels, mask, w, 0.0, params);
    CHECK(g.omega.isZero());
}

TEST_CASE("saturated correct predictions leave only the weight-decay gradient") {
    const int n = 4;
    const std::vector<PropagationMatrix> props{{Matrix::Identity(n, n), "id"}};
    const Matrix x = Matrix::Identity(n, n);
    ModelParams params;
    Matrix theta = Matrix::Constant(n, 2, -1000.0);
    const std::vector<int> labels{0, 1, 0, 1};
    for (int i = 0; i < n; ++i) theta(i, labels[i]) = 1000.0;
    params.branches = {BranchParams{{theta}}};
    params.omega = Vector::Ones(1);
    const std::vector<int> mask{0, 1, 2, 3};
    const std::vector<double> w{1, 1};
    const double l2 = 5e-4;
    Rng r(0);
    const auto trace = model_forward(props, x, params, 0.0, r, false);
    const auto g = compute_gradients(trace, props, labels, mask, w, l2, params);
    CHECK(g.theta[0][0] == 2.0 * l2 * theta);
    CHECK(std::fabs(g.omega(0)) < 1e-300);
}

TEST_CASE("analytic gradients agree with an independent finite-difference oracle") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 6;
        const auto props = random_props(n, 2, rng);
        const Matrix x = random_matrix(n, 4, rng);
        const auto params = random_params(4, {5}, 3, 2, rng);
        const std::vector<int> labels{0, 1, 2, 0, 1, 2};
        const std::vector<int> mask{0, 1, 2, 4, 5};
        const auto w = class_weights(labels, mask, 3);
        const double l2 = 5e-4;
        Rng r(0);
        const auto trace = model_forward(props, x, params, 0.0, r, false);
        const Vector analytic = flatten(compute_gradients(trace, props, labels, mask, w, l2, params));

        const Vector theta0 = flatten(params);
        ModelParams scratch = params;
        double worst = 0.0;
        const double h = 1e-5;
        for (Eigen::Index k = 0; k < theta0.size(); ++k) {
            Vector plus = theta0, minus = theta0;
            plus(k) += h;
            minus(k) -= h;
            unflatten(plus, scratch);
            const double fp = oracle_objective(props, x, scratch, labels, mask, w, l2);
            unflatten(minus, scratch);
            const double fm = oracle_objective(props, x, scratch, labels, mask, w, l2);
            const double numeric = (fp - fm) / (2 * h);
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic(k)), 1e-4});
            worst = std::max(worst, std::fabs(numeric - analytic(k)) / denom);
        }
        CHECK(worst < 1e-5);
        unflatten(theta0, scratch);
        CHECK(model_objective(props, x, scratch, labels, mask, w, l2) ==
              doctest::Approx(oracle_objective(props, x, scratch, labels, mask, w, l2)).epsilon(1e-13));
    }
}

TEST_CASE("flatten and unflatten round-trip") {
    std::mt19937_64 rng(10);
    const auto params = random_params(4, {5, 2}, 3, 3, rng);
    const Vector flat = flatten(params);
    CHECK(flat.size() == params.size());
    CHECK(flat.tail(3) == params.omega);
    CHECK(flat(1) == params.branches[0].layers[0](1, 0));
    ModelParams copy = params;
    unflatten(Vector::Zero(flat.size()), copy);
    CHECK(flatten(copy).isZero());
    unflatten(flat, copy);
    CHECK(flatten(copy) == flat);
    CHECK_THROWS_AS(unflatten(Vector::Zero(flat.size() + 1), copy), ShapeError);
}

TEST_CASE("init_params shapes and fusion start") {
    Rng r(1);
    const std::vector<int> hidden{16};
    const auto p = init_params(20, hidden, 3, 4, r);
    CHECK(p.n_branches() == 4);
    CHECK(p.branches[2].layers[0].rows() == 20);
    CHECK(p.branches[2].layers[1].cols() == 3);
    CHECK(p.omega.isApprox(Vector::Constant(4, 0.25)));
    const double limit = std::sqrt(6.0 / (20 + 16));
    CHECK(p.branches[0].layers[0].cwiseAbs().maxCoeff() <= limit);
}

namespace {

Dataset small_dataset(int n, std::mt19937_64& rng) {
    Dataset ds;
    ds.features = random_matrix(n, 4, rng);
    ds.n_classes = 3;
    for (int i = 0; i < n; ++i) ds.labels.push_back(i % 3);
    ds.demographics.resize(n, 2);
    std::uniform_int_distribution<int> code(0, 1);
    for (int i = 0; i < n; ++i) {
        ds.demographics(i, 0) = code(rng);
        ds.demographics(i, 1) = 60 + i % 7;
    }
    ds.element_names = {"gender", "age"};
    return ds;
}

}  // namespace

TEST_CASE("finite_diff_check detects correct and tampered gradients") {
    std::mt19937_64 rng(11);
    const auto ds = small_dataset(12, rng);
    const auto params = random_params(4, {5}, 3, 2, rng);
    TrainConfig cfg;
    const auto good = finite_diff_check(ds, params, cfg, 3);
    CHECK(good.max_relative_error < 1e-5);
    CHECK(good.coordinates_checked == static_cast<std::size_t>(params.size()));
    CHECK_FALSE(good.warning);

    const auto bad = finite_diff_check(ds, params, cfg, 3, {}, [](ModelGradients& g) { g.omega(0) += 1.0; });
    CHECK(bad.max_relative_error > 1e-2);

    GradCheckOptions none;
    none.max_coordinates = 0;
    const auto empty = finite_diff_check(ds, params, cfg, 3, none);
    CHECK(empty.max_relative_error == 0.0);
    CHECK(empty.coordinates_checked == 0);
    CHECK(empty.warning.has_value());

    GradCheckOptions some;
    some.max_coordinates = 10;
    CHECK(finite_diff_check(ds, params, cfg, 3, some).coordinates_checked == 10);
}
