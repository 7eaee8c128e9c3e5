#include "doctest.h"

#include "popgcn/baselines.hpp"
#include "popgcn/data.hpp"
#include "popgcn/error.hpp"
#include "test_support.hpp"

#include <cmath>
#include <set>

using namespace popgcn;
using popgcn::test::TempDir;

namespace {

struct CsvFiles {
    std::filesystem::path features, labels, demographics;
};

CsvFiles write_files(const TempDir& dir, const std::string& feat, const std::string& lab, const std::string& demo) {
    return {dir.write("features.csv", feat), dir.write("labels.csv", lab), dir.write("demographics.csv", demo)};
}

std::string error_of(const auto& fn) {
    try {
        fn();
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

SynthConfig small_synth(std::uint64_t seed) {
    SynthConfig cfg;
    cfg.n_nodes = 90;
    cfg.n_features = 6;
    cfg.n_classes = 3;
    cfg.class_separation = 1.5;
    cfg.informative_elements = {{"gender", 1.0}, {"age", 0.5}};
    cfg.noise_elements = {"fdg"};
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("load_dataset reads a minimal well-formed set") {
    TempDir dir("load");
    const auto f = write_files(dir, "1,2\n3,4\n5,6\n", "0\n1\n2\n", "age,gender\n70,0\n72,1\n80,0\n");
    const auto ds = load_dataset(f.features, f.labels, f.demographics);
    CHECK(ds.n_nodes() == 3);
    CHECK(ds.n_classes == 3);
    CHECK(ds.n_features() == 2);
    CHECK(ds.element_names == std::vector<std::string>{"age", "gender"});
    CHECK(ds.n_elements() == 2);
    CHECK(ds.demographics(1, 0) == 72.0);
    CHECK(ds.features(2, 1) == 6.0);
}

TEST_CASE("load_dataset reports row-count mismatches with both counts") {
    TempDir dir("rows");
    const auto f = write_files(dir, "1,2\n3,4\n5,6\n7,8\n", "0\n1\n2\n", "age\n1\n2\n3\n");
    const auto msg = error_of([&] { load_dataset(f.features, f.labels, f.demographics); });
    CHECK(msg.find("4") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("row-count") != std::string::npos);
}

TEST_CASE("load_dataset rejects non-numeric cells with their position") {
    TempDir dir("nonnum");
    const auto f = write_files(dir, "1,2\n3,abc\n", "0\n1\n", "age\n1\n2\n");
    const auto msg = error_of([&] { load_dataset(f.features, f.labels, f.demographics); });
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find("column 1") != std::string::npos);
}

TEST_CASE("load_dataset rejects negative labels") {
    TempDir dir("neg");
    const auto f = write_files(dir, "1,2\n3,4\n", "0\n-1\n", "age\n1\n2\n");
    CHECK_THROWS_AS(load_dataset(f.features, f.labels, f.demographics), DataError);
}

TEST_CASE("save_dataset round-trips through load_dataset") {
    TempDir dir("save");
    const auto ds = generate_synthetic(small_synth(3));
    save_dataset(ds, dir.path());
    const auto back = load_dataset(dir.path() / "features.csv", dir.path() / "labels.csv",
                                   dir.path() / "demographics.csv");
    CHECK(back.features == ds.features);
    CHECK(back.demographics == ds.demographics);
    CHECK(back.labels == ds.labels);
    CHECK(back.element_names == ds.element_names);
}

TEST_CASE("generate_synthetic honours its generative contract") {
    const auto cfg = small_synth(11);
    const auto ds = generate_synthetic(cfg);
    CHECK(ds.n_nodes() == 90);
    CHECK(ds.n_features() == 6);
    CHECK(ds.element_names == std::vector<std::string>{"gender", "age", "fdg"});

    SUBCASE("balanced labels") {
        std::vector<int> counts(3, 0);
        for (int y : ds.labels) ++counts[y];
        CHECK(counts == std::vector<int>{30, 30, 30});
    }
    SUBCASE("class_correlation 1 reproduces the labels exactly") {
        for (int i = 0; i < ds.n_nodes(); ++i) CHECK(ds.demographics(i, 0) == ds.labels[i]);
    }
    SUBCASE("partially informative column holds class codes") {
        int agree = 0;
        for (int i = 0; i < ds.n_nodes(); ++i) {
            const double v = ds.demographics(i, 1);
            CHECK((v == 0.0 || v == 1.0 || v == 2.0));
            agree += v == ds.labels[i];
        }
        CHECK(agree < ds.n_nodes());
    }
    SUBCASE("noise column is uniform on [0, 1]") {
        for (int i = 0; i < ds.n_nodes(); ++i) {
            CHECK(ds.demographics(i, 2) >= 0.0);
            CHECK(ds.demographics(i, 2) < 1.0);
        }
    }
}

TEST_CASE("generate_synthetic is a pure function of its seed") {
    const auto a = generate_synthetic(small_synth(5));
    const auto b = generate_synthetic(small_synth(5));
    const auto c = generate_synthetic(small_synth(6));
    CHECK(a.features == b.features);
    CHECK(a.labels == b.labels);
    CHECK(a.demographics == b.demographics);
    CHECK(a.features != c.features);
}

TEST_CASE("generate_synthetic validates its config") {
    auto cfg = small_synth(1);
    cfg.n_classes = 1;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = small_synth(1);
    cfg.informative_elements.clear();
    cfg.noise_elements.clear();
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
    cfg = small_synth(1);
    cfg.informative_elements[0].class_correlation = 1.5;
    CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}

TEST_CASE("zero class separation leaves the linear classifier at chance") {
    // Oracle: the linear baseline itself. Accuracy pooled over all test nodes
    // must stay within 3 binomial standard deviations of 1/K.
    SynthConfig cfg;
    cfg.n_nodes = 200;
    cfg.n_features = 8;
    cfg.n_classes = 3;
    cfg.class_separation = 0.0;
    cfg.noise_elements = {"noise"};
    cfg.seed = 21;
    const auto ds = generate_synthetic(cfg);
    TrainConfig train;
    train.seed = 4;
    const auto report = run_baseline_cv(ds, train, BaselineKind::Linear);
    long correct = 0;
    for (const auto& f : report.folds)
        for (int k = 0; k < 3; ++k) correct += f.metrics.confusion[k][k];
    const double acc = static_cast<double>(correct) / cfg.n_nodes;
    const double p = 1.0 / 3.0;
    const double sigma = std::sqrt(p * (1 - p) / cfg.n_nodes);
    CHECK(std::abs(acc - p) <= 3 * sigma);
}

TEST_CASE("stratified_kfold balances classes exactly when divisible") {
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(i % 2);
    const auto folds = stratified_kfold(labels, 5, 9);
    REQUIRE(folds.size() == 5);
    for (const auto& f : folds) {
        int c0 = 0, c1 = 0;
        for (int i : f.test_idx) (labels[i] == 0 ? c0 : c1)++;
        CHECK(c0 == 2);
        CHECK(c1 == 2);
        CHECK(f.train_idx.size() == 16);
    }
}

TEST_CASE("stratified_kfold rejects degenerate requests") {
    const std::vector<int> labels{0, 0, 0, 1, 1, 1, 2, 2};
    CHECK_THROWS_AS(stratified_kfold(labels, 1, 0), DataError);
    try {
        stratified_kfold(labels, 3, 0);
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("class 2") != std::string::npos);
    }
}

TEST_CASE("stratified_kfold partitions any labelling (property)") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng() % 9);
        const int n_classes = 2 + static_cast<int>(rng() % 3);
        std::vector<int> labels;
        for (int c = 0; c < n_classes; ++c) {
            const int members = k + static_cast<int>(rng() % 15);
            for (int i = 0; i < members; ++i) labels.push_back(c);
        }
        std::shuffle(labels.begin(), labels.end(), rng);
        const auto seed = rng();
        const auto folds = stratified_kfold(labels, k, seed);
        REQUIRE(static_cast<int>(folds.size()) == k);

        std::vector<int> seen(labels.size(), 0);
        for (const auto& f : folds) {
            std::set<int> test(f.test_idx.begin(), f.test_idx.end());
            for (int i : f.train_idx) CHECK(test.count(i) == 0);
            CHECK(f.train_idx.size() + f.test_idx.size() == labels.size());
            for (int i : f.test_idx) ++seen[i];
            for (int c = 0; c < n_classes; ++c) {
                const double global = static_cast<double>(std::count(labels.begin(), labels.end(), c));
                const double in_test = static_cast<double>(
                    std::count_if(f.test_idx.begin(), f.test_idx.end(), [&](int i) { return labels[i] == c; }));
                CHECK(std::abs(in_test - global / k) < 1.0);
                const bool in_train = std::any_of(f.train_idx.begin(), f.train_idx.end(),
                                                  [&](int i) { return labels[i] == c; });
                CHECK(in_train);
            }
        }
        for (int s : seen) CHECK(s == 1);

        const auto again = stratified_kfold(labels, k, seed);
        for (int f = 0; f < k; ++f) CHECK(again[f].test_idx == folds[f].test_idx);
    }
}

TEST_CASE("split_hash distinguishes different splits") {
    const std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
    const auto a = stratified_kfold(labels, 2, 1);
    const auto b = stratified_kfold(labels, 2, 1);
    CHECK(split_hash(a[0]) == split_hash(b[0]));
    CHECK(split_hash(a[0]) != split_hash(a[1]));
}

TEST_CASE("Dataset::with_elements keeps the chosen columns in order") {
    const auto ds = generate_synthetic(small_synth(2));
    const std::vector<int> pick{2, 0};
    const auto sub = ds.with_elements(pick);
    CHECK(sub.element_names == std::vector<std::string>{"fdg", "gender"});
    CHECK(sub.demographics.col(0) == ds.demographics.col(2));
    CHECK(sub.demographics.col(1) == ds.demographics.col(0));
    CHECK(ds.element_index("age") == 1);
    CHECK_THROWS_AS(ds.element_index("bmi"), DataError);
}
