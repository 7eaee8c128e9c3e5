#include "popgcn/data.hpp"

#include "popgcn/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace popgcn {
namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_cells(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

double parse_cell(std::string_view cell, const std::string& file, std::size_t row, std::size_t col) {
    double value = 0.0;
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
    if (cell.empty() || ec != std::errc() || ptr != end) {
        throw DataError(file + ": non-numeric cell '" + std::string(cell) + "' at row " +
                        std::to_string(row) + ", column " + std::to_string(col));
    }
    return value;
}

CsvTable read_csv(const std::filesystem::path& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    const std::string name = path.filename().string();

    CsvTable table;
    std::string line;
    std::size_t row = 0;
    bool header_pending = has_header;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto cells = split_cells(line);
        if (header_pending) {
            for (auto c : cells) table.header.emplace_back(c);
            width = cells.size();
            header_pending = false;
            continue;
        }
        if (width == 0) width = cells.size();
        if (cells.size() != width) {
            throw DataError(name + ": row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " columns, expected " +
                            std::to_string(width));
        }
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) values[c] = parse_cell(cells[c], name, row, c);
        table.rows.push_back(std::move(values));
        ++row;
    }
    if (header_pending) throw DataError(name + ": missing header row");
    return table;
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c];
    return m;
}

void check_rows(const char* what, std::size_t got, const char* ref, std::size_t expected) {
    if (got != expected) {
        throw DataError(std::string("row-count mismatch: ") + what + " has " + std::to_string(got) +
                        " rows, " + ref + " has " + std::to_string(expected));
    }
}

void write_row(std::ostream& out, const auto& row) {
    char buf[32];
    for (Eigen::Index c = 0; c < row.size(); ++c) {
        if (c) out << ',';
        std::snprintf(buf, sizeof buf, "%.17g", row(c));
        out << buf;
    }
    out << '\n';
}

}  // namespace

Matrix Dataset::one_hot() const {
    Matrix y = Matrix::Zero(n_nodes(), n_classes);
    for (int i = 0; i < n_nodes(); ++i) y(i, labels[i]) = 1.0;
    return y;
}

int Dataset::element_index(const std::string& name) const {
    const auto it = std::find(element_names.begin(), element_names.end(), name);
    if (it == element_names.end()) throw DataError("unknown demographic element '" + name + "'");
    return static_cast<int>(it - element_names.begin());
}

Dataset Dataset::with_elements(std::span<const int> elements) const {
    Dataset out;
    out.features = features;
    out.labels = labels;
    out.n_classes = n_classes;
    out.demographics.resize(n_nodes(), static_cast<Eigen::Index>(elements.size()));
    for (std::size_t j = 0; j < elements.size(); ++j) {
        const int m = elements[j];
        if (m < 0 || m >= n_elements()) throw DataError("element index out of range: " + std::to_string(m));
        out.demographics.col(static_cast<Eigen::Index>(j)) = demographics.col(m);
        out.element_names.push_back(element_names[m]);
    }
    return out;
}

void Dataset::validate() const {
    const auto n = static_cast<Eigen::Index>(labels.size());
    if (features.rows() != n) {
        check_rows("features", static_cast<std::size_t>(features.rows()), "labels", labels.size());
    }
    if (demographics.rows() != n) {
        check_rows("demographics", static_cast<std::size_t>(demographics.rows()), "labels", labels.size());
    }
    if (n_classes < 1) throw DataError("n_classes must be positive");
    for (Eigen::Index i = 0; i < features.rows(); ++i)
        for (Eigen::Index j = 0; j < features.cols(); ++j)
            if (!std::isfinite(features(i, j)))
                throw DataError("non-finite feature at row " + std::to_string(i) + ", column " +
                                std::to_string(j));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(n_classes) + ")");
    if (demographics.cols() != static_cast<Eigen::Index>(element_names.size()))
        throw DataError("demographics has " + std::to_string(demographics.cols()) + " columns but " +
                        std::to_string(element_names.size()) + " element names");
}

void SynthConfig::validate() const {
    if (n_classes < 2) throw ConfigError("synth.n_classes", "must be >= 2");
    if (n_nodes < n_classes) throw ConfigError("synth.n_nodes", "must be >= n_classes");
    if (n_features < std::max(2, n_classes))
        throw ConfigError("synth.n_features", "must be >= max(2, n_classes)");
    if (!(class_separation >= 0.0)) throw ConfigError("synth.class_separation", "must be >= 0");
    if (informative_elements.empty() && noise_elements.empty())
        throw ConfigError("synth", "needs at least one informative or noise element");
    for (const auto& e : informative_elements)
        if (!(e.class_correlation >= 0.0 && e.class_correlation <= 1.0))
            throw ConfigError("synth.informative_elements." + e.name, "class_correlation must be in [0, 1]");
}

Dataset load_dataset(const std::filesystem::path& features_path,
                     const std::filesystem::path& labels_path,
                     const std::filesystem::path& demographics_path) {
    const auto feat = read_csv(features_path, false);
    const auto lab = read_csv(labels_path, false);
    const auto demo = read_csv(demographics_path, true);

    check_rows("features", feat.rows.size(), "labels", lab.rows.size());
    check_rows("demographics", demo.rows.size(), "labels", lab.rows.size());
    if (!lab.rows.empty() && lab.rows.front().size() != 1)
        throw DataError("labels file must have a single column");

    Dataset ds;
    ds.features = to_matrix(feat.rows, feat.rows.empty() ? 0 : feat.rows.front().size());
    ds.demographics = to_matrix(demo.rows, demo.header.size());
    ds.element_names = demo.header;
    int max_label = -1;
    for (std::size_t i = 0; i < lab.rows.size(); ++i) {
        const double v = lab.rows[i][0];
        if (v != std::floor(v)) throw DataError("labels: non-integer label at row " + std::to_string(i));
        if (v < 0) throw DataError("labels: negative label at row " + std::to_string(i));
        ds.labels.push_back(static_cast<int>(v));
        max_label = std::max(max_label, ds.labels.back());
    }
    ds.n_classes = max_label + 1;
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    std::ofstream feat(directory / "features.csv");
    std::ofstream lab(directory / "labels.csv");
    std::ofstream demo(directory / "demographics.csv");
    if (!feat || !lab || !demo) throw DataError("cannot write dataset to " + directory.string());
    for (Eigen::Index i = 0; i < dataset.features.rows(); ++i) write_row(feat, dataset.features.row(i));
    for (int y : dataset.labels) lab << y << '\n';
    for (std::size_t m = 0; m < dataset.element_names.size(); ++m)
        demo << (m ? "," : "") << dataset.element_names[m];
    demo << '\n';
    for (Eigen::Index i = 0; i < dataset.demographics.rows(); ++i) write_row(demo, dataset.demographics.row(i));
}

Dataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int n = cfg.n_nodes;
    const int k = cfg.n_classes;

    Dataset ds;
    ds.n_classes = k;
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) ds.labels[i] = i % k;
    std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

    // Class means sit on scaled basis vectors so every pair is class_separation apart.
    const double offset = cfg.class_separation / std::sqrt(2.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ds.features.resize(n, cfg.n_features);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < cfg.n_features; ++j) ds.features(i, j) = gauss(rng);
        ds.features(i, ds.labels[i]) += offset;
    }

    const auto n_elements = cfg.informative_elements.size() + cfg.noise_elements.size();
    ds.demographics.resize(n, static_cast<Eigen::Index>(n_elements));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> any_class(0, k - 1);
    Eigen::Index col = 0;
    for (const auto& e : cfg.informative_elements) {
        for (int i = 0; i < n; ++i) {
            const bool keep = unit(rng) < e.class_correlation;
            const int random_class = any_class(rng);
            ds.demographics(i, col) = keep ? ds.labels[i] : random_class;
        }
        ds.element_names.push_back(e.name);
        ++col;
    }
    for (const auto& name : cfg.noise_elements) {
        for (int i = 0; i < n; ++i) ds.demographics(i, col) = unit(rng);
        ds.element_names.push_back(name);
        ++col;
    }
    ds.validate();
    return ds;
}

std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
    if (k < 2) throw DataError("stratified_kfold: k must be >= 2 (got " + std::to_string(k) + ")");
    std::map<int, IndexList> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
    for (const auto& [cls, members] : by_class)
        if (static_cast<int>(members.size()) < k)
            throw DataError("stratified_kfold: class " + std::to_string(cls) + " has " +
                            std::to_string(members.size()) + " members, fewer than k=" + std::to_string(k));

    std::mt19937_64 rng(seed);
    std::vector<IndexList> test(k);
    // Deal each shuffled class round-robin, continuing where the previous
    // class stopped so fold sizes also stay within one of each other.
    int next = 0;
    for (auto& [cls, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (int idx : members) {
            test[next].push_back(idx);
            next = (next + 1) % k;
        }
    }

    std::vector<FoldSplit> folds(k);
    std::vector<int> owner(labels.size());
    for (int f = 0; f < k; ++f)
        for (int idx : test[f]) owner[idx] = f;
    for (int f = 0; f < k; ++f) {
        folds[f].fold_id = f;
        folds[f].test_idx = test[f];
        std::sort(folds[f].test_idx.begin(), folds[f].test_idx.end());
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (owner[i] != f) folds[f].train_idx.push_back(static_cast<int>(i));
    }
    return folds;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finaliser over the combined state
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t split_hash(const FoldSplit& fold) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    auto train = fold.train_idx;
    auto test = fold.test_idx;
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    for (int i : train) mix(static_cast<std::uint64_t>(i));
    mix(~0ULL);
    for (int i : test) mix(static_cast<std::uint64_t>(i));
    return h;
}

}  // namespace popgcn
