#include "peftsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace peftsim {
namespace {

std::vector<double> random_unit(std::size_t d, RngStream& rng) {
    std::vector<double> v(d);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace

Dataset make_synthetic(std::size_t n_classes, std::size_t d, std::size_t n_per_class,
                       double class_sep, RngStream& stream) {
    if (n_classes == 0 || d == 0 || n_per_class == 0)
        throw ShapeError("make_synthetic: all sizes must be positive");

    // greedy max-separation mean directions: among candidates, keep the one
    // whose largest dot product with the chosen set is smallest
    std::vector<std::vector<double>> mus;
    mus.push_back(random_unit(d, stream));
    for (std::size_t c = 1; c < n_classes; ++c) {
        std::vector<double> best;
        double best_worst = 2.0;
        for (int cand = 0; cand < 64; ++cand) {
            std::vector<double> u = random_unit(d, stream);
            double worst = -2.0;
            for (const auto& mu : mus) {
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += u[i] * mu[i];
                worst = std::max(worst, dot);
            }
            if (worst < best_worst) {
                best_worst = worst;
                best = std::move(u);
            }
        }
        mus.push_back(std::move(best));
    }

    const std::size_t n = n_classes * n_per_class;
    Dataset ds;
    ds.n_classes = n_classes;
    ds.features = Matrix(d, n);
    ds.labels.resize(n);
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t k = 0; k < n_per_class; ++k) {
            const std::size_t col = c * n_per_class + k;
            ds.labels[col] = static_cast<int>(c);
            for (std::size_t i = 0; i < d; ++i)
                ds.features(i, col) = class_sep * mus[c][i] + stream.normal();
        }
    }
    return ds;
}

std::vector<std::vector<std::size_t>> partition(const Dataset& ds, const PartitionSpec& spec) {
    const std::size_t n = ds.size();
    if (spec.n_clients == 0 || spec.n_clients > n)
        throw ShapeError("partition: invalid client count");
    RngStream rng(spec.seed, 0xD1A7);

    if (spec.mode == PartitionMode::IID) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        // Fisher-Yates with the deterministic stream
        for (std::size_t i = n; i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
        std::vector<std::vector<std::size_t>> shards(spec.n_clients);
        for (std::size_t i = 0; i < n; ++i) shards[i % spec.n_clients].push_back(idx[i]);
        return shards;
    }

    if (spec.alpha <= 0.0) throw NumericError("partition: alpha must be > 0");
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<std::vector<std::size_t>> shards(spec.n_clients);
        // per class, a client-proportion vector from Dir(alpha)
        std::vector<std::vector<double>> cum(ds.n_classes);
        for (std::size_t c = 0; c < ds.n_classes; ++c) {
            auto p = rng.dirichlet(spec.alpha, spec.n_clients);
            cum[c].resize(spec.n_clients);
            double acc = 0.0;
            for (std::size_t j = 0; j < spec.n_clients; ++j) {
                acc += p[j];
                cum[c][j] = acc;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto& cc = cum[static_cast<std::size_t>(ds.labels[i])];
            const double u = rng.uniform();
            const std::size_t client = static_cast<std::size_t>(
                std::lower_bound(cc.begin(), cc.end(), u) - cc.begin());
            shards[std::min(client, spec.n_clients - 1)].push_back(i);
        }
        const bool ok = std::all_of(shards.begin(), shards.end(), [&](const auto& s) {
            return s.size() >= spec.min_shard_size;
        });
        if (ok) return shards;
    }
    throw NumericError("partition: could not produce non-degenerate shards in 100 attempts");
}

Matrix gather_features(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Matrix out(ds.features.rows(), idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j)
        for (std::size_t i = 0; i < ds.features.rows(); ++i) out(i, j) = ds.features(i, idx[j]);
    return out;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = ds.labels[idx[j]];
    return out;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::ptrdiff_t label_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == "label") label_col = static_cast<std::ptrdiff_t>(i);
    if (label_col < 0) throw std::runtime_error("load_csv: no 'label' column in " + path);

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> feat;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            if (static_cast<std::ptrdiff_t>(col) == label_col)
                labels.push_back(std::stoi(cell));
            else
                feat.push_back(std::stod(cell));
            ++col;
        }
        if (col != header.size())
            throw std::runtime_error("load_csv: ragged row in " + path);
        rows.push_back(std::move(feat));
    }
    if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

    Dataset ds;
    const std::size_t d = rows.front().size();
    ds.features = Matrix(d, rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        if (rows[j].size() != d) throw std::runtime_error("load_csv: ragged row in " + path);
        for (std::size_t i = 0; i < d; ++i) ds.features(i, j) = rows[j][i];
    }
    ds.labels = std::move(labels);
    int max_label = 0;
    for (int y : ds.labels) {
        if (y < 0) throw std::runtime_error("load_csv: negative label in " + path);
        max_label = std::max(max_label, y);
    }
    ds.n_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

}  // namespace peftsim
