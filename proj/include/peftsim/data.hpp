#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "peftsim/matrix.hpp"
#include "peftsim/rng.hpp"

namespace peftsim {

struct Dataset {
    Matrix features;          // d x n
    std::vector<int> labels;  // length n, values in [0, n_classes)
    std::size_t n_classes = 0;

    std::size_t size() const { return labels.size(); }
};

enum class PartitionMode { IID, Dirichlet };

struct PartitionSpec {
    std::size_t n_clients = 1;
    PartitionMode mode = PartitionMode::IID;
    double alpha = 0.3;
    std::uint64_t seed = 0;
    // shards smaller than this trigger a proportion redraw
    std::size_t min_shard_size = 1;
};

// Gaussian clusters: class c is centered at class_sep * mu_c for unit mean
// directions chosen greedily to maximize pairwise separation, with unit
// covariance. Deterministic per stream.
Dataset make_synthetic(std::size_t n_classes, std::size_t d, std::size_t n_per_class,
                       double class_sep, RngStream& stream);

// Disjoint, exhaustive index shards. IID deals an equal-size random split;
// Dirichlet draws, per class, a client-proportion vector from
// Dir(alpha * 1_{n_clients}) and assigns each sample by it. Undersized
// shards cause a full redraw (up to 100 attempts).
std::vector<std::vector<std::size_t>> partition(const Dataset& ds, const PartitionSpec& spec);

Matrix gather_features(const Dataset& ds, const std::vector<std::size_t>& idx);
std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& idx);

// CSV with a header row; the column named "label" holds integer class ids,
// every other column is a feature.
Dataset load_csv(const std::string& path);

}  // namespace peftsim
