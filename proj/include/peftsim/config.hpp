#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "peftsim/flcore.hpp"

namespace peftsim {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Versioned experiment description. Parsing is strict: unknown keys,
// missing required fields and out-of-range enums are all ConfigErrors.
struct ExperimentConfig {
    int version = 1;

    AggregationStrategy strategy;
    FlConfig fl;  // fl.seed is overwritten per run from `seeds`
    std::size_t rounds = 30;

    std::size_t d = 16;
    std::size_t n_classes = 4;
    std::size_t layers = 2;

    // synthetic task; a csv pair overrides it
    std::size_t n_per_class_train = 40;
    std::size_t n_per_class_test = 15;
    double class_sep = 8.0;
    std::uint64_t data_seed = 4;
    std::string csv_train;
    std::string csv_test;

    std::vector<std::uint64_t> seeds = {0};
    std::string output_dir = "out";

    // optional per-axis sweep values, keyed by axis name
    std::vector<double> sweep_lr;
    std::vector<std::size_t> sweep_heads;
    std::vector<double> sweep_alpha;
    std::vector<BudgetDist> sweep_budget_dist;
    std::vector<InitSchemeTag> sweep_init;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

// Full resolved echo; parse_config(resolved_config(c)) reproduces c.
std::string resolved_config(const ExperimentConfig& config);

const char* strategy_name(StrategyTag tag);

// Builds the train/test pair the config describes.
std::pair<Dataset, Dataset> make_task(const ExperimentConfig& config);

}  // namespace peftsim
