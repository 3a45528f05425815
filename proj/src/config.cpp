#include "peftsim/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace peftsim {
namespace {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& message) { throw ConfigError(message); }

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) fail(where + ": unknown key '" + key + "'");
    }
}

const json& require(const json& obj, const std::string& where, const std::string& key) {
    auto it = obj.find(key);
    if (it == obj.end()) fail(where + ": missing required field '" + key + "'");
    return *it;
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    auto it = obj.find(key);
    return it == obj.end() ? fallback : it->get<T>();
}

StrategyTag strategy_from(const std::string& name) {
    if (name == "full_ft") return StrategyTag::FullFT;
    if (name == "fedit") return StrategyTag::FedIT;
    if (name == "fedex_lora") return StrategyTag::FedExLoRA;
    if (name == "ffa_lora") return StrategyTag::FFALoRA;
    if (name == "fed_sb") return StrategyTag::FedSB;
    if (name == "hetlora") return StrategyTag::HetLoRA;
    if (name == "flexlora") return StrategyTag::FlexLoRA;
    if (name == "ravan") return StrategyTag::Ravan;
    fail("strategy.name: unknown strategy '" + name + "'");
}

ScoreFnTag score_from(const std::string& name) {
    if (name == "random") return ScoreFnTag::Random;
    if (name == "weight_based") return ScoreFnTag::WeightBased;
    if (name == "gradient_based") return ScoreFnTag::GradientBased;
    fail("strategy.score_fn: unknown scoring function '" + name + "'");
}

InitSchemeTag init_from(const std::string& name) {
    if (name == "random_normal") return InitSchemeTag::RandomNormal;
    if (name == "gram_schmidt") return InitSchemeTag::GramSchmidt;
    if (name == "constant") return InitSchemeTag::Constant;
    if (name == "shared_subspace") return InitSchemeTag::SharedSubspace;
    fail("strategy.init: unknown init scheme '" + name + "'");
}

PartitionMode partition_from(const std::string& name) {
    if (name == "iid") return PartitionMode::IID;
    if (name == "dirichlet") return PartitionMode::Dirichlet;
    fail("federation.partition: unknown partition mode '" + name + "'");
}

BudgetDist budget_from(const std::string& name) {
    if (name == "uniform") return BudgetDist::Uniform;
    if (name == "bell_shaped") return BudgetDist::BellShaped;
    if (name == "skewed_right") return BudgetDist::SkewedRight;
    fail("federation.budget_dist: unknown budget distribution '" + name + "'");
}

Optimizer optimizer_from(const std::string& name) {
    if (name == "adam") return Optimizer::Adam;
    if (name == "sgd") return Optimizer::Sgd;
    fail("optimizer.name: unknown optimizer '" + name + "'");
}

const char* score_name(ScoreFnTag tag) {
    switch (tag) {
        case ScoreFnTag::Random: return "random";
        case ScoreFnTag::WeightBased: return "weight_based";
        case ScoreFnTag::GradientBased: return "gradient_based";
    }
    return "?";
}

const char* init_name(InitSchemeTag tag) {
    switch (tag) {
        case InitSchemeTag::RandomNormal: return "random_normal";
        case InitSchemeTag::GramSchmidt: return "gram_schmidt";
        case InitSchemeTag::Constant: return "constant";
        case InitSchemeTag::SharedSubspace: return "shared_subspace";
    }
    return "?";
}

const char* budget_name(BudgetDist dist) {
    switch (dist) {
        case BudgetDist::Uniform: return "uniform";
        case BudgetDist::BellShaped: return "bell_shaped";
        case BudgetDist::SkewedRight: return "skewed_right";
    }
    return "?";
}

}  // namespace

const char* strategy_name(StrategyTag tag) {
    switch (tag) {
        case StrategyTag::FullFT: return "full_ft";
        case StrategyTag::FedIT: return "fedit";
        case StrategyTag::FedExLoRA: return "fedex_lora";
        case StrategyTag::FFALoRA: return "ffa_lora";
        case StrategyTag::FedSB: return "fed_sb";
        case StrategyTag::HetLoRA: return "hetlora";
        case StrategyTag::FlexLoRA: return "flexlora";
        case StrategyTag::Ravan: return "ravan";
    }
    return "?";
}

ExperimentConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) fail("config: top level must be an object");
    check_keys(root, "config",
               {"version", "strategy", "federation", "model", "data", "optimizer", "seeds",
                "output_dir", "sweep"});

    ExperimentConfig cfg;
    cfg.version = require(root, "config", "version").get<int>();
    if (cfg.version != 1) fail("config: unsupported version " + std::to_string(cfg.version));

    try {
        const json& strat = require(root, "config", "strategy");
        check_keys(strat, "strategy",
                   {"name", "rank", "heads", "score_fn", "trainable_scaling", "init"});
        cfg.strategy.tag = strategy_from(require(strat, "strategy", "name").get<std::string>());
        cfg.strategy.rank = get_or<std::size_t>(strat, "rank", 4);
        cfg.strategy.heads = get_or<std::size_t>(strat, "heads", 4);
        cfg.strategy.score_fn = score_from(get_or<std::string>(strat, "score_fn", "random"));
        cfg.strategy.trainable_scaling = get_or<bool>(strat, "trainable_scaling", true);
        cfg.strategy.init.tag = init_from(get_or<std::string>(strat, "init", "random_normal"));
        if (cfg.strategy.rank == 0) fail("strategy.rank: must be positive");
        if (cfg.strategy.heads == 0) fail("strategy.heads: must be positive");

        const json& fed = require(root, "config", "federation");
        check_keys(fed, "federation",
                   {"n_clients", "clients_per_round", "rounds", "local_steps", "batch_size",
                    "partition", "alpha", "min_shard_size", "budget_dist", "heterogeneous"});
        cfg.fl.n_clients = require(fed, "federation", "n_clients").get<std::size_t>();
        cfg.fl.clients_per_round = get_or<std::size_t>(fed, "clients_per_round", 3);
        cfg.rounds = require(fed, "federation", "rounds").get<std::size_t>();
        cfg.fl.train.local_steps = get_or<std::size_t>(fed, "local_steps", 50);
        cfg.fl.train.batch_size = get_or<std::size_t>(fed, "batch_size", 16);
        cfg.fl.partition = partition_from(get_or<std::string>(fed, "partition", "dirichlet"));
        cfg.fl.alpha = get_or<double>(fed, "alpha", 0.3);
        cfg.fl.min_shard_size = get_or<std::size_t>(fed, "min_shard_size", 1);
        cfg.fl.budget_dist = budget_from(get_or<std::string>(fed, "budget_dist", "uniform"));
        cfg.fl.heterogeneous = get_or<bool>(fed, "heterogeneous", false);
        if (cfg.fl.n_clients == 0) fail("federation.n_clients: must be positive");
        if (cfg.fl.clients_per_round == 0 || cfg.fl.clients_per_round > cfg.fl.n_clients)
            fail("federation.clients_per_round: must be in [1, n_clients]");
        if (cfg.fl.train.batch_size == 0) fail("federation.batch_size: must be positive");
        if (cfg.fl.alpha <= 0.0) fail("federation.alpha: must be > 0");

        const json& model = require(root, "config", "model");
        check_keys(model, "model", {"d", "n_classes", "layers"});
        cfg.d = require(model, "model", "d").get<std::size_t>();
        cfg.n_classes = require(model, "model", "n_classes").get<std::size_t>();
        cfg.layers = get_or<std::size_t>(model, "layers", 2);
        if (cfg.d == 0) fail("model.d: must be positive");
        if (cfg.n_classes < 2) fail("model.n_classes: must be at least 2");
        if (cfg.layers != 2) fail("model.layers: this architecture is fixed at 2");

        const json& data = require(root, "config", "data");
        check_keys(data, "data",
                   {"n_per_class_train", "n_per_class_test", "class_sep", "data_seed",
                    "csv_train", "csv_test"});
        cfg.n_per_class_train = get_or<std::size_t>(data, "n_per_class_train", 40);
        cfg.n_per_class_test = get_or<std::size_t>(data, "n_per_class_test", 15);
        cfg.class_sep = get_or<double>(data, "class_sep", 8.0);
        cfg.data_seed = get_or<std::uint64_t>(data, "data_seed", 4);
        cfg.csv_train = get_or<std::string>(data, "csv_train", "");
        cfg.csv_test = get_or<std::string>(data, "csv_test", "");
        if (cfg.csv_train.empty() != cfg.csv_test.empty())
            fail("data: csv_train and csv_test must be set together");

        const json& opt = require(root, "config", "optimizer");
        check_keys(opt, "optimizer", {"name", "lr", "beta1", "beta2"});
        cfg.fl.train.optimizer = optimizer_from(get_or<std::string>(opt, "name", "adam"));
        cfg.fl.train.lr = require(opt, "optimizer", "lr").get<double>();
        cfg.fl.train.beta1 = get_or<double>(opt, "beta1", 0.9);
        cfg.fl.train.beta2 = get_or<double>(opt, "beta2", 0.999);
        if (cfg.fl.train.lr <= 0.0) fail("optimizer.lr: must be > 0");

        cfg.seeds = require(root, "config", "seeds").get<std::vector<std::uint64_t>>();
        if (cfg.seeds.empty()) fail("seeds: need at least one seed");
        cfg.output_dir = require(root, "config", "output_dir").get<std::string>();
        if (cfg.output_dir.empty()) fail("output_dir: must not be empty");

        if (auto it = root.find("sweep"); it != root.end()) {
            check_keys(*it, "sweep", {"lr", "heads", "alpha", "budget_dist", "init"});
            cfg.sweep_lr = get_or<std::vector<double>>(*it, "lr", {});
            cfg.sweep_heads = get_or<std::vector<std::size_t>>(*it, "heads", {});
            cfg.sweep_alpha = get_or<std::vector<double>>(*it, "alpha", {});
            for (const auto& name : get_or<std::vector<std::string>>(*it, "budget_dist", {}))
                cfg.sweep_budget_dist.push_back(budget_from(name));
            for (const auto& name : get_or<std::vector<std::string>>(*it, "init", {}))
                cfg.sweep_init.push_back(init_from(name));
        }
    } catch (const json::exception& e) {
        fail(std::string("config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string resolved_config(const ExperimentConfig& cfg) {
    ordered root;
    root["version"] = cfg.version;
    root["strategy"] = {{"name", strategy_name(cfg.strategy.tag)},
                        {"rank", cfg.strategy.rank},
                        {"heads", cfg.strategy.heads},
                        {"score_fn", score_name(cfg.strategy.score_fn)},
                        {"trainable_scaling", cfg.strategy.trainable_scaling},
                        {"init", init_name(cfg.strategy.init.tag)}};
    root["federation"] = {{"n_clients", cfg.fl.n_clients},
                          {"clients_per_round", cfg.fl.clients_per_round},
                          {"rounds", cfg.rounds},
                          {"local_steps", cfg.fl.train.local_steps},
                          {"batch_size", cfg.fl.train.batch_size},
                          {"partition",
                           cfg.fl.partition == PartitionMode::IID ? "iid" : "dirichlet"},
                          {"alpha", cfg.fl.alpha},
                          {"min_shard_size", cfg.fl.min_shard_size},
                          {"budget_dist", budget_name(cfg.fl.budget_dist)},
                          {"heterogeneous", cfg.fl.heterogeneous}};
    root["model"] = {{"d", cfg.d}, {"n_classes", cfg.n_classes}, {"layers", cfg.layers}};
    root["data"] = {{"n_per_class_train", cfg.n_per_class_train},
                    {"n_per_class_test", cfg.n_per_class_test},
                    {"class_sep", cfg.class_sep},
                    {"data_seed", cfg.data_seed},
                    {"csv_train", cfg.csv_train},
                    {"csv_test", cfg.csv_test}};
    root["optimizer"] = {{"name", cfg.fl.train.optimizer == Optimizer::Adam ? "adam" : "sgd"},
                         {"lr", cfg.fl.train.lr},
                         {"beta1", cfg.fl.train.beta1},
                         {"beta2", cfg.fl.train.beta2}};
    root["seeds"] = cfg.seeds;
    root["output_dir"] = cfg.output_dir;

    ordered sweep;
    if (!cfg.sweep_lr.empty()) sweep["lr"] = cfg.sweep_lr;
    if (!cfg.sweep_heads.empty()) sweep["heads"] = cfg.sweep_heads;
    if (!cfg.sweep_alpha.empty()) sweep["alpha"] = cfg.sweep_alpha;
    if (!cfg.sweep_budget_dist.empty()) {
        std::vector<std::string> names;
        for (auto d : cfg.sweep_budget_dist) names.push_back(budget_name(d));
        sweep["budget_dist"] = names;
    }
    if (!cfg.sweep_init.empty()) {
        std::vector<std::string> names;
        for (auto i : cfg.sweep_init) names.push_back(init_name(i));
        sweep["init"] = names;
    }
    if (!sweep.empty()) root["sweep"] = sweep;
    return root.dump(2) + "\n";
}

std::pair<Dataset, Dataset> make_task(const ExperimentConfig& cfg) {
    if (!cfg.csv_train.empty()) return {load_csv(cfg.csv_train), load_csv(cfg.csv_test)};
    // one draw, leading samples per class train, the rest held out
    RngStream rng(cfg.data_seed, 78);
    const std::size_t per = cfg.n_per_class_train + cfg.n_per_class_test;
    Dataset full = make_synthetic(cfg.n_classes, cfg.d, per, cfg.class_sep, rng);
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t c = 0; c < cfg.n_classes; ++c)
        for (std::size_t k = 0; k < per; ++k)
            (k < cfg.n_per_class_train ? train_idx : test_idx).push_back(c * per + k);
    Dataset train{gather_features(full, train_idx), gather_labels(full, train_idx),
                  cfg.n_classes};
    Dataset test{gather_features(full, test_idx), gather_labels(full, test_idx), cfg.n_classes};
    return {train, test};
}

}  // namespace peftsim
