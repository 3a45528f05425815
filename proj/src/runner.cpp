#include "peftsim/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "peftsim/analysis.hpp"
#include "peftsim/linalg.hpp"

namespace fs = std::filesystem;

namespace peftsim {
namespace {

constexpr double kLrGrid[] = {5e-5, 1e-5, 5e-4, 1e-4, 5e-3, 1e-3, 5e-2, 1e-2};

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmtg(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

void parallel_for(std::size_t jobs, std::size_t n, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    std::vector<std::exception_ptr> errors(n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double dataset_accuracy(const ToyModel& model, const Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return accuracy(model, gather_features(ds, all), gather_labels(ds, all));
}

double dataset_loss(const ToyModel& model, const Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return loss_and_grads(model, gather_features(ds, all), gather_labels(ds, all), nullptr);
}

struct SeedResult {
    std::uint64_t seed = 0;
    double final_acc = 0.0;
};

// One seed of one configuration: federated rounds plus the report tree
// <dir>/records.{csv,jsonl} + config.resolved + summary.json.
SeedResult run_single(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test,
                      std::uint64_t seed) {
    const std::string name = strategy_name(cfg.strategy.tag);
    const fs::path dir = fs::path(cfg.output_dir) / name / std::to_string(seed);
    fs::create_directories(dir);

    FlConfig fl = cfg.fl;
    fl.seed = seed;
    FlRun run = make_fl_run(cfg.strategy, fl, train, test);
    std::vector<RoundRecord> records;
    records.reserve(cfg.rounds);
    for (std::size_t t = 0; t < cfg.rounds; ++t) records.push_back(run_round(run));

    write_report_csv(records, name, seed, (dir / "records.csv").string());
    write_report_jsonl(records, name, seed, (dir / "records.jsonl").string());

    ExperimentConfig echoed = cfg;
    echoed.seeds = {seed};
    std::ofstream(dir / "config.resolved") << resolved_config(echoed);

    SeedResult res;
    res.seed = seed;
    double train_loss = 0.0, eval_loss = 0.0;
    if (!records.empty()) {
        res.final_acc = records.back().eval_acc;
        train_loss = records.back().train_loss;
        eval_loss = records.back().eval_loss;
    } else {
        res.final_acc = dataset_accuracy(run.global_model, test);
        eval_loss = dataset_loss(run.global_model, test);
    }
    nlohmann::ordered_json summary;
    summary["strategy"] = name;
    summary["seed"] = seed;
    summary["rounds"] = cfg.rounds;
    summary["final_train_loss"] = train_loss;
    summary["final_eval_loss"] = eval_loss;
    summary["final_acc"] = res.final_acc;
    std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
    return res;
}

std::vector<SeedResult> run_config(const ExperimentConfig& cfg, const Dataset& train,
                                   const Dataset& test, std::size_t jobs) {
    std::vector<SeedResult> results(cfg.seeds.size());
    parallel_for(jobs, cfg.seeds.size(),
                 [&](std::size_t i) { results[i] = run_single(cfg, train, test, cfg.seeds[i]); });
    return results;
}

struct SweepCell {
    std::string label;  // directory-safe "<axis>_<value>"
    std::string value;  // printable value
    ExperimentConfig cfg;
};

template <typename T>
std::vector<T> dedup_sorted(std::vector<T> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::vector<SweepCell> sweep_cells(const ExperimentConfig& base, const std::string& axis) {
    std::vector<SweepCell> cells;
    auto add = [&](const std::string& value, const std::function<void(ExperimentConfig&)>& apply) {
        SweepCell cell;
        cell.value = value;
        cell.label = axis + "_" + value;
        cell.cfg = base;
        apply(cell.cfg);
        cell.cfg.output_dir = (fs::path(base.output_dir) / cell.label).string();
        cells.push_back(std::move(cell));
    };
    if (axis == "lr") {
        std::vector<double> values = base.sweep_lr;
        if (values.empty()) values.assign(std::begin(kLrGrid), std::end(kLrGrid));
        for (double v : dedup_sorted(values))
            add(fmtg(v), [v](ExperimentConfig& c) { c.fl.train.lr = v; });
    } else if (axis == "heads") {
        for (std::size_t v : dedup_sorted(base.sweep_heads))
            add(std::to_string(v), [v](ExperimentConfig& c) { c.strategy.heads = v; });
    } else if (axis == "alpha") {
        for (double v : dedup_sorted(base.sweep_alpha))
            add(fmtg(v), [v](ExperimentConfig& c) { c.fl.alpha = v; });
    } else if (axis == "budget_dist") {
        auto values = base.sweep_budget_dist;
        std::vector<std::pair<std::string, BudgetDist>> named;
        for (BudgetDist v : values) {
            const char* n = v == BudgetDist::Uniform       ? "uniform"
                            : v == BudgetDist::BellShaped ? "bell_shaped"
                                                          : "skewed_right";
            named.emplace_back(n, v);
        }
        for (const auto& [n, v] : dedup_sorted(named))
            add(n, [v = v](ExperimentConfig& c) { c.fl.budget_dist = v; });
    } else if (axis == "init") {
        std::vector<std::pair<std::string, InitSchemeTag>> named;
        for (InitSchemeTag v : base.sweep_init) {
            const char* n = v == InitSchemeTag::RandomNormal  ? "random_normal"
                            : v == InitSchemeTag::GramSchmidt ? "gram_schmidt"
                            : v == InitSchemeTag::Constant    ? "constant"
                                                              : "shared_subspace";
            named.emplace_back(n, v);
        }
        for (const auto& [n, v] : dedup_sorted(named))
            add(n, [v = v](ExperimentConfig& c) { c.strategy.init.tag = v; });
    } else {
        throw ConfigError("sweep: unknown axis '" + axis +
                          "' (expected lr, heads, alpha, budget_dist or init)");
    }
    if (cells.empty()) throw ConfigError("sweep: config lists no values for axis '" + axis + "'");
    return cells;
}

const char* regime_label(Regime r) {
    switch (r) {
        case Regime::Centralized: return "centralized";
        case Regime::FedIID: return "fed_iid";
        case Regime::FedNonIID: return "fed_noniid";
    }
    return "?";
}

}  // namespace

int cmd_run(const ExperimentConfig& config, std::size_t jobs, std::ostream& out,
            std::ostream& err) {
    try {
        auto [train, test] = make_task(config);
        auto results = run_config(config, train, test, jobs);
        for (const auto& res : results)
            out << strategy_name(config.strategy.tag) << ' ' << res.seed << ' '
                << fmt17(res.final_acc) << '\n';
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_sweep(const ExperimentConfig& config, const std::string& axis, std::size_t jobs,
              std::ostream& out, std::ostream& err) {
    try {
        auto [train, test] = make_task(config);
        auto cells = sweep_cells(config, axis);

        // flatten (cell, seed) so a small sweep still fills all workers
        std::vector<std::vector<SeedResult>> results(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c)
            results[c].resize(cells[c].cfg.seeds.size());
        std::vector<std::pair<std::size_t, std::size_t>> tasks;
        for (std::size_t c = 0; c < cells.size(); ++c)
            for (std::size_t s = 0; s < cells[c].cfg.seeds.size(); ++s) tasks.emplace_back(c, s);
        parallel_for(jobs, tasks.size(), [&](std::size_t i) {
            const auto [c, s] = tasks[i];
            results[c][s] = run_single(cells[c].cfg, train, test, cells[c].cfg.seeds[s]);
        });

        nlohmann::ordered_json cells_json = nlohmann::ordered_json::array();
        std::size_t best = 0;
        double best_mean = -1.0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double mean = 0.0;
            for (const auto& res : results[c]) {
                out << cells[c].label << ' ' << strategy_name(cells[c].cfg.strategy.tag) << ' '
                    << res.seed << ' ' << fmt17(res.final_acc) << '\n';
                mean += res.final_acc;
            }
            mean /= static_cast<double>(results[c].size());
            double var = 0.0;
            for (const auto& res : results[c])
                var += (res.final_acc - mean) * (res.final_acc - mean);
            const double sd = std::sqrt(var / static_cast<double>(results[c].size()));
            if (mean > best_mean) {
                best_mean = mean;
                best = c;
            }
            cells_json.push_back({{"axis", axis},
                                  {"value", cells[c].value},
                                  {"mean_final_acc", mean},
                                  {"std_final_acc", sd}});
        }
        out << "best " << axis << '=' << cells[best].value << " mean_final_acc "
            << fmt17(best_mean) << '\n';

        nlohmann::ordered_json summary;
        summary["axis"] = axis;
        summary["cells"] = cells_json;
        summary["best_value"] = cells[best].value;
        summary["best_mean_final_acc"] = best_mean;
        fs::create_directories(config.output_dir);
        std::ofstream(fs::path(config.output_dir) / "sweep_summary.json")
            << summary.dump(2) << "\n";
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_spectra(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    try {
        auto [train, test] = make_task(config);
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (std::uint64_t seed : config.seeds) {
            // common attainable target: 90% of the centralized ceiling
            const double ceiling = centralized_ceiling(train, test, 300, config.fl.train.lr, seed);
            SpectraOpts opts;
            opts.target_acc = 0.9 * ceiling;
            opts.fl = config.fl;
            auto reports = spectra_experiment(train, test, opts, seed);

            const fs::path dir = fs::path(config.output_dir) / "spectra" / std::to_string(seed);
            fs::create_directories(dir);
            out << "seed " << seed;
            for (const auto& rep : reports) {
                write_spectrum(rep, (dir / (std::string(regime_label(rep.regime)) + ".txt"))
                                        .string());
                out << ' ' << regime_label(rep.regime) << ' ' << fmt17(rep.eff_rank_entropy);
                rows.push_back({{"seed", seed},
                                {"regime", regime_label(rep.regime)},
                                {"target_acc", opts.target_acc},
                                {"eff_rank_entropy", rep.eff_rank_entropy},
                                {"eff_rank_threshold", rep.eff_rank_threshold}});
            }
            out << '\n';
        }
        std::ofstream(fs::path(config.output_dir) / "spectra" / "summary.json")
            << rows.dump(2) << "\n";
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

namespace {

Matrix random_mat(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

// Analytic gradients vs central finite differences across every adapter
// family, on small random instances.
bool verify_gradients() {
    RngStream rng(41, 0);
    double worst = 0.0;
    for (int family = 0; family < 5; ++family) {
        ToyModel model = make_toy_model(6, 3, rng, family == 0);
        if (family == 1) {
            RavanAdapter ad = init_ravan(6, 6, 2, 3, {InitSchemeTag::RandomNormal}, rng);
            for (auto& c : ad.cores_h) c = random_mat(2, 2, rng);
            model.layers[0].adapter = ad;
        } else if (family == 2 || family == 3) {
            VanillaLoraAdapter ad;
            ad.b = random_mat(6, 2, rng);
            ad.a = random_mat(2, 6, rng);
            ad.a_frozen = family == 3;
            model.layers[0].adapter = ad;
        } else if (family == 4) {
            FedSbAdapter ad = init_fedsb(random_mat(6, 6, rng), 2);
            model.layers[0].adapter = ad;
        }
        Matrix x = random_mat(6, 4, rng);
        std::vector<int> y = {0, 1, 2, 1};
        ModelGrads grads;
        loss_and_grads(model, x, y, &grads);
        auto flat_g = flatten_grads(model, grads);
        auto params = collect_trainable(model);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double eps = 1e-6;
            auto probe = params;
            ToyModel mp = model;
            probe[i] = params[i] + eps;
            assign_trainable(mp, probe);
            const double lp = loss_and_grads(mp, x, y, nullptr);
            probe[i] = params[i] - eps;
            assign_trainable(mp, probe);
            const double lm = loss_and_grads(mp, x, y, nullptr);
            const double fd = (lp - lm) / (2 * eps);
            worst = std::max(worst, std::abs(flat_g[i] - fd) /
                                        std::max({std::abs(fd), std::abs(flat_g[i]), 1e-2}));
        }
    }
    return worst < 1e-5;
}

// Exact-mean aggregation for the strategies that promise it.
bool verify_exactness() {
    RngStream rng(42, 0);
    const std::size_t d = 8, r = 2, h = 3, n = 4;
    for (int rep = 0; rep < 10; ++rep) {
        {
            RavanAdapter global = init_ravan(d, d, r, h, {InitSchemeTag::GramSchmidt}, rng);
            std::vector<RavanPayload> payloads(n);
            Matrix mean(d, d);
            for (auto& p : payloads) {
                for (std::size_t i = 0; i < h; ++i) {
                    p.heads.push_back(i);
                    p.products.push_back(random_mat(r, r, rng));
                    mean += matmul(global.bases_b[i], matmul(p.products.back(),
                                                            global.bases_a[i]));
                }
            }
            mean *= 1.0 / n;
            aggregate_ravan(payloads, global);
            if (frobenius_norm(ravan_delta_w(global) - mean) > 1e-12) return false;
        }
        {
            VanillaLoraAdapter global;
            global.b = Matrix(d, r);
            global.a = random_mat(r, d, rng);
            global.a_frozen = true;
            std::vector<FactorPayload> payloads(n);
            Matrix mean(d, d);
            for (auto& p : payloads) {
                p.b = random_mat(d, r, rng);
                p.a = global.a;
                mean += matmul(p.b, p.a);
            }
            mean *= 1.0 / n;
            aggregate_ffa(payloads, global);
            if (frobenius_norm(vanilla_delta_w(global) - mean) > 1e-12) return false;
        }
        {
            FedSbAdapter global = init_fedsb(random_mat(d, d, rng), r);
            std::vector<CorePayload> payloads(n);
            Matrix mean(d, d);
            for (auto& p : payloads) {
                p.core = random_mat(r, r, rng);
                FedSbAdapter c = global;
                c.core = p.core;
                mean += fedsb_delta_w(c);
            }
            mean *= 1.0 / n;
            aggregate_fedsb(payloads, global);
            if (frobenius_norm(fedsb_delta_w(global) - mean) > 1e-12) return false;
        }
        {
            VanillaLoraAdapter global;
            global.b = Matrix(d, r);
            global.a = random_mat(r, d, rng);
            Matrix backbone(d, d);
            std::vector<FactorPayload> payloads(n);
            Matrix mean(d, d);
            for (auto& p : payloads) {
                p.b = random_mat(d, r, rng);
                p.a = random_mat(r, d, rng);
                mean += matmul(p.b, p.a);
            }
            mean *= 1.0 / n;
            aggregate_fedex(payloads, global, backbone);
            if (frobenius_norm(backbone + vanilla_delta_w(global) - mean) > 1e-12) return false;
        }
    }
    return true;
}

bool verify_fedit_witness() {
    // hand instance: B1 A1 = e1 e1^T, B2 A2 = e2 e2^T
    FactorPayload p1, p2;
    p1.b = Matrix(2, 1);
    p1.b(0, 0) = 1.0;
    p1.a = Matrix(1, 2);
    p1.a(0, 0) = 1.0;
    p2.b = Matrix(2, 1);
    p2.b(1, 0) = 1.0;
    p2.a = Matrix(1, 2);
    p2.a(0, 1) = 1.0;
    if (std::abs(aggregation_gap({p1, p2}) - 0.5) > 1e-12) return false;

    RngStream rng(43, 0);
    std::vector<FactorPayload> payloads(3);
    for (auto& p : payloads) {
        p.b = random_mat(6, 2, rng);
        p.a = random_mat(2, 6, rng);
    }
    return aggregation_gap(payloads) > 1e-9;
}

bool verify_orthogonality() {
    RngStream rng(44, 0);
    RavanAdapter ad = init_ravan(16, 16, 2, 4, {InitSchemeTag::GramSchmidt}, rng);
    Matrix qb(16, 8), qa(8, 16);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t row = 0; row < 16; ++row)
            for (std::size_t col = 0; col < 2; ++col) {
                qb(row, i * 2 + col) = ad.bases_b[i](row, col);
                qa(i * 2 + col, row) = ad.bases_a[i](col, row);
            }
    const Matrix gb = matmul(transpose(qb), qb) - Matrix::identity(8);
    const Matrix ga = matmul(qa, transpose(qa)) - Matrix::identity(8);
    return max_abs(gb) < 1e-10 && max_abs(ga) < 1e-10;
}

bool verify_rank_bounds() {
    RngStream rng(45, 0);
    for (int rep = 0; rep < 5; ++rep) {
        Matrix m = random_mat(8, 8, rng);
        auto sv = svd(m).singular_values;
        for (auto method : {EffectiveRankMethod::EntropyExp, EffectiveRankMethod::ThresholdFraction}) {
            const double er = effective_rank(sv, method);
            if (er < 1.0 || er > 8.0) return false;
        }
        Matrix q1 = gram_schmidt_columns(random_mat(8, 8, rng));
        Matrix q2 = gram_schmidt_columns(random_mat(8, 8, rng));
        auto sv_rot = svd(matmul(q1, matmul(m, transpose(q2)))).singular_values;
        for (std::size_t i = 0; i < sv.size(); ++i)
            if (std::abs(sv[i] - sv_rot[i]) > 1e-9) return false;
    }
    return true;
}

ExperimentConfig verify_config() {
    ExperimentConfig cfg;
    cfg.strategy.tag = StrategyTag::Ravan;
    cfg.strategy.rank = 2;
    cfg.strategy.heads = 4;
    cfg.fl.n_clients = 6;
    cfg.fl.clients_per_round = 3;
    cfg.fl.train.local_steps = 5;
    cfg.fl.train.batch_size = 8;
    cfg.fl.train.lr = 0.02;
    cfg.fl.min_shard_size = 1;
    cfg.fl.heterogeneous = true;
    cfg.fl.budget_dist = BudgetDist::SkewedRight;
    cfg.d = 8;
    cfg.n_classes = 3;
    cfg.n_per_class_train = 15;
    cfg.n_per_class_test = 5;
    cfg.class_sep = 6.0;
    cfg.data_seed = 2;
    cfg.rounds = 3;
    return cfg;
}

std::vector<double> run_fingerprint(const ExperimentConfig& cfg, const Dataset& train,
                                    const Dataset& test,
                                    const std::vector<std::size_t>* order) {
    FlConfig fl = cfg.fl;
    fl.seed = 7;
    FlRun run = make_fl_run(cfg.strategy, fl, train, test);
    for (std::size_t t = 0; t < cfg.rounds; ++t) run_round(run, order);
    std::vector<double> fp = collect_trainable(run.global_model);
    const auto& w = run.global_model.layers[0].w.data();
    fp.insert(fp.end(), w.begin(), w.end());
    return fp;
}

bool verify_order_independence() {
    ExperimentConfig cfg = verify_config();
    auto [train, test] = make_task(cfg);
    const std::vector<std::vector<std::size_t>> perms = {{0, 1, 2}, {2, 0, 1}, {1, 2, 0}};
    const auto base = run_fingerprint(cfg, train, test, &perms[0]);
    for (std::size_t i = 1; i < perms.size(); ++i)
        if (run_fingerprint(cfg, train, test, &perms[i]) != base) return false;
    return true;
}

bool verify_determinism() {
    ExperimentConfig cfg = verify_config();
    auto [train, test] = make_task(cfg);
    auto records = [&] {
        FlConfig fl = cfg.fl;
        fl.seed = 11;
        FlRun run = make_fl_run(cfg.strategy, fl, train, test);
        std::vector<RoundRecord> recs;
        for (std::size_t t = 0; t < cfg.rounds; ++t) recs.push_back(run_round(run));
        const fs::path path = fs::temp_directory_path() / "peftsim_verify_records.csv";
        write_report_csv(recs, "ravan", 11, path.string());
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        fs::remove(path);
        return ss.str();
    };
    const std::string first = records();
    return !first.empty() && records() == first;
}

bool verify_scale_reset() {
    ExperimentConfig cfg = verify_config();
    cfg.rounds = 5;
    auto [train, test] = make_task(cfg);
    FlConfig fl = cfg.fl;
    fl.seed = 13;
    FlRun run = make_fl_run(cfg.strategy, fl, train, test);
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        run_round(run);
        const auto& ad = std::get<RavanAdapter>(run.global_model.layers[0].adapter);
        for (double s : ad.scales_s)
            if (s != 1.0) return false;
    }
    return true;
}

}  // namespace

int cmd_verify(std::ostream& out, std::ostream& err) {
    const std::vector<std::pair<const char*, bool (*)()>> suite = {
        {"gradient_check", verify_gradients},
        {"aggregation_exactness", verify_exactness},
        {"fedit_inexactness_witness", verify_fedit_witness},
        {"basis_orthogonality", verify_orthogonality},
        {"rank_bounds_and_invariance", verify_rank_bounds},
        {"order_independence", verify_order_independence},
        {"determinism", verify_determinism},
        {"scale_reset", verify_scale_reset},
    };
    bool all_ok = true;
    for (const auto& [name, fn] : suite) {
        bool ok = false;
        try {
            ok = fn();
        } catch (const std::exception& e) {
            err << name << ": " << e.what() << '\n';
        }
        out << name << ' ' << (ok ? "pass" : "FAIL") << '\n';
        all_ok = all_ok && ok;
    }
    if (!all_ok) {
        err << "invariant suite failed\n";
        return 1;
    }
    out << "all invariants pass\n";
    return 0;
}

}  // namespace peftsim
