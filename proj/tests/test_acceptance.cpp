// Acceptance gate: one line per criterion, nonzero exit iff any fails.
// Tolerances and experiment settings are pinned here on purpose.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "peftsim/analysis.hpp"
#include "peftsim/config.hpp"
#include "peftsim/linalg.hpp"
#include "peftsim/runner.hpp"

using namespace peftsim;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::pair<Dataset, Dataset> task(std::size_t d, std::size_t n_classes, std::size_t n_train,
                                 std::size_t n_test, double sep, std::uint64_t data_seed) {
    ExperimentConfig cfg;
    cfg.d = d;
    cfg.n_classes = n_classes;
    cfg.n_per_class_train = n_train;
    cfg.n_per_class_test = n_test;
    cfg.class_sep = sep;
    cfg.data_seed = data_seed;
    return make_task(cfg);
}

Matrix random_mat(std::size_t r, std::size_t c, RngStream& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

struct Stats {
    double mean = 0.0;
    double sd = 0.0;
};

Stats stats(const std::vector<double>& xs) {
    Stats s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

// 1. Exact aggregation: after every round the global effective delta W is
// the mean of the client effective delta Ws, within 1e-12 Frobenius.
bool criterion_exact_aggregation(std::string& detail) {
    auto [train, test] = task(32, 4, 15, 5, 6.0, 9);
    double worst = 0.0;
    for (StrategyTag tag :
         {StrategyTag::Ravan, StrategyTag::FFALoRA, StrategyTag::FedSB, StrategyTag::FedExLoRA}) {
        AggregationStrategy strat;
        strat.tag = tag;
        strat.rank = 4;
        strat.heads = 4;
        strat.init.tag = InitSchemeTag::GramSchmidt;
        FlConfig cfg;
        cfg.n_clients = 6;
        cfg.clients_per_round = 3;
        cfg.train.local_steps = 3;
        cfg.train.batch_size = 8;
        cfg.train.lr = 0.02;
        cfg.partition = PartitionMode::IID;
        cfg.seed = 1;
        FlRun run = make_fl_run(strat, cfg, train, test);
        RngStream pick(77, 0xACC);
        for (std::size_t round = 0; round < 50; ++round) {
            const auto sel = sample_clients(cfg.n_clients, 3, pick);
            std::vector<ClientUpdate> ups;
            for (std::size_t id : sel)
                ups.push_back(
                    local_train(run.clients[id], run.global_model, strat, run.train, cfg.train,
                                round));
            Layer& layer = run.global_model.layers[0];
            Matrix mean(32, 32);
            if (tag == StrategyTag::Ravan) {
                auto& ad = std::get<RavanAdapter>(layer.adapter);
                std::vector<RavanPayload> payloads;
                for (auto& u : ups) {
                    const auto& p = std::get<RavanPayload>(u.payload);
                    for (std::size_t k = 0; k < p.heads.size(); ++k)
                        mean += matmul(ad.bases_b[p.heads[k]],
                                       matmul(p.products[k], ad.bases_a[p.heads[k]]));
                    payloads.push_back(p);
                }
                mean *= 1.0 / 3.0;
                aggregate_ravan(payloads, ad);
            } else if (tag == StrategyTag::FFALoRA) {
                auto& ad = std::get<VanillaLoraAdapter>(layer.adapter);
                std::vector<FactorPayload> payloads;
                for (auto& u : ups) {
                    const auto& p = std::get<FactorPayload>(u.payload);
                    mean += matmul(p.b, p.a);
                    payloads.push_back(p);
                }
                mean *= 1.0 / 3.0;
                aggregate_ffa(payloads, ad);
            } else if (tag == StrategyTag::FedSB) {
                auto& ad = std::get<FedSbAdapter>(layer.adapter);
                std::vector<CorePayload> payloads;
                for (auto& u : ups) {
                    const auto& p = std::get<CorePayload>(u.payload);
                    FedSbAdapter probe = ad;
                    probe.core = p.core;
                    mean += fedsb_delta_w(probe);
                    payloads.push_back(p);
                }
                mean *= 1.0 / 3.0;
                aggregate_fedsb(payloads, ad);
            } else {
                auto& ad = std::get<VanillaLoraAdapter>(layer.adapter);
                const Matrix backbone_res = layer.w - run.initial_w[0];
                std::vector<FactorPayload> payloads;
                for (auto& u : ups) {
                    const auto& p = std::get<FactorPayload>(u.payload);
                    mean += backbone_res + matmul(p.b, p.a);
                    payloads.push_back(p);
                }
                mean *= 1.0 / 3.0;
                aggregate_fedex(payloads, ad, layer.w);
            }
            const Matrix global_delta = effective_weight(layer) - run.initial_w[0];
            worst = std::max(worst, frobenius_norm(global_delta - mean));
        }
    }
    detail = "max deviation " + std::to_string(worst);
    return worst <= 1e-12;
}

// 2. FedIT factor-wise averaging is inexact: gap > 1e-9 in >= 49 of 50
// non-IID rounds, and the two-client hand instance gives exactly 0.5.
bool criterion_inexactness(std::string& detail) {
    FactorPayload p1, p2;
    p1.b = Matrix(2, 1);
    p1.b(0, 0) = 1.0;
    p1.a = Matrix(1, 2);
    p1.a(0, 0) = 1.0;
    p2.b = Matrix(2, 1);
    p2.b(1, 0) = 1.0;
    p2.a = Matrix(1, 2);
    p2.a(0, 1) = 1.0;
    if (std::abs(aggregation_gap({p1, p2}) - 0.5) > 1e-12) {
        detail = "hand instance gap off";
        return false;
    }

    auto [train, test] = task(16, 4, 40, 15, 8.0, 4);
    AggregationStrategy strat;
    strat.tag = StrategyTag::FedIT;
    strat.rank = 4;
    FlConfig cfg;
    cfg.n_clients = 20;
    cfg.clients_per_round = 3;
    cfg.train.local_steps = 10;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.02;
    cfg.alpha = 0.3;
    cfg.min_shard_size = 2;
    cfg.seed = 0;
    FlRun run = make_fl_run(strat, cfg, train, test);
    int nonzero = 0;
    for (std::size_t t = 0; t < 50; ++t)
        if (run_round(run).agg_gap > 1e-9) ++nonzero;
    detail = std::to_string(nonzero) + "/50 rounds with gap > 1e-9";
    return nonzero >= 49;
}

// 3. Analytic gradients vs central finite differences, 100 random
// instances per adapter family, max relative error < 1e-5.
bool criterion_gradients(std::string& detail) {
    RngStream rng(51, 0);
    double worst = 0.0;
    for (int family = 0; family < 5; ++family) {
        for (int rep = 0; rep < 100; ++rep) {
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
            std::vector<int> y = {0, 1, 2, static_cast<int>(rng.uniform_index(3))};
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
    }
    detail = "max relative error " + std::to_string(worst);
    return worst < 1e-5;
}

// 4. Gram-Schmidt bases are orthonormal, generic cores realize rank h*r
// exactly at d=64, and rank-deficient constant bases stay at rank <= r.
bool criterion_rank(std::string& detail) {
    RngStream rng(52, 0);
    for (std::size_t h : {1u, 2u, 4u}) {
        RavanAdapter ad = init_ravan(64, 64, 4, h, {InitSchemeTag::GramSchmidt}, rng);
        Matrix qb(64, 4 * h), qa(4 * h, 64);
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t row = 0; row < 64; ++row)
                for (std::size_t col = 0; col < 4; ++col) {
                    qb(row, i * 4 + col) = ad.bases_b[i](row, col);
                    qa(i * 4 + col, row) = ad.bases_a[i](col, row);
                }
        if (max_abs(matmul(transpose(qb), qb) - Matrix::identity(4 * h)) >= 1e-10 ||
            max_abs(matmul(qa, transpose(qa)) - Matrix::identity(4 * h)) >= 1e-10) {
            detail = "orthonormality violated at h=" + std::to_string(h);
            return false;
        }
        for (auto& c : ad.cores_h) c = random_mat(4, 4, rng);
        const std::size_t rank = numerical_rank(svd(ravan_delta_w(ad)).singular_values);
        if (rank != 4 * h) {
            detail = "rank " + std::to_string(rank) + " != " + std::to_string(4 * h);
            return false;
        }
    }
    RavanAdapter flat = init_ravan(64, 64, 4, 4, {InitSchemeTag::Constant}, rng);
    for (auto& c : flat.cores_h) c = random_mat(4, 4, rng);
    const std::size_t rank = numerical_rank(svd(ravan_delta_w(flat)).singular_values);
    detail = "constant-init rank " + std::to_string(rank);
    return rank <= 4;
}

// 5. Update spectra broaden under federation: entropy-effective-rank
// ordering centralized < non-IID in 5/5 seeds and the full ordering
// centralized < IID < non-IID in >= 4/5.
bool criterion_spectra(std::string& detail) {
    auto [train, test] = task(16, 4, 125, 25, 2.5, 4);
    const double ceiling = centralized_ceiling(train, test, 300, 0.02, 4);
    SpectraOpts opts;
    opts.target_acc = 0.9 * ceiling;
    opts.fl.n_clients = 20;
    opts.fl.clients_per_round = 3;
    opts.fl.train.local_steps = 50;
    opts.fl.train.batch_size = 16;
    opts.fl.train.lr = 0.02;
    opts.fl.train.optimizer = Optimizer::Sgd;
    opts.fl.alpha = 0.3;
    opts.fl.min_shard_size = 2;
    int outer = 0, full = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto reports = spectra_experiment(train, test, opts, seed);
        const double c = reports[0].eff_rank_entropy;
        const double i = reports[1].eff_rank_entropy;
        const double n = reports[2].eff_rank_entropy;
        if (c < n) ++outer;
        if (c < i && i < n) ++full;
    }
    detail = "outer " + std::to_string(outer) + "/5, full " + std::to_string(full) + "/5";
    return outer == 5 && full >= 4;
}

// 6. At matched trainable budget N=64 on a non-IID 8-class task, the
// multi-head strategy's mean final accuracy beats both vanilla baselines.
bool criterion_heterogeneity(std::string& detail) {
    auto [train, test] = task(16, 8, 100, 50, 4.0, 4);
    FlConfig cfg;
    cfg.n_clients = 20;
    cfg.clients_per_round = 3;
    cfg.train.local_steps = 30;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.02;
    cfg.alpha = 0.3;
    cfg.min_shard_size = 2;

    auto run_strategy = [&](const AggregationStrategy& s) {
        std::vector<double> accs;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            FlConfig c = cfg;
            c.seed = seed;
            FlRun run = make_fl_run(s, c, train, test);
            RoundRecord last;
            for (std::size_t t = 0; t < 15; ++t) last = run_round(run);
            accs.push_back(last.eval_acc);
        }
        return stats(accs);
    };

    AggregationStrategy ravan;  // N = h (r^2) = 64
    ravan.tag = StrategyTag::Ravan;
    ravan.heads = 4;
    ravan.rank = 4;
    ravan.init.tag = InitSchemeTag::GramSchmidt;
    AggregationStrategy fedit;  // N = 2 d r = 64
    fedit.tag = StrategyTag::FedIT;
    fedit.rank = 2;
    AggregationStrategy ffa;  // N = d r = 64
    ffa.tag = StrategyTag::FFALoRA;
    ffa.rank = 4;

    const Stats sr = run_strategy(ravan);
    const Stats si = run_strategy(fedit);
    const Stats sf = run_strategy(ffa);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "ravan %.4f+-%.4f fedit %.4f+-%.4f ffa %.4f+-%.4f", sr.mean, sr.sd, si.mean,
                  si.sd, sf.mean, sf.sd);
    detail = buf;
    return sr.mean >= si.mean && sr.mean >= sf.mean;
}

// 7. Head saturation: once sqrt(N h) >= d, adding heads stops paying;
// the sweep flags saturation via the exact bound.
bool criterion_saturation(std::string& detail) {
    const std::size_t n_budget = 576, d = 64;  // sqrt(4N)=48 < 64 < sqrt(16N)=96
    auto [train, test] = task(d, 8, 40, 15, 4.0, 4);
    AggregationStrategy strat;
    strat.init.tag = InitSchemeTag::RandomNormal;
    FlConfig cfg;
    cfg.n_clients = 10;
    cfg.clients_per_round = 3;
    cfg.partition = PartitionMode::IID;
    cfg.train.local_steps = 20;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.02;

    const std::vector<std::size_t> hs = {1, 2, 4, 8, 16};
    std::vector<std::vector<double>> accs(hs.size());
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        cfg.seed = seed;
        auto rows = head_sweep(n_budget, hs, train, test, strat, cfg, 8);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const bool expect_sat =
                std::sqrt(static_cast<double>(n_budget) * hs[i]) >= static_cast<double>(d);
            if (rows[i].saturated != expect_sat || rows[i].skipped) {
                detail = "saturation flag wrong at h=" + std::to_string(hs[i]);
                return false;
            }
            accs[i].push_back(rows[i].final_acc);
        }
    }
    double best_unsat_mean = 0.0, best_unsat_sd = 0.0, first_sat_mean = 0.0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const Stats s = stats(accs[i]);
        if (std::sqrt(576.0 * hs[i]) < 64.0 && s.mean > best_unsat_mean) {
            best_unsat_mean = s.mean;
            best_unsat_sd = s.sd;
        }
        if (hs[i] == 8) first_sat_mean = s.mean;  // first saturated head count
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "saturated %.4f vs best unsaturated %.4f+-%.4f",
                  first_sat_mean, best_unsat_mean, best_unsat_sd);
    detail = buf;
    return first_sat_mean <= best_unsat_mean + best_unsat_sd;
}

// 8. Budget semantics under SkewedRight: quarter-budget clients train
// exactly one head, untouched heads stay bit-identical, and upload bytes
// scale exactly with the number of trained heads.
bool criterion_budgets(std::string& detail) {
    auto [train, test] = task(16, 4, 40, 15, 8.0, 4);
    AggregationStrategy strat;
    strat.tag = StrategyTag::Ravan;
    strat.rank = 4;
    strat.heads = 4;
    strat.init.tag = InitSchemeTag::GramSchmidt;
    FlConfig cfg;
    cfg.n_clients = 20;
    cfg.clients_per_round = 3;
    cfg.train.local_steps = 5;
    cfg.train.batch_size = 8;
    cfg.train.lr = 0.02;
    cfg.alpha = 0.3;
    cfg.min_shard_size = 2;
    cfg.heterogeneous = true;
    cfg.budget_dist = BudgetDist::SkewedRight;
    cfg.seed = 2;
    FlRun run = make_fl_run(strat, cfg, train, test);

    const std::uint64_t per_head = 16 + 8ull * 4 * 4;  // header + r^2 doubles
    std::size_t quarter_clients = 0;
    for (const auto& client : run.clients) {
        ClientUpdate up = local_train(client, run.global_model, strat, run.train, cfg.train, 0);
        const auto& p = std::get<RavanPayload>(up.payload);
        const auto expected = static_cast<std::size_t>(client.budget_fraction * 4.0);
        if (p.heads.size() != std::max<std::size_t>(1, expected)) {
            detail = "head count mismatch at budget " + std::to_string(client.budget_fraction);
            return false;
        }
        if (up.upload_bytes != per_head * p.heads.size()) {
            detail = "upload bytes do not scale with trained heads";
            return false;
        }
        if (client.budget_fraction == 0.25) {
            ++quarter_clients;
            if (p.heads.size() != 1) {
                detail = "quarter-budget client trained more than one head";
                return false;
            }
        }
    }
    if (quarter_clients == 0) {
        detail = "no quarter-budget clients drawn";
        return false;
    }
    for (std::size_t t = 0; t < 10; ++t) {
        const auto before = std::get<RavanAdapter>(run.global_model.layers[0].adapter).cores_h;
        const RoundRecord rec = run_round(run);
        const auto& after = std::get<RavanAdapter>(run.global_model.layers[0].adapter);
        for (std::size_t i = 0; i < 4; ++i)
            if (rec.head_counts[i] == 0 && !(after.cores_h[i] == before[i])) {
                detail = "frozen head changed in round " + std::to_string(t);
                return false;
            }
    }
    detail = std::to_string(quarter_clients) + " quarter-budget clients checked";
    return true;
}

// 9. Scaling factors broadcast as exactly 1 at every round start over 100
// rounds; with trainable_scaling off they stay 1 through training too.
bool criterion_scale_reset(std::string& detail) {
    auto [train, test] = task(8, 3, 15, 5, 6.0, 2);
    AggregationStrategy strat;
    strat.tag = StrategyTag::Ravan;
    strat.rank = 2;
    strat.heads = 4;
    FlConfig cfg;
    cfg.n_clients = 6;
    cfg.clients_per_round = 3;
    cfg.train.local_steps = 2;
    cfg.train.batch_size = 8;
    cfg.train.lr = 0.05;
    cfg.partition = PartitionMode::IID;
    cfg.seed = 5;
    FlRun run = make_fl_run(strat, cfg, train, test);
    for (std::size_t t = 0; t < 100; ++t) {
        run_round(run);
        for (double s : std::get<RavanAdapter>(run.global_model.layers[0].adapter).scales_s)
            if (s != 1.0) {
                detail = "broadcast scale != 1 after round " + std::to_string(t);
                return false;
            }
    }

    RngStream rng(53, 0);
    ToyModel model = make_toy_model(8, 3, rng);
    RavanAdapter ad = init_ravan(8, 8, 2, 2, {InitSchemeTag::RandomNormal}, rng);
    ad.trainable_scaling = false;
    for (auto& c : ad.cores_h) c = random_mat(2, 2, rng);
    model.layers[0].adapter = ad;
    Matrix x = random_mat(8, 6, rng);
    std::vector<int> y = {0, 1, 2, 0, 1, 2};
    AdamState adam;
    for (int s = 0; s < 20; ++s) {
        ModelGrads grads;
        loss_and_grads(model, x, y, &grads);
        auto params = collect_trainable(model);
        adam.step(params, flatten_grads(model, grads));
        assign_trainable(model, params);
    }
    for (double s : std::get<RavanAdapter>(model.layers[0].adapter).scales_s)
        if (s != 1.0) {
            detail = "frozen scaling factor moved during training";
            return false;
        }
    detail = "100 rounds + frozen-scaling training";
    return true;
}

// 10. Byte-identical reruns and bit-exact invariance to client execution
// order over 20 random permutations.
bool criterion_determinism(std::string& detail) {
    auto [train, test] = task(8, 3, 15, 5, 6.0, 2);
    AggregationStrategy strat;
    strat.tag = StrategyTag::Ravan;
    strat.rank = 2;
    strat.heads = 4;
    FlConfig cfg;
    cfg.n_clients = 6;
    cfg.clients_per_round = 3;
    cfg.train.local_steps = 5;
    cfg.train.batch_size = 8;
    cfg.train.lr = 0.02;
    cfg.alpha = 0.3;
    cfg.heterogeneous = true;
    cfg.seed = 7;

    auto csv_bytes = [&] {
        FlRun run = make_fl_run(strat, cfg, train, test);
        std::ostringstream os;
        for (std::size_t t = 0; t < 3; ++t) {
            const RoundRecord rec = run_round(run);
            os.precision(17);
            os << rec.train_loss << ',' << rec.eval_loss << ',' << rec.eval_acc << ','
               << rec.upload_bytes << '\n';
        }
        for (double v : collect_trainable(run.global_model)) os << v << '\n';
        return os.str();
    };
    if (csv_bytes() != csv_bytes()) {
        detail = "identical configs diverged";
        return false;
    }

    auto fingerprint = [&](const std::vector<std::size_t>& order) {
        FlRun run = make_fl_run(strat, cfg, train, test);
        for (std::size_t t = 0; t < 3; ++t) run_round(run, &order);
        return collect_trainable(run.global_model);
    };
    const std::vector<std::size_t> identity = {0, 1, 2};
    const auto base = fingerprint(identity);
    RngStream shuffler(54, 0);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::size_t> perm = identity;
        for (std::size_t i = 0; i < perm.size(); ++i)
            std::swap(perm[i], perm[i + shuffler.uniform_index(perm.size() - i)]);
        if (fingerprint(perm) != base) {
            detail = "execution order changed the result (rep " + std::to_string(rep) + ")";
            return false;
        }
    }
    detail = "2 reruns + 20 permutations bit-exact";
    return true;
}

// 11. The built-in verify suite passes end to end in under 60 s.
bool criterion_verify(std::string& detail) {
    const auto start = Clock::now();
    std::ostringstream out, err;
    const int rc = cmd_verify(out, err);
    const double elapsed = seconds_since(start);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "exit %d in %.2f s", rc, elapsed);
    detail = buf;
    return rc == 0 && elapsed < 60.0;
}

struct Criterion {
    const char* name;
    bool (*fn)(std::string&);
    double time_limit_s;  // 0 = untimed
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"exact_aggregation", criterion_exact_aggregation, 10.0},
        {"fedit_inexactness", criterion_inexactness, 0.0},
        {"gradient_correctness", criterion_gradients, 30.0},
        {"orthogonality_and_rank", criterion_rank, 0.0},
        {"spectra_direction", criterion_spectra, 300.0},
        {"heterogeneity_ordering", criterion_heterogeneity, 600.0},
        {"head_saturation", criterion_saturation, 0.0},
        {"budget_semantics", criterion_budgets, 0.0},
        {"scale_reset", criterion_scale_reset, 0.0},
        {"determinism_order_independence", criterion_determinism, 0.0},
        {"verify_under_budget", criterion_verify, 0.0},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = Clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = criteria[i].fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double elapsed = seconds_since(start);
        if (ok && criteria[i].time_limit_s > 0.0 && elapsed > criteria[i].time_limit_s) {
            ok = false;
            detail += " [over time budget]";
        }
        std::printf("criterion %2zu %-32s %s (%.2f s%s%s)\n", i + 1, criteria[i].name,
                    ok ? "PASS" : "FAIL", elapsed, detail.empty() ? "" : "; ",
                    detail.c_str());
        if (!ok) ++failures;
    }
    if (failures) {
        std::printf("%d of %zu criteria failed\n", failures, criteria.size());
        return 1;
    }
    std::printf("all %zu criteria pass\n", criteria.size());
    return 0;
}
