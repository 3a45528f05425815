#include "peftsim/flcore.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "peftsim/linalg.hpp"

namespace peftsim {
namespace {

constexpr std::uint64_t kServerSampleStream = 0x5A11;
constexpr std::uint64_t kModelStream = 0x30DE1;
constexpr std::uint64_t kBudgetStream = 0xB0D6;
constexpr std::uint64_t kClientStreamBase = 0xC11E00;
constexpr std::uint64_t kBootstrapStream = 0xB007;

// wire format: per-head u64 index + u64 rank + r*r f64
std::uint64_t head_record_bytes(std::size_t r) { return 16 + 8 * r * r; }

RavanAdapter& ravan_layer(ToyModel& model) {
    for (Layer& layer : model.layers)
        if (auto* ad = std::get_if<RavanAdapter>(&layer.adapter)) return *ad;
    throw ShapeError("no multi-head adapter in model");
}

const RavanAdapter& ravan_layer(const ToyModel& model) {
    return ravan_layer(const_cast<ToyModel&>(model));
}

std::vector<std::size_t> draw_batch(const std::vector<std::size_t>& shard, std::size_t batch_size,
                                    RngStream& stream) {
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) idx[i] = shard[stream.uniform_index(shard.size())];
    return idx;
}

double shard_loss(const ToyModel& model, const Dataset& ds, const std::vector<std::size_t>& shard) {
    return loss_and_grads(model, gather_features(ds, shard), gather_labels(ds, shard), nullptr);
}

Matrix mean_of(const std::vector<Matrix>& ms) {
    Matrix acc = ms.front();
    for (std::size_t i = 1; i < ms.size(); ++i) acc += ms[i];
    acc *= 1.0 / static_cast<double>(ms.size());
    return acc;
}

Matrix pad_factors(const Matrix& m, std::size_t rows, std::size_t cols) {
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
    return out;
}

// Effective delta of the adapted layer against the recorded backbone.
Matrix adapted_delta(const FlRun& run) {
    return effective_weight(run.global_model.layers[0]) - run.initial_w[0];
}

std::size_t client_rank(const AggregationStrategy& strategy, const ClientState& client) {
    if (strategy.tag == StrategyTag::HetLoRA || strategy.tag == StrategyTag::FlexLoRA)
        return std::max<std::size_t>(
            1, static_cast<std::size_t>(client.budget_fraction * static_cast<double>(strategy.rank)));
    return strategy.rank;
}

}  // namespace

std::size_t k_heads_for(double budget_fraction, std::size_t h) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(budget_fraction * static_cast<double>(h)));
}

std::vector<std::size_t> sample_clients(std::size_t n_total, std::size_t m, RngStream& stream) {
    if (m > n_total) throw ShapeError("sample_clients: m exceeds population");
    std::vector<std::size_t> idx(n_total);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < m; ++i)
        std::swap(idx[i], idx[i + stream.uniform_index(n_total - i)]);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::vector<double> sample_budgets(std::size_t n_clients, BudgetDist dist, RngStream& stream) {
    static const double kTiers[4] = {0.25, 0.5, 0.75, 1.0};
    double props[4];
    switch (dist) {
        case BudgetDist::Uniform:
            props[0] = props[1] = props[2] = props[3] = 0.25;
            break;
        case BudgetDist::BellShaped:
            props[0] = 0.15, props[1] = 0.35, props[2] = 0.35, props[3] = 0.15;
            break;
        case BudgetDist::SkewedRight:
            props[0] = 0.55, props[1] = 0.25, props[2] = 0.15, props[3] = 0.05;
            break;
    }
    // largest-remainder rounding of tier counts
    std::size_t counts[4];
    double remainders[4];
    std::size_t assigned = 0;
    for (int t = 0; t < 4; ++t) {
        const double exact = props[t] * static_cast<double>(n_clients);
        counts[t] = static_cast<std::size_t>(exact);
        remainders[t] = exact - static_cast<double>(counts[t]);
        assigned += counts[t];
    }
    while (assigned < n_clients) {
        int best = 0;
        for (int t = 1; t < 4; ++t)
            if (remainders[t] > remainders[best]) best = t;
        counts[best]++;
        remainders[best] = -1.0;
        assigned++;
    }
    std::vector<double> budgets;
    budgets.reserve(n_clients);
    for (int t = 0; t < 4; ++t) budgets.insert(budgets.end(), counts[t], kTiers[t]);
    for (std::size_t i = budgets.size(); i > 1; --i)
        std::swap(budgets[i - 1], budgets[stream.uniform_index(i)]);
    return budgets;
}

std::vector<std::size_t> select_heads(const ToyModel& model, std::size_t k, ScoreFnTag fn,
                                      const Matrix& x, const std::vector<int>& y,
                                      RngStream& stream) {
    const RavanAdapter& adapter = ravan_layer(model);
    const std::size_t h = adapter.h;
    if (k > h) throw ShapeError("select_heads: k exceeds head count");

    std::vector<double> scores(h, 0.0);
    switch (fn) {
        case ScoreFnTag::Random:
            for (double& s : scores) s = stream.uniform();
            break;
        case ScoreFnTag::WeightBased:
            for (std::size_t i = 0; i < h; ++i)
                scores[i] = std::abs(adapter.scales_s[i]) * frobenius_norm(adapter.cores_h[i]);
            break;
        case ScoreFnTag::GradientBased: {
            if (x.cols() == 0) throw ShapeError("select_heads: empty minibatch");
            // reparameterize each head as (1, s_i H_i): same delta W, and the
            // core gradient becomes the gradient in the product s_i H_i
            ToyModel probe = model;
            RavanAdapter& pa = ravan_layer(probe);
            for (std::size_t i = 0; i < h; ++i) {
                pa.cores_h[i] *= pa.scales_s[i];
                pa.scales_s[i] = 1.0;
            }
            pa.active_mask.assign(h, true);
            ModelGrads grads;
            loss_and_grads(probe, x, y, &grads);
            for (auto& slot : grads.adapter_grads)
                if (auto* ag = std::get_if<AdapterGradients>(&slot))
                    for (std::size_t i = 0; i < h; ++i)
                        scores[i] = frobenius_norm(ag->grad_cores[i]);
            break;
        }
    }

    std::vector<std::size_t> order(h);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

ClientUpdate local_train(const ClientState& client, ToyModel model,
                         const AggregationStrategy& strategy, const Dataset& train,
                         const TrainOpts& opts, std::size_t round_idx) {
    if (client.shard.empty()) throw ShapeError("client " + std::to_string(client.id) + ": empty shard");
    RngStream stream = client.rng.substream(round_idx);

    ClientUpdate update;
    update.client_id = client.id;

    try {
        if (strategy.tag == StrategyTag::Ravan) {
            RavanAdapter& adapter = ravan_layer(model);
            adapter.scales_s.assign(adapter.h, 1.0);
            adapter.trainable_scaling = strategy.trainable_scaling;
            const std::size_t k = k_heads_for(client.budget_fraction, adapter.h);
            if (k >= adapter.h) {
                adapter.active_mask.assign(adapter.h, true);
            } else {
                auto score_batch = draw_batch(client.shard, opts.batch_size, stream);
                const auto selected =
                    select_heads(model, k, strategy.score_fn, gather_features(train, score_batch),
                                 gather_labels(train, score_batch), stream);
                adapter.active_mask.assign(adapter.h, false);
                for (std::size_t i : selected) adapter.active_mask[i] = true;
            }
        }

        AdamState adam;
        adam.learning_rate = opts.lr;
        adam.beta1 = opts.beta1;
        adam.beta2 = opts.beta2;
        const ToyModel broadcast = model;
        for (std::size_t s = 0; s < opts.local_steps; ++s) {
            const auto batch = draw_batch(client.shard, opts.batch_size, stream);
            Matrix x = gather_features(train, batch);
            std::vector<int> y = gather_labels(train, batch);
            ModelGrads grads;
            loss_and_grads(model, x, y, &grads);
            auto params = collect_trainable(model);
            const auto flat = flatten_grads(model, grads);
            if (opts.optimizer == Optimizer::Adam) {
                adam.step(params, flat);
            } else {
                for (std::size_t i = 0; i < params.size(); ++i) params[i] -= opts.lr * flat[i];
            }
            assign_trainable(model, params);
        }
        update.train_loss = shard_loss(model, train, client.shard);

        switch (strategy.tag) {
            case StrategyTag::Ravan: {
                const RavanAdapter& adapter = ravan_layer(model);
                RavanPayload payload;
                for (std::size_t i = 0; i < adapter.h; ++i) {
                    if (!adapter.active_mask[i]) continue;
                    payload.heads.push_back(i);
                    Matrix product = adapter.cores_h[i];
                    product *= adapter.scales_s[i];
                    payload.products.push_back(std::move(product));
                }
                update.upload_bytes =
                    static_cast<std::uint64_t>(payload.heads.size()) * head_record_bytes(adapter.r);
                update.payload = std::move(payload);
                break;
            }
            case StrategyTag::FedIT:
            case StrategyTag::FedExLoRA:
            case StrategyTag::HetLoRA:
            case StrategyTag::FlexLoRA: {
                const auto& ad = std::get<VanillaLoraAdapter>(model.layers[0].adapter);
                update.upload_bytes = 8 * (ad.b.rows() * ad.b.cols() + ad.a.rows() * ad.a.cols());
                update.payload = FactorPayload{ad.b, ad.a};
                break;
            }
            case StrategyTag::FFALoRA: {
                const auto& ad = std::get<VanillaLoraAdapter>(model.layers[0].adapter);
                update.upload_bytes = 8 * ad.b.rows() * ad.b.cols();
                update.payload = FactorPayload{ad.b, ad.a};
                break;
            }
            case StrategyTag::FedSB: {
                const auto& ad = std::get<FedSbAdapter>(model.layers[0].adapter);
                update.upload_bytes = 8 * ad.core.rows() * ad.core.cols();
                update.payload = CorePayload{ad.core};
                break;
            }
            case StrategyTag::FullFT: {
                FullFtPayload payload;
                for (std::size_t l = 0; l < model.layers.size(); ++l) {
                    payload.w_deltas.push_back(model.layers[l].w - broadcast.layers[l].w);
                    std::vector<double> db(model.layers[l].bias.size());
                    for (std::size_t i = 0; i < db.size(); ++i)
                        db[i] = model.layers[l].bias[i] - broadcast.layers[l].bias[i];
                    update.upload_bytes +=
                        8 * (payload.w_deltas.back().rows() * payload.w_deltas.back().cols() +
                             db.size());
                    payload.bias_deltas.push_back(std::move(db));
                }
                update.payload = std::move(payload);
                break;
            }
        }
    } catch (const std::exception& e) {
        throw NumericError("client " + std::to_string(client.id) + ": " + e.what());
    }
    return update;
}

std::vector<std::size_t> aggregate_ravan(const std::vector<RavanPayload>& payloads,
                                         RavanAdapter& global) {
    std::vector<std::size_t> counts(global.h, 0);
    std::vector<Matrix> sums(global.h, Matrix(global.r, global.r));
    for (std::size_t c = 0; c < payloads.size(); ++c) {
        const auto& p = payloads[c];
        for (std::size_t j = 0; j < p.heads.size(); ++j) {
            const std::size_t i = p.heads[j];
            if (i >= global.h || p.products[j].rows() != global.r ||
                p.products[j].cols() != global.r)
                throw ShapeError("aggregate_ravan: bad payload from client index " +
                                 std::to_string(c) + " head " + std::to_string(i));
            sums[i] += p.products[j];
            counts[i]++;
        }
    }
    for (std::size_t i = 0; i < global.h; ++i) {
        if (counts[i] == 0) continue;  // nobody trained it: keep the old core
        sums[i] *= 1.0 / static_cast<double>(counts[i]);
        global.cores_h[i] = std::move(sums[i]);
    }
    global.scales_s.assign(global.h, 1.0);
    return counts;
}

void aggregate_fedit(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global) {
    std::vector<Matrix> bs, as;
    for (const auto& p : payloads) bs.push_back(p.b), as.push_back(p.a);
    global.b = mean_of(bs);
    global.a = mean_of(as);
}

void aggregate_fedex(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global,
                     Matrix& backbone_w) {
    aggregate_fedit(payloads, global);
    std::vector<Matrix> products;
    for (const auto& p : payloads) products.push_back(matmul(p.b, p.a));
    backbone_w += mean_of(products) - matmul(global.b, global.a);
}

void aggregate_ffa(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global) {
    std::vector<Matrix> bs;
    for (const auto& p : payloads) bs.push_back(p.b);
    global.b = mean_of(bs);
}

void aggregate_fedsb(const std::vector<CorePayload>& payloads, FedSbAdapter& global) {
    std::vector<Matrix> cores;
    for (const auto& p : payloads) cores.push_back(p.core);
    global.core = mean_of(cores);
}

void aggregate_hetlora(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global) {
    const std::size_t r_max = global.b.cols();
    std::vector<double> weights;
    double total = 0.0;
    for (const auto& p : payloads) {
        if (p.b.cols() > r_max) throw ShapeError("aggregate_hetlora: client rank above maximum");
        weights.push_back(frobenius_norm(matmul(p.b, p.a)));
        total += weights.back();
    }
    if (total == 0.0)
        weights.assign(payloads.size(), 1.0 / static_cast<double>(payloads.size()));
    else
        for (double& w : weights) w /= total;

    Matrix b(global.b.rows(), r_max), a(r_max, global.a.cols());
    for (std::size_t c = 0; c < payloads.size(); ++c) {
        Matrix pb = pad_factors(payloads[c].b, b.rows(), r_max);
        Matrix pa = pad_factors(payloads[c].a, r_max, a.cols());
        pb *= weights[c];
        pa *= weights[c];
        b += pb;
        a += pa;
    }
    global.b = std::move(b);
    global.a = std::move(a);
}

Matrix aggregate_flexlora(const std::vector<FactorPayload>& payloads) {
    std::vector<Matrix> products;
    for (const auto& p : payloads) products.push_back(matmul(p.b, p.a));
    return mean_of(products);
}

VanillaLoraAdapter flexlora_truncate(const Matrix& mean_delta, std::size_t r) {
    SvdResult s = svd(mean_delta);
    VanillaLoraAdapter out;
    out.b = Matrix(mean_delta.rows(), r);
    out.a = Matrix(r, mean_delta.cols());
    for (std::size_t i = 0; i < out.b.rows(); ++i)
        for (std::size_t j = 0; j < r; ++j) out.b(i, j) = s.u(i, j) * s.singular_values[j];
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < out.a.cols(); ++j) out.a(i, j) = s.vt(i, j);
    return out;
}

double aggregation_gap(const std::vector<FactorPayload>& payloads) {
    if (payloads.size() < 2) throw ShapeError("aggregation_gap: need at least two clients");
    std::vector<Matrix> bs, as, products;
    for (const auto& p : payloads) {
        bs.push_back(p.b);
        as.push_back(p.a);
        products.push_back(matmul(p.b, p.a));
    }
    return frobenius_norm(mean_of(products) - matmul(mean_of(bs), mean_of(as)));
}

FlRun make_fl_run(const AggregationStrategy& strategy, const FlConfig& config, Dataset train,
                  Dataset test) {
    FlRun run;
    run.strategy = strategy;
    run.config = config;
    run.train = std::move(train);
    run.test = std::move(test);

    PartitionSpec part;
    part.n_clients = config.n_clients;
    part.mode = config.partition;
    part.alpha = config.alpha;
    part.seed = config.seed;
    part.min_shard_size = config.min_shard_size;
    auto shards = partition(run.train, part);

    std::vector<double> budgets(config.n_clients, 1.0);
    if (config.heterogeneous) {
        RngStream bs(config.seed, kBudgetStream);
        budgets = sample_budgets(config.n_clients, config.budget_dist, bs);
    }
    for (std::size_t c = 0; c < config.n_clients; ++c) {
        ClientState client;
        client.id = c;
        client.shard = std::move(shards[c]);
        client.budget_fraction = budgets[c];
        client.rng = RngStream(config.seed, kClientStreamBase + c);
        run.clients.push_back(std::move(client));
    }

    const std::size_t d = run.train.features.rows();
    RngStream model_stream(config.seed, kModelStream);
    RngStream bootstrap_stream = model_stream;  // same backbone draw for the warm-start clone
    run.global_model =
        make_toy_model(d, run.train.n_classes, model_stream, strategy.tag == StrategyTag::FullFT);
    for (const Layer& layer : run.global_model.layers) run.initial_w.push_back(layer.w);

    RngStream init_stream(config.seed, kModelStream + 1);
    switch (strategy.tag) {
        case StrategyTag::FullFT:
            break;
        case StrategyTag::Ravan: {
            RavanAdapter ad =
                init_ravan(d, d, strategy.rank, strategy.heads, strategy.init, init_stream);
            ad.trainable_scaling = strategy.trainable_scaling;
            run.global_model.layers[0].adapter = std::move(ad);
            break;
        }
        case StrategyTag::FedSB: {
            // warm start from a short centralized full-parameter pass on a
            // small server-held split
            ToyModel boot = make_toy_model(d, run.train.n_classes, bootstrap_stream, true);
            RngStream split_stream(config.seed, kBootstrapStream);
            const std::size_t n_boot = std::max<std::size_t>(
                run.train.n_classes, static_cast<std::size_t>(std::ceil(0.01 * run.train.size())));
            std::vector<std::size_t> pool(run.train.size());
            std::iota(pool.begin(), pool.end(), 0);
            for (std::size_t i = 0; i < n_boot; ++i)
                std::swap(pool[i], pool[i + split_stream.uniform_index(pool.size() - i)]);
            pool.resize(n_boot);
            Matrix x = gather_features(run.train, pool);
            std::vector<int> y = gather_labels(run.train, pool);
            const Matrix w_before = boot.layers[0].w;
            AdamState adam;
            adam.learning_rate = config.train.lr;
            adam.beta1 = config.train.beta1;
            adam.beta2 = config.train.beta2;
            const std::size_t steps =
                std::max<std::size_t>(1, n_boot / std::max<std::size_t>(1, config.train.batch_size));
            for (std::size_t s = 0; s < steps; ++s) {
                ModelGrads grads;
                loss_and_grads(boot, x, y, &grads);
                auto params = collect_trainable(boot);
                adam.step(params, flatten_grads(boot, grads));
                assign_trainable(boot, params);
            }
            run.global_model.layers[0].adapter =
                init_fedsb(boot.layers[0].w - w_before, strategy.rank);
            break;
        }
        default: {
            VanillaLoraAdapter ad;
            ad.b = Matrix(d, strategy.rank);
            ad.a = random_normal_matrix(strategy.rank, d, 1.0 / std::sqrt(static_cast<double>(d)),
                                        init_stream);
            ad.a_frozen = strategy.tag == StrategyTag::FFALoRA;
            run.global_model.layers[0].adapter = std::move(ad);
            break;
        }
    }
    return run;
}

RoundRecord run_round(FlRun& run, const std::vector<std::size_t>* execution_order) {
    const auto t0 = std::chrono::steady_clock::now();
    const FlConfig& config = run.config;
    const AggregationStrategy& strategy = run.strategy;

    RoundRecord record;
    record.round = run.round;

    RngStream server = RngStream(config.seed, kServerSampleStream).substream(run.round);
    record.sampled_clients =
        sample_clients(config.n_clients, config.clients_per_round, server);
    const std::size_t m = record.sampled_clients.size();

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    if (execution_order) {
        if (execution_order->size() != m)
            throw ShapeError("run_round: execution order size mismatch");
        order = *execution_order;
    }

    // broadcast copies; heterogeneous rank strategies get truncated factors
    std::vector<ClientUpdate> updates(m);
    for (std::size_t pos : order) {
        const ClientState& client = run.clients[record.sampled_clients[pos]];
        ToyModel broadcast = run.global_model;
        if (strategy.tag == StrategyTag::HetLoRA || strategy.tag == StrategyTag::FlexLoRA) {
            const std::size_t r_c = client_rank(strategy, client);
            const auto& global_ad = std::get<VanillaLoraAdapter>(run.global_model.layers[0].adapter);
            VanillaLoraAdapter local;
            if (strategy.tag == StrategyTag::HetLoRA) {
                local.b = Matrix(global_ad.b.rows(), r_c);
                local.a = Matrix(r_c, global_ad.a.cols());
                for (std::size_t i = 0; i < local.b.rows(); ++i)
                    for (std::size_t j = 0; j < r_c; ++j) local.b(i, j) = global_ad.b(i, j);
                for (std::size_t i = 0; i < r_c; ++i)
                    for (std::size_t j = 0; j < local.a.cols(); ++j) local.a(i, j) = global_ad.a(i, j);
            } else {
                local = flexlora_truncate(vanilla_delta_w(global_ad), r_c);
            }
            broadcast.layers[0].adapter = std::move(local);
        }
        updates[pos] = local_train(client, std::move(broadcast), strategy, run.train, config.train,
                                   run.round);
    }

    for (const auto& u : updates) {
        record.upload_bytes += u.upload_bytes;
        record.train_loss += u.train_loss / static_cast<double>(m);
    }

    switch (strategy.tag) {
        case StrategyTag::Ravan: {
            std::vector<RavanPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<RavanPayload>(std::move(u.payload)));
            auto& global = std::get<RavanAdapter>(run.global_model.layers[0].adapter);
            record.head_counts = aggregate_ravan(payloads, global);
            for (std::size_t i = 0; i < global.h; ++i)
                record.head_norms.push_back(std::abs(global.scales_s[i]) *
                                            frobenius_norm(global.cores_h[i]));
            break;
        }
        case StrategyTag::FedIT: {
            std::vector<FactorPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<FactorPayload>(std::move(u.payload)));
            if (payloads.size() >= 2) record.agg_gap = aggregation_gap(payloads);
            aggregate_fedit(payloads, std::get<VanillaLoraAdapter>(run.global_model.layers[0].adapter));
            break;
        }
        case StrategyTag::FedExLoRA: {
            std::vector<FactorPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<FactorPayload>(std::move(u.payload)));
            if (payloads.size() >= 2) record.agg_gap = aggregation_gap(payloads);
            aggregate_fedex(payloads, std::get<VanillaLoraAdapter>(run.global_model.layers[0].adapter),
                            run.global_model.layers[0].w);
            break;
        }
        case StrategyTag::FFALoRA: {
            std::vector<FactorPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<FactorPayload>(std::move(u.payload)));
            aggregate_ffa(payloads, std::get<VanillaLoraAdapter>(run.global_model.layers[0].adapter));
            break;
        }
        case StrategyTag::FedSB: {
            std::vector<CorePayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<CorePayload>(std::move(u.payload)));
            aggregate_fedsb(payloads, std::get<FedSbAdapter>(run.global_model.layers[0].adapter));
            break;
        }
        case StrategyTag::HetLoRA: {
            std::vector<FactorPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<FactorPayload>(std::move(u.payload)));
            if (payloads.size() >= 2) {
                const auto& g = std::get<VanillaLoraAdapter>(run.global_model.layers[0].adapter);
                std::vector<FactorPayload> padded;
                for (const auto& p : payloads)
                    padded.push_back({pad_factors(p.b, g.b.rows(), g.b.cols()),
                                      pad_factors(p.a, g.a.rows(), g.a.cols())});
                record.agg_gap = aggregation_gap(padded);
            }
            aggregate_hetlora(payloads, std::get<VanillaLoraAdapter>(run.global_model.layers[0].adapter));
            break;
        }
        case StrategyTag::FlexLoRA: {
            std::vector<FactorPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<FactorPayload>(std::move(u.payload)));
            Matrix mean_delta = aggregate_flexlora(payloads);
            // the server keeps the exact mean; clients get truncations next round
            const std::size_t full = std::min(mean_delta.rows(), mean_delta.cols());
            run.global_model.layers[0].adapter = flexlora_truncate(mean_delta, full);
            break;
        }
        case StrategyTag::FullFT: {
            std::vector<FullFtPayload> payloads;
            for (auto& u : updates) payloads.push_back(std::get<FullFtPayload>(std::move(u.payload)));
            for (std::size_t l = 0; l < run.global_model.layers.size(); ++l) {
                Matrix dw(run.global_model.layers[l].w.rows(), run.global_model.layers[l].w.cols());
                std::vector<double> db(run.global_model.layers[l].bias.size(), 0.0);
                for (const auto& p : payloads) {
                    dw += p.w_deltas[l];
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] += p.bias_deltas[l][i];
                }
                dw *= 1.0 / static_cast<double>(m);
                run.global_model.layers[l].w += dw;
                for (std::size_t i = 0; i < db.size(); ++i)
                    run.global_model.layers[l].bias[i] += db[i] / static_cast<double>(m);
            }
            break;
        }
    }

    std::vector<std::size_t> all(run.test.size());
    std::iota(all.begin(), all.end(), 0);
    Matrix tx = gather_features(run.test, all);
    std::vector<int> ty = gather_labels(run.test, all);
    record.eval_loss = loss_and_grads(run.global_model, tx, ty, nullptr);
    record.eval_acc = accuracy(run.global_model, tx, ty);

    Matrix delta = adapted_delta(run);
    if (frobenius_norm(delta) > 0.0) {
        auto sv = svd(delta).singular_values;
        record.eff_rank_entropy = effective_rank(sv, EffectiveRankMethod::EntropyExp);
        record.eff_rank_threshold = effective_rank(sv, EffectiveRankMethod::ThresholdFraction);
    }

    run.round++;
    record.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

}  // namespace peftsim
