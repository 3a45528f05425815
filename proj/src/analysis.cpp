#include "peftsim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "peftsim/linalg.hpp"

namespace peftsim {
namespace {

// same stream id the federated runner uses for its backbone draw, so all
// three regimes start from identical weights
constexpr std::uint64_t kModelStream = 0x30DE1;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::Centralized: return "centralized";
        case Regime::FedIID: return "fed_iid";
        case Regime::FedNonIID: return "fed_noniid";
    }
    return "?";
}

SpectrumReport report_from_delta(const Matrix& delta, Regime regime, std::uint64_t seed,
                                 bool reached) {
    SpectrumReport rep;
    rep.regime = regime;
    rep.seed = seed;
    rep.target_reached = reached;
    rep.singular_values = svd(delta).singular_values;
    rep.eff_rank_entropy = effective_rank(rep.singular_values, EffectiveRankMethod::EntropyExp);
    rep.eff_rank_threshold =
        effective_rank(rep.singular_values, EffectiveRankMethod::ThresholdFraction);
    return rep;
}

}  // namespace

double centralized_ceiling(const Dataset& train, const Dataset& test, std::size_t steps, double lr,
                           std::uint64_t seed) {
    RngStream stream(seed, kModelStream);
    ToyModel model = make_toy_model(train.features.rows(), train.n_classes, stream, true);
    std::vector<std::size_t> all(train.size());
    std::iota(all.begin(), all.end(), 0);
    Matrix x = gather_features(train, all);
    std::vector<int> y = gather_labels(train, all);
    AdamState adam;
    adam.learning_rate = lr;
    for (std::size_t s = 0; s < steps; ++s) {
        ModelGrads grads;
        loss_and_grads(model, x, y, &grads);
        auto params = collect_trainable(model);
        adam.step(params, flatten_grads(model, grads));
        assign_trainable(model, params);
    }
    std::vector<std::size_t> ta(test.size());
    std::iota(ta.begin(), ta.end(), 0);
    return accuracy(model, gather_features(test, ta), gather_labels(test, ta));
}

std::vector<SpectrumReport> spectra_experiment(const Dataset& train, const Dataset& test,
                                               const SpectraOpts& opts, std::uint64_t seed) {
    std::vector<SpectrumReport> out;

    std::vector<std::size_t> ta(test.size());
    std::iota(ta.begin(), ta.end(), 0);
    Matrix tx = gather_features(test, ta);
    std::vector<int> ty = gather_labels(test, ta);

    // centralized: minibatch training on the pooled data with the same
    // optimizer and batch size the clients use
    {
        RngStream stream(seed, kModelStream);
        ToyModel model = make_toy_model(train.features.rows(), train.n_classes, stream, true);
        const Matrix w0 = model.layers[0].w;
        RngStream batches(seed, 0xBA7C);
        AdamState adam;
        adam.learning_rate = opts.fl.train.lr;
        adam.beta1 = opts.fl.train.beta1;
        adam.beta2 = opts.fl.train.beta2;
        double best = accuracy(model, tx, ty);
        bool reached = best >= opts.target_acc;
        for (std::size_t s = 0; s < opts.max_steps && !reached; ++s) {
            std::vector<std::size_t> idx(opts.fl.train.batch_size);
            for (auto& i : idx) i = batches.uniform_index(train.size());
            ModelGrads grads;
            loss_and_grads(model, gather_features(train, idx), gather_labels(train, idx), &grads);
            auto params = collect_trainable(model);
            const auto flat = flatten_grads(model, grads);
            if (opts.fl.train.optimizer == Optimizer::Adam) {
                adam.step(params, flat);
            } else {
                for (std::size_t i = 0; i < params.size(); ++i)
                    params[i] -= opts.fl.train.lr * flat[i];
            }
            assign_trainable(model, params);
            const double acc = accuracy(model, tx, ty);
            best = std::max(best, acc);
            reached = acc >= opts.target_acc;
        }
        if (!reached)
            throw NumericError("spectra: centralized missed target " + fmt(opts.target_acc) +
                               ", best " + fmt(best));
        out.push_back(report_from_delta(model.layers[0].w - w0, Regime::Centralized, seed, true));
    }

    for (Regime regime : {Regime::FedIID, Regime::FedNonIID}) {
        FlConfig cfg = opts.fl;
        cfg.seed = seed;
        cfg.partition = regime == Regime::FedIID ? PartitionMode::IID : PartitionMode::Dirichlet;
        AggregationStrategy strategy;
        strategy.tag = StrategyTag::FullFT;
        FlRun run = make_fl_run(strategy, cfg, train, test);
        double best = 0.0;
        bool reached = false;
        for (std::size_t t = 0; t < opts.max_rounds && !reached; ++t) {
            RoundRecord rec = run_round(run);
            best = std::max(best, rec.eval_acc);
            reached = rec.eval_acc >= opts.target_acc;
        }
        if (!reached)
            throw NumericError("spectra: " + std::string(regime_name(regime)) +
                               " missed target " + fmt(opts.target_acc) + ", best " + fmt(best));
        out.push_back(report_from_delta(run.global_model.layers[0].w - run.initial_w[0], regime,
                                        seed, true));
    }
    return out;
}

std::vector<HeadSweepRow> head_sweep(std::size_t n_budget,
                                     const std::vector<std::size_t>& head_counts,
                                     const Dataset& train, const Dataset& test,
                                     const AggregationStrategy& base, const FlConfig& config,
                                     std::size_t rounds) {
    const std::size_t d = train.features.rows();
    std::vector<std::size_t> hs = head_counts;
    std::sort(hs.begin(), hs.end());

    std::vector<HeadSweepRow> out;
    for (std::size_t h : hs) {
        HeadSweepRow row;
        row.h = h;
        row.sqrt_nh = std::sqrt(static_cast<double>(n_budget) * static_cast<double>(h));
        row.saturated = row.sqrt_nh >= static_cast<double>(d);
        row.r = std::min<std::size_t>(
            static_cast<std::size_t>(std::sqrt(static_cast<double>(n_budget) / h)), d);
        if (row.r == 0) {
            row.skipped = true;
            out.push_back(row);
            continue;
        }
        AggregationStrategy strategy = base;
        strategy.tag = StrategyTag::Ravan;
        strategy.heads = h;
        strategy.rank = row.r;
        FlRun run = make_fl_run(strategy, config, train, test);
        RoundRecord last;
        for (std::size_t t = 0; t < rounds; ++t) last = run_round(run);
        row.final_acc = last.eval_acc;
        out.push_back(row);
    }
    return out;
}

namespace {

std::string csv_row(const RoundRecord& rec, const std::string& strategy, std::uint64_t seed) {
    std::ostringstream os;
    os << rec.round << ',' << strategy << ',' << seed << ',' << fmt(rec.train_loss) << ','
       << fmt(rec.eval_loss) << ',' << fmt(rec.eval_acc) << ',' << fmt(rec.agg_gap) << ','
       << rec.upload_bytes << ',' << fmt(rec.eff_rank_entropy) << ','
       << fmt(rec.eff_rank_threshold) << ',';
    for (std::size_t i = 0; i < rec.head_norms.size(); ++i) {
        if (i) os << ';';
        os << fmt(rec.head_norms[i]);
    }
    return os.str();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

}  // namespace

void write_report_csv(const std::vector<RoundRecord>& records, const std::string& strategy,
                      std::uint64_t seed, const std::string& path) {
    auto out = open_out(path);
    out << "round,strategy,seed,train_loss,eval_loss,eval_acc,agg_gap,upload_bytes,"
           "eff_rank_entropy,eff_rank_threshold,head_norms\n";
    for (const auto& rec : records) out << csv_row(rec, strategy, seed) << '\n';
}

void write_report_jsonl(const std::vector<RoundRecord>& records, const std::string& strategy,
                        std::uint64_t seed, const std::string& path) {
    auto out = open_out(path);
    for (const auto& rec : records) {
        nlohmann::ordered_json j;
        j["round"] = rec.round;
        j["strategy"] = strategy;
        j["seed"] = seed;
        j["train_loss"] = rec.train_loss;
        j["eval_loss"] = rec.eval_loss;
        j["eval_acc"] = rec.eval_acc;
        j["agg_gap"] = rec.agg_gap;
        j["upload_bytes"] = rec.upload_bytes;
        j["eff_rank_entropy"] = rec.eff_rank_entropy;
        j["eff_rank_threshold"] = rec.eff_rank_threshold;
        j["head_norms"] = rec.head_norms;
        out << j.dump() << '\n';
    }
}

std::vector<RoundRecord> read_report_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<RoundRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        RoundRecord rec;
        rec.round = j.at("round").get<std::size_t>();
        rec.train_loss = j.at("train_loss").get<double>();
        rec.eval_loss = j.at("eval_loss").get<double>();
        rec.eval_acc = j.at("eval_acc").get<double>();
        rec.agg_gap = j.at("agg_gap").get<double>();
        rec.upload_bytes = j.at("upload_bytes").get<std::uint64_t>();
        rec.eff_rank_entropy = j.at("eff_rank_entropy").get<double>();
        rec.eff_rank_threshold = j.at("eff_rank_threshold").get<double>();
        rec.head_norms = j.at("head_norms").get<std::vector<double>>();
        out.push_back(std::move(rec));
    }
    return out;
}

void write_spectrum(const SpectrumReport& report, const std::string& path) {
    auto out = open_out(path);
    const double top =
        report.singular_values.empty() ? 0.0 : report.singular_values.front();
    for (double s : report.singular_values)
        out << fmt(s) << ' ' << fmt(top > 0.0 ? s / top : 0.0) << '\n';
}

}  // namespace peftsim
