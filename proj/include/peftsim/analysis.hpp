#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peftsim/flcore.hpp"

namespace peftsim {

enum class Regime { Centralized, FedIID, FedNonIID };

struct SpectrumReport {
    Regime regime = Regime::Centralized;
    std::vector<double> singular_values;
    double eff_rank_entropy = 0.0;
    double eff_rank_threshold = 0.0;
    std::uint64_t seed = 0;
    bool target_reached = false;
};

struct SpectraOpts {
    double target_acc = 0.9;
    std::size_t max_steps = 2000;   // centralized Adam cap
    std::size_t max_rounds = 300;   // federated round cap
    FlConfig fl;                    // clients, local steps, lr; alpha used for the non-IID regime
};

// Full-parameter test accuracy after a fixed centralized Adam budget; the
// reference ceiling for picking spectra targets.
double centralized_ceiling(const Dataset& train, const Dataset& test, std::size_t steps, double lr,
                           std::uint64_t seed);

// Trains Full-FT to the target accuracy under all three regimes and returns
// the singular-value spectrum of the resulting weight update, in regime
// order Centralized, FedIID, FedNonIID. Throws when a regime misses the
// target within its cap (message carries the best metric seen).
std::vector<SpectrumReport> spectra_experiment(const Dataset& train, const Dataset& test,
                                               const SpectraOpts& opts, std::uint64_t seed);

struct HeadSweepRow {
    std::size_t h = 0;
    std::size_t r = 0;       // per-head rank floor(sqrt(N / h)), capped at d
    double sqrt_nh = 0.0;    // realized rank ceiling before the d cap
    bool saturated = false;  // sqrt(N h) >= d: extra heads cannot add rank
    bool skipped = false;    // budget too small for this head count
    double final_acc = 0.0;
};

// Runs the federated pipeline once per head count at a fixed parameter
// budget. Rows come back sorted by h; infeasible head counts are flagged
// and not run.
std::vector<HeadSweepRow> head_sweep(std::size_t n_budget,
                                     const std::vector<std::size_t>& head_counts,
                                     const Dataset& train, const Dataset& test,
                                     const AggregationStrategy& base, const FlConfig& config,
                                     std::size_t rounds);

// round,strategy,seed,train_loss,eval_loss,eval_acc,agg_gap,upload_bytes,
// eff_rank_entropy,eff_rank_threshold,head_norms
void write_report_csv(const std::vector<RoundRecord>& records, const std::string& strategy,
                      std::uint64_t seed, const std::string& path);
void write_report_jsonl(const std::vector<RoundRecord>& records, const std::string& strategy,
                        std::uint64_t seed, const std::string& path);

// Reads back the jsonl fields; entries absent from the report stay default.
std::vector<RoundRecord> read_report_jsonl(const std::string& path);

// Two columns per line: raw sigma and sigma / sigma_1.
void write_spectrum(const SpectrumReport& report, const std::string& path);

}  // namespace peftsim
