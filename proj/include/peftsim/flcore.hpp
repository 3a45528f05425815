#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "peftsim/adapters.hpp"
#include "peftsim/data.hpp"
#include "peftsim/model.hpp"

namespace peftsim {

enum class StrategyTag { FullFT, FedIT, FedExLoRA, FFALoRA, FedSB, HetLoRA, FlexLoRA, Ravan };
enum class ScoreFnTag { Random, WeightBased, GradientBased };
enum class BudgetDist { Uniform, BellShaped, SkewedRight };

struct AggregationStrategy {
    StrategyTag tag = StrategyTag::Ravan;
    std::size_t rank = 4;
    std::size_t heads = 4;  // Ravan only
    ScoreFnTag score_fn = ScoreFnTag::Random;
    bool trainable_scaling = true;
    InitScheme init;  // Ravan basis initialization
};

struct ClientState {
    std::size_t id = 0;
    std::vector<std::size_t> shard;
    double budget_fraction = 1.0;  // one of 1/4, 1/2, 3/4, 1
    RngStream rng;
};

// max(1, floor(fraction * h))
std::size_t k_heads_for(double budget_fraction, std::size_t h);

// Per-head products s_i H_i for the locally selected heads.
struct RavanPayload {
    std::vector<std::size_t> heads;  // ascending
    std::vector<Matrix> products;    // r x r, aligned with heads
};

struct FactorPayload {
    Matrix b;
    Matrix a;
};

struct CorePayload {
    Matrix core;
};

struct FullFtPayload {
    std::vector<Matrix> w_deltas;
    std::vector<std::vector<double>> bias_deltas;
};

struct ClientUpdate {
    std::size_t client_id = 0;
    std::variant<RavanPayload, FactorPayload, CorePayload, FullFtPayload> payload;
    double train_loss = 0.0;
    std::uint64_t upload_bytes = 0;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> sampled_clients;
    std::vector<std::size_t> head_counts;  // participants per head (Ravan)
    double train_loss = 0.0;
    double eval_loss = 0.0;
    double eval_acc = 0.0;
    double agg_gap = 0.0;
    std::uint64_t upload_bytes = 0;
    double eff_rank_entropy = 0.0;
    double eff_rank_threshold = 0.0;
    std::vector<double> head_norms;  // ||s_i H_i||_F per head (Ravan)
    double wall_time_s = 0.0;
};

// Uniform without-replacement subset of {0, ..., n_total - 1}, ascending.
std::vector<std::size_t> sample_clients(std::size_t n_total, std::size_t m, RngStream& stream);

// Assigns a fraction from {1/4, 1/2, 3/4, 1} to each client. Tier counts
// follow the distribution's proportions with largest-remainder rounding;
// the assignment to client ids is a stream-driven shuffle.
std::vector<double> sample_budgets(std::size_t n_clients, BudgetDist dist, RngStream& stream);

// Scores every head of the model's RavanAdapter layer and returns the top-k
// indices, ascending, ties to the lowest index. WeightBased uses
// ||s_i H_i||_F, GradientBased the Frobenius norm of the loss gradient in
// the product parameterization s_i H_i on the given minibatch.
std::vector<std::size_t> select_heads(const ToyModel& model, std::size_t k, ScoreFnTag fn,
                                      const Matrix& x, const std::vector<int>& y,
                                      RngStream& stream);

enum class Optimizer { Adam, Sgd };

struct TrainOpts {
    std::size_t local_steps = 50;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    // Sgd keeps update spectra interpretable for the rank studies; the
    // federation protocol itself defaults to Adam
    Optimizer optimizer = Optimizer::Adam;
};

// One client round: takes a broadcast model copy, resets scaling factors,
// selects heads per budget, runs local Adam on with-replacement minibatches
// from the shard, and packs the strategy's payload. Pure in (model, shard,
// stream); client execution order never matters.
ClientUpdate local_train(const ClientState& client, ToyModel model,
                         const AggregationStrategy& strategy, const Dataset& train,
                         const TrainOpts& opts, std::size_t round_idx);

// Per-head mean of the received s_i H_i products; heads nobody trained are
// left unchanged; all global scales reset to 1. Returns participants per head.
std::vector<std::size_t> aggregate_ravan(const std::vector<RavanPayload>& payloads,
                                         RavanAdapter& global);

// Factor-wise means of B and A separately (inexact).
void aggregate_fedit(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global);

// FedIT means plus a backbone residual mean(BA) - mean(B) mean(A), making
// the effective model the exact mean of the client models.
void aggregate_fedex(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global,
                     Matrix& backbone_w);

// Mean of B only; A stays frozen at initialization.
void aggregate_ffa(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global);

void aggregate_fedsb(const std::vector<CorePayload>& payloads, FedSbAdapter& global);

// Frobenius-weighted sum over heterogeneous ranks: payloads are zero-padded
// to the global rank, weighted by ||B_c A_c||_F (uniform on an all-zero
// round).
void aggregate_hetlora(const std::vector<FactorPayload>& payloads, VanillaLoraAdapter& global);

// Mean of the client products B_c A_c; clients later receive SVD truncations.
Matrix aggregate_flexlora(const std::vector<FactorPayload>& payloads);

// B = U[:, :r] Sigma[:r, :r], A = Vt[:r, :] of the given matrix.
VanillaLoraAdapter flexlora_truncate(const Matrix& mean_delta, std::size_t r);

// ||mean(B_c A_c) - mean(B_c) mean(A_c)||_F
double aggregation_gap(const std::vector<FactorPayload>& payloads);

struct FlConfig {
    std::size_t n_clients = 20;
    std::size_t clients_per_round = 3;
    TrainOpts train;
    PartitionMode partition = PartitionMode::Dirichlet;
    double alpha = 0.3;
    std::size_t min_shard_size = 1;
    BudgetDist budget_dist = BudgetDist::Uniform;
    bool heterogeneous = false;  // false: every budget is 1
    std::uint64_t seed = 0;
};

struct FlRun {
    AggregationStrategy strategy;
    FlConfig config;
    Dataset train;
    Dataset test;
    ToyModel global_model;
    std::vector<Matrix> initial_w;  // FullFT delta reference
    std::vector<ClientState> clients;
    std::size_t round = 0;
};

// Partitions the data, assigns budgets, and builds the strategy's global
// model. Fed-SB warm-starts from one Full-FT pass over a small server-held
// bootstrap split.
FlRun make_fl_run(const AggregationStrategy& strategy, const FlConfig& config, Dataset train,
                  Dataset test);

// Sample, broadcast, train the sampled clients, aggregate, evaluate.
// execution_order, when given, permutes the processing order of the round's
// sampled clients; the result is bit-identical for every permutation.
RoundRecord run_round(FlRun& run, const std::vector<std::size_t>* execution_order = nullptr);

}  // namespace peftsim
