#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "toprank/dataset.hpp"
#include "toprank/losses.hpp"
#include "toprank/metrics.hpp"
#include "toprank/model.hpp"
#include "toprank/quantile.hpp"
#include "toprank/rng.hpp"

namespace toprank {

struct TrainConfig {
    LossConfig loss;
    double lr = 0.01;
    double weight_decay = 0.0;
    std::size_t epochs = 200;
    std::size_t batch_size = 1024;
    std::uint64_t seed = 42;
    std::size_t eval_every = 0;  // 0 = no mid-training evaluation
    std::size_t d = 64;
    ScoreKind score_kind = ScoreKind::Cosine;
    std::size_t num_threads = 0;  // 0 = hardware concurrency
    std::vector<std::size_t> eval_cutoffs = {20};

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double seconds = 0.0;
    bool quantile_refreshed = false;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::vector<std::pair<std::size_t, EvalReport>> evals;  // (epoch, report)

    std::string to_csv() const;
};

// n draws uniform over the user's negatives, with replacement across draws,
// via rejection against the positive set.
std::vector<std::uint32_t> sample_negatives(const InteractionSet& train,
                                            std::uint32_t user, std::size_t n,
                                            Rng& rng);

// min(n, |N_u|) distinct negatives, uniform without replacement; n >= |N_u|
// returns every negative (full coverage).
std::vector<std::uint32_t> sample_negatives_distinct(const InteractionSet& train,
                                                     std::uint32_t user,
                                                     std::size_t n, Rng& rng);

// Monte Carlo quantile refresh for every user: pool = P_u scores plus N
// sampled negative scores, beta = K-th largest of the pool.
void update_quantiles(const EmbeddingModel& model, const InteractionSet& train,
                      QuantileState& state, std::size_t n, std::size_t k,
                      std::uint64_t seed, std::int64_t epoch,
                      std::size_t num_threads = 0);

struct TrainResult {
    EmbeddingModel model;
    AdamState optimizer;
    QuantileState quantiles;
    TrainHistory history;
};

// Full training loop: seeded init, per-epoch interaction shuffle, N fresh
// negatives per (u,i), analytic gradients, one Adam step per batch, and a
// quantile refresh every T_beta epochs for the SL@K variant.
TrainResult train(const DatasetSplit& split, const TrainConfig& config);

// Resumable training from an existing state (epochs already done recorded in
// `start_epoch`); used by checkpoint tests and the CLI.
void train_epochs(const DatasetSplit& split, const TrainConfig& config,
                  EmbeddingModel& model, AdamState& optimizer,
                  QuantileState& quantiles, TrainHistory& history,
                  std::size_t start_epoch, std::size_t end_epoch);

struct Checkpoint {
    EmbeddingModel model;
    AdamState optimizer;
    QuantileState quantiles;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace toprank
