#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace toprank {

// Per-user estimated Top-K threshold scores.
struct QuantileState {
    std::vector<double> beta;  // one per user, 0 until first refresh
    std::size_t k = 0;
    std::size_t sample_size = 0;
    std::int64_t last_update_epoch = -1;
};

// K-th largest score under descending sort with ascending-id tie-break,
// so that s_ui >= beta <=> pi_ui <= K for distinct scores.
double exact_topk_quantile(std::span<const double> scores, std::size_t k);

// K-th largest of the pooled positive scores and N sampled negative scores.
double mc_topk_quantile(std::span<const double> positive_scores,
                        std::span<const double> sampled_negative_scores,
                        std::size_t k);

// One subgradient step on the pinball loss; subgradient (1-p) at the kink.
double quantile_regression_step(double beta, std::span<const double> sampled_scores,
                                double p, double eta);

// DKW two-sided quantile deviation bound: 4 exp(-2 N delta^2).
double dkw_error_bound(std::size_t n, double delta);

}  // namespace toprank
