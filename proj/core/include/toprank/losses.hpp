#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "toprank/model.hpp"

namespace toprank {

enum class LossVariant { SL, SLK, BPR, LambdaK, LambdaKS };

LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossVariant v);

struct LossConfig {
    LossVariant variant = LossVariant::SLK;
    double tau_d = 0.2;
    double tau_w = 1.0;
    std::size_t k = 20;
    std::size_t n = 1000;     // negatives per positive interaction
    std::size_t t_beta = 5;   // quantile refresh interval (epochs)

    void validate() const;
};

// log sum_j exp((s_uj - s_ui)/tau_d) with max-subtraction. The full form
// passes all item scores (including i itself); the sampled form passes only
// the sampled negatives, with no rescaling.
double sl_term(double s_ui, std::span<const double> negative_scores, double tau_d);

double sl_loss(std::span<const double> positive_scores,
               std::span<const std::vector<double>> negatives_per_positive,
               double tau_d);

// Quantile-based weight: sigmoid((s_ui - beta)/tau_w).
double slk_weight(double s_ui, double beta, double tau_w);

double slk_loss(std::span<const double> positive_scores,
                std::span<const std::vector<double>> negatives_per_positive,
                double beta, double tau_w, double tau_d);

// Softplus of the score difference, overflow-safe.
double bpr_loss(double s_ui, double s_uj);

// Lambda weight mu_uij from ranking positions (accepts estimated
// real-valued positions). Positions must be distinct.
double lambda_weight(double pi_i, double pi_j, std::size_t k);

// Full-form LambdaLoss@K: sum over all positive/negative pairs with ranks
// from a full descending sort (ascending-id ties). Tied pairs are skipped.
double lambdaloss_at_k(std::span<const double> scores,
                       const std::vector<std::uint32_t>& positives,
                       std::size_t k);

// pi_hat = pi_star * num_items / pool_size.
double rescale_sampled_rank(std::size_t sample_rank, std::size_t num_items,
                            std::size_t pool_size);

// Analytic gradient of one (u,i) interaction for the SL family against the
// sampled negatives. With topk_weighting the SL@K form is used (beta is a
// stop-gradient constant); otherwise plain SL. Gradients are accumulated
// into user_g/item_g; returns the interaction's loss value.
double softmax_interaction_gradient(const EmbeddingModel& model, std::uint32_t u,
                                    std::uint32_t i,
                                    std::span<const std::uint32_t> negatives,
                                    double beta, double tau_d, double tau_w,
                                    bool topk_weighting, SparseGrad& user_g,
                                    SparseGrad& item_g);

double bpr_interaction_gradient(const EmbeddingModel& model, std::uint32_t u,
                                std::uint32_t i,
                                std::span<const std::uint32_t> negatives,
                                SparseGrad& user_g, SparseGrad& item_g);

// Lambda gradient for one interaction, given ranking positions for item i
// and each negative (exact or estimated). Lambda weights and positions are
// treated as constants.
double lambda_interaction_gradient(const EmbeddingModel& model, std::uint32_t u,
                                   std::uint32_t i, double pi_i,
                                   std::span<const std::uint32_t> negatives,
                                   std::span<const double> pi_negatives,
                                   std::size_t k, SparseGrad& user_g,
                                   SparseGrad& item_g);

struct UserGradient {
    std::vector<double> user;  // d-vector for the user row
    SparseGrad items;
    double loss = 0.0;
};

// SL@K gradient over one user's positives with per-positive sampled
// negatives; matches finite differences of slk_loss on the same scores.
UserGradient slk_user_gradient(
    const EmbeddingModel& model, std::uint32_t u,
    std::span<const std::uint32_t> positives,
    const std::vector<std::vector<std::uint32_t>>& negatives_per_positive,
    double beta, const LossConfig& config);

}  // namespace toprank
