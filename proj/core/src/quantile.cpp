#include "toprank/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace toprank {

double exact_topk_quantile(std::span<const double> scores, std::size_t k) {
    if (k < 1 || k > scores.size())
        throw std::invalid_argument("exact_topk_quantile: K out of range");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                     std::greater<double>());
    return sorted[k - 1];
}

double mc_topk_quantile(std::span<const double> positive_scores,
                        std::span<const double> sampled_negative_scores,
                        std::size_t k) {
    std::vector<double> pool;
    pool.reserve(positive_scores.size() + sampled_negative_scores.size());
    pool.insert(pool.end(), positive_scores.begin(), positive_scores.end());
    pool.insert(pool.end(), sampled_negative_scores.begin(),
                sampled_negative_scores.end());
    if (k < 1 || k > pool.size())
        throw std::invalid_argument("mc_topk_quantile: pool smaller than K");
    std::nth_element(pool.begin(), pool.begin() + (k - 1), pool.end(),
                     std::greater<double>());
    return pool[k - 1];
}

double quantile_regression_step(double beta, std::span<const double> sampled_scores,
                                double p, double eta) {
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("quantile_regression_step: p must be in (0,1)");
    if (!(eta > 0.0))
        throw std::invalid_argument("quantile_regression_step: eta must be > 0");
    if (sampled_scores.empty()) return beta;
    // d/dbeta of mean[p (s-beta)_+ + (1-p)(beta-s)_+], with subgradient
    // (1-p) at s == beta.
    double grad = 0.0;
    for (const double s : sampled_scores) {
        if (s < beta)
            grad += 1.0 - p;
        else if (s > beta)
            grad -= p;
        else
            grad += 1.0 - p;
    }
    grad /= static_cast<double>(sampled_scores.size());
    return beta - eta * grad;
}

double dkw_error_bound(std::size_t n, double delta) {
    if (n < 1 || !(delta > 0.0))
        throw std::invalid_argument("dkw_error_bound: need N >= 1 and delta > 0");
    return 4.0 * std::exp(-2.0 * static_cast<double>(n) * delta * delta);
}

}  // namespace toprank
