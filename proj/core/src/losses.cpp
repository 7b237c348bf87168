#include "toprank/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace toprank {

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "SL" || s == "sl") return LossVariant::SL;
    if (s == "SL@K" || s == "slk" || s == "sl@k") return LossVariant::SLK;
    if (s == "BPR" || s == "bpr") return LossVariant::BPR;
    if (s == "LambdaLoss@K" || s == "lambda" || s == "lambdaloss@k")
        return LossVariant::LambdaK;
    if (s == "LambdaLoss@K-S" || s == "lambda-s" || s == "lambdaloss@k-s")
        return LossVariant::LambdaKS;
    throw std::invalid_argument("unknown loss variant: " + s);
}

std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::SL: return "SL";
        case LossVariant::SLK: return "SL@K";
        case LossVariant::BPR: return "BPR";
        case LossVariant::LambdaK: return "LambdaLoss@K";
        case LossVariant::LambdaKS: return "LambdaLoss@K-S";
    }
    return "?";
}

void LossConfig::validate() const {
    if (!(tau_d > 0.0) || !(tau_w > 0.0))
        throw std::invalid_argument("LossConfig: temperatures must be positive");
    if (k < 1 || n < 1 || t_beta < 1)
        throw std::invalid_argument("LossConfig: K, N, T_beta must be >= 1");
}

double sl_term(double s_ui, std::span<const double> negative_scores,
               double tau_d) {
    if (negative_scores.empty())
        throw std::invalid_argument("sl_term: need at least one negative score");
    double max_d = -std::numeric_limits<double>::infinity();
    for (const double s : negative_scores) max_d = std::max(max_d, (s - s_ui) / tau_d);
    double sum = 0.0;
    for (const double s : negative_scores) sum += std::exp((s - s_ui) / tau_d - max_d);
    return max_d + std::log(sum);
}

double sl_loss(std::span<const double> positive_scores,
               std::span<const std::vector<double>> negatives_per_positive,
               double tau_d) {
    double loss = 0.0;
    for (std::size_t idx = 0; idx < positive_scores.size(); ++idx)
        loss += sl_term(positive_scores[idx], negatives_per_positive[idx], tau_d);
    return loss;
}

double slk_weight(double s_ui, double beta, double tau_w) {
    const double x = (s_ui - beta) / tau_w;
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double slk_loss(std::span<const double> positive_scores,
                std::span<const std::vector<double>> negatives_per_positive,
                double beta, double tau_w, double tau_d) {
    double loss = 0.0;
    for (std::size_t idx = 0; idx < positive_scores.size(); ++idx)
        loss += slk_weight(positive_scores[idx], beta, tau_w) *
                sl_term(positive_scores[idx], negatives_per_positive[idx], tau_d);
    return loss;
}

double bpr_loss(double s_ui, double s_uj) {
    const double d = s_uj - s_ui;
    // log(1 + exp(d)) = max(d, 0) + log1p(exp(-|d|))
    return std::max(d, 0.0) + std::log1p(std::exp(-std::abs(d)));
}

double lambda_weight(double pi_i, double pi_j, std::size_t k) {
    const double diff = std::abs(pi_i - pi_j);
    if (diff == 0.0)
        throw std::invalid_argument("lambda_weight: tied ranking positions");
    const double eta = 1.0 / std::log2(diff + 1.0) - 1.0 / std::log2(diff + 2.0);
    const double pi_max = std::max(pi_i, pi_j);
    if (pi_max > static_cast<double>(k))
        return eta / (1.0 - 1.0 / std::log2(pi_max + 1.0));
    return eta;
}

namespace {

// 1-based positions from a full descending sort with ascending-id ties.
std::vector<double> sorted_positions(std::span<const double> scores) {
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<double> pos(scores.size());
    for (std::size_t r = 0; r < order.size(); ++r)
        pos[order[r]] = static_cast<double>(r + 1);
    return pos;
}

}  // namespace

double lambdaloss_at_k(std::span<const double> scores,
                       const std::vector<std::uint32_t>& positives,
                       std::size_t k) {
    const auto pos = sorted_positions(scores);
    double loss = 0.0;
    for (const auto i : positives) {
        for (std::uint32_t j = 0; j < scores.size(); ++j) {
            if (std::binary_search(positives.begin(), positives.end(), j)) continue;
            if (pos[i] == pos[j]) continue;
            loss += lambda_weight(pos[i], pos[j], k) * bpr_loss(scores[i], scores[j]);
        }
    }
    return loss;
}

double rescale_sampled_rank(std::size_t sample_rank, std::size_t num_items,
                            std::size_t pool_size) {
    if (pool_size < 1)
        throw std::invalid_argument("rescale_sampled_rank: empty pool");
    return static_cast<double>(sample_rank) * static_cast<double>(num_items) /
           static_cast<double>(pool_size);
}

namespace {

// Per-interaction score cache: the positive item's score plus per-negative
// scores and norms, enough to rebuild all chain-rule factors in one more
// pass without per-negative allocations.
struct PairCache {
    double a = 0.0;    // ||u||
    double s_i = 0.0;  // s_ui
    double b_i = 0.0;  // ||v_i||
    std::vector<double> s;  // s_uj per negative
    std::vector<double> b;  // ||v_j|| per negative
    std::vector<double> c;  // dLoss/ds_uj per negative (filled by caller)
};

inline double row_dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
    return s;
}

void compute_pair_scores(const EmbeddingModel& model, std::uint32_t u,
                         std::uint32_t i,
                         std::span<const std::uint32_t> negatives,
                         PairCache& pc) {
    const auto uu = model.user_row(u);
    const bool cosine = model.score_kind == ScoreKind::Cosine;
    pc.a = cosine ? std::sqrt(row_dot(uu, uu)) : 0.0;
    const auto vi = model.item_row(i);
    pc.b_i = cosine ? std::sqrt(row_dot(vi, vi)) : 0.0;
    pc.s_i = cosine ? row_dot(uu, vi) / (pc.a * pc.b_i + 1e-12) : row_dot(uu, vi);
    pc.s.resize(negatives.size());
    pc.b.resize(negatives.size());
    pc.c.assign(negatives.size(), 0.0);
    for (std::size_t idx = 0; idx < negatives.size(); ++idx) {
        const auto vj = model.item_row(negatives[idx]);
        if (cosine) {
            pc.b[idx] = std::sqrt(row_dot(vj, vj));
            pc.s[idx] = row_dot(uu, vj) / (pc.a * pc.b[idx] + 1e-12);
        } else {
            pc.s[idx] = row_dot(uu, vj);
        }
    }
}

// Accumulates coeff_i * ds_ui/dtheta + sum_j c_j * ds_uj/dtheta into the
// user and item gradients. For cosine, ds/du = v/D - (s b / (a D)) u and
// ds/dv = u/D - (s a / (b D)) v with D = ab + 1e-12.
void apply_pair_grads(const EmbeddingModel& model, std::uint32_t u,
                      std::uint32_t i, std::span<const std::uint32_t> negatives,
                      const PairCache& pc, double coeff_i, SparseGrad& user_g,
                      SparseGrad& item_g) {
    const std::size_t d = model.d;
    const auto uu = model.user_row(u);
    const bool cosine = model.score_kind == ScoreKind::Cosine;
    std::vector<double> user_buf(d, 0.0), buf(d);
    double user_u_coeff = 0.0;  // coefficient multiplying the user row itself

    const auto vi = model.item_row(i);
    if (cosine) {
        const double di = pc.a * pc.b_i + 1e-12;
        for (std::size_t k = 0; k < d; ++k) user_buf[k] += coeff_i * vi[k] / di;
        user_u_coeff -= coeff_i * pc.s_i * pc.b_i / (std::max(pc.a, 1e-300) * di);
        const double cv = pc.s_i * pc.a / (std::max(pc.b_i, 1e-300) * di);
        for (std::size_t k = 0; k < d; ++k)
            buf[k] = coeff_i * (uu[k] / di - cv * vi[k]);
    } else {
        for (std::size_t k = 0; k < d; ++k) {
            user_buf[k] += coeff_i * vi[k];
            buf[k] = coeff_i * uu[k];
        }
    }
    item_g.add(i, buf);

    for (std::size_t idx = 0; idx < negatives.size(); ++idx) {
        const double cj = pc.c[idx];
        if (cj == 0.0) continue;
        const auto vj = model.item_row(negatives[idx]);
        if (cosine) {
            const double dj = pc.a * pc.b[idx] + 1e-12;
            for (std::size_t k = 0; k < d; ++k) user_buf[k] += cj * vj[k] / dj;
            user_u_coeff -= cj * pc.s[idx] * pc.b[idx] / (std::max(pc.a, 1e-300) * dj);
            const double cv = pc.s[idx] * pc.a / (std::max(pc.b[idx], 1e-300) * dj);
            for (std::size_t k = 0; k < d; ++k)
                buf[k] = cj * (uu[k] / dj - cv * vj[k]);
        } else {
            for (std::size_t k = 0; k < d; ++k) {
                user_buf[k] += cj * vj[k];
                buf[k] = cj * uu[k];
            }
        }
        item_g.add(negatives[idx], buf);
    }
    if (user_u_coeff != 0.0)
        for (std::size_t k = 0; k < d; ++k) user_buf[k] += user_u_coeff * uu[k];
    user_g.add(u, user_buf);
}

}  // namespace

double softmax_interaction_gradient(const EmbeddingModel& model, std::uint32_t u,
                                    std::uint32_t i,
                                    std::span<const std::uint32_t> negatives,
                                    double beta, double tau_d, double tau_w,
                                    bool topk_weighting, SparseGrad& user_g,
                                    SparseGrad& item_g) {
    if (negatives.empty())
        throw std::invalid_argument("softmax_interaction_gradient: no negatives");
    static thread_local PairCache pc;
    compute_pair_scores(model, u, i, negatives, pc);

    double max_d = -std::numeric_limits<double>::infinity();
    for (const double s : pc.s) max_d = std::max(max_d, (s - pc.s_i) / tau_d);
    double z = 0.0;
    for (std::size_t idx = 0; idx < pc.s.size(); ++idx) {
        pc.c[idx] = std::exp((pc.s[idx] - pc.s_i) / tau_d - max_d);
        z += pc.c[idx];
    }
    const double l_sl = max_d + std::log(z);

    const double w = topk_weighting ? slk_weight(pc.s_i, beta, tau_w) : 1.0;
    // dLoss/ds_uj = w p_j / tau_d; dLoss/ds_ui = -w / tau_d plus, in the
    // weighted form, the derivative through w itself.
    for (auto& c : pc.c) c = w * (c / z) / tau_d;
    double coeff_i = -w / tau_d;
    if (topk_weighting) coeff_i += (1.0 / tau_w) * w * (1.0 - w) * l_sl;
    if (!std::isfinite(coeff_i) || !std::isfinite(l_sl))
        throw std::runtime_error("softmax_interaction_gradient: non-finite value");

    apply_pair_grads(model, u, i, negatives, pc, coeff_i, user_g, item_g);
    return w * l_sl;
}

double bpr_interaction_gradient(const EmbeddingModel& model, std::uint32_t u,
                                std::uint32_t i,
                                std::span<const std::uint32_t> negatives,
                                SparseGrad& user_g, SparseGrad& item_g) {
    if (negatives.empty())
        throw std::invalid_argument("bpr_interaction_gradient: no negatives");
    static thread_local PairCache pc;
    compute_pair_scores(model, u, i, negatives, pc);
    const double inv_n = 1.0 / static_cast<double>(negatives.size());
    double loss = 0.0;
    double coeff_i = 0.0;
    for (std::size_t idx = 0; idx < pc.s.size(); ++idx) {
        const double diff = pc.s[idx] - pc.s_i;
        loss += bpr_loss(pc.s_i, pc.s[idx]) * inv_n;
        const double cj = inv_n / (1.0 + std::exp(-diff));
        pc.c[idx] = cj;
        coeff_i -= cj;
    }
    apply_pair_grads(model, u, i, negatives, pc, coeff_i, user_g, item_g);
    return loss;
}

double lambda_interaction_gradient(const EmbeddingModel& model, std::uint32_t u,
                                   std::uint32_t i, double pi_i,
                                   std::span<const std::uint32_t> negatives,
                                   std::span<const double> pi_negatives,
                                   std::size_t k, SparseGrad& user_g,
                                   SparseGrad& item_g) {
    static thread_local PairCache pc;
    compute_pair_scores(model, u, i, negatives, pc);
    double loss = 0.0;
    double coeff_i = 0.0;
    for (std::size_t idx = 0; idx < pc.s.size(); ++idx) {
        if (pi_negatives[idx] == pi_i) continue;  // tied pair, weight undefined
        const double mu = lambda_weight(pi_i, pi_negatives[idx], k);
        const double diff = pc.s[idx] - pc.s_i;
        loss += mu * bpr_loss(pc.s_i, pc.s[idx]);
        const double cj = mu / (1.0 + std::exp(-diff));
        pc.c[idx] = cj;
        coeff_i -= cj;
    }
    apply_pair_grads(model, u, i, negatives, pc, coeff_i, user_g, item_g);
    return loss;
}

UserGradient slk_user_gradient(
    const EmbeddingModel& model, std::uint32_t u,
    std::span<const std::uint32_t> positives,
    const std::vector<std::vector<std::uint32_t>>& negatives_per_positive,
    double beta, const LossConfig& config) {
    config.validate();
    UserGradient out;
    SparseGrad user_g;
    user_g.init(model.d);
    out.items.init(model.d);
    for (std::size_t idx = 0; idx < positives.size(); ++idx) {
        out.loss += softmax_interaction_gradient(
            model, u, positives[idx], negatives_per_positive[idx], beta,
            config.tau_d, config.tau_w, /*topk_weighting=*/true, user_g,
            out.items);
    }
    out.items.compact();
    out.user.assign(model.d, 0.0);
    if (const double* g = user_g.find(u))
        out.user.assign(g, g + model.d);
    return out;
}

}  // namespace toprank
