#include "toprank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace toprank {

std::size_t rank_position(std::span<const double> scores, std::uint32_t item) {
    const double s = scores[item];
    std::size_t pi = 0;
    for (const double sj : scores)
        if (sj >= s) ++pi;
    return pi;
}

double dcg_at_k(std::span<const std::size_t> positions, std::size_t k) {
    double dcg = 0.0;
    for (const std::size_t pi : positions)
        if (pi <= k) dcg += 1.0 / std::log2(static_cast<double>(pi) + 1.0);
    return dcg;
}

double idcg_at_k(std::size_t num_test_positives, std::size_t k) {
    if (num_test_positives < 1)
        throw std::invalid_argument("idcg_at_k: need at least one positive");
    const std::size_t top = std::min(num_test_positives, k);
    double idcg = 0.0;
    for (std::size_t r = 1; r <= top; ++r)
        idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    return idcg;
}

RankedList build_ranked_list(std::uint32_t user, std::span<const double> scores,
                             const std::vector<std::uint32_t>& masked) {
    RankedList list;
    list.user = user;
    list.ordered_items.reserve(scores.size());
    for (std::uint32_t i = 0; i < scores.size(); ++i)
        if (!std::binary_search(masked.begin(), masked.end(), i))
            list.ordered_items.push_back(i);
    std::sort(list.ordered_items.begin(), list.ordered_items.end(),
              [&](std::uint32_t a, std::uint32_t b) {
                  if (scores[a] != scores[b]) return scores[a] > scores[b];
                  return a < b;
              });
    list.scores.reserve(list.ordered_items.size());
    for (const auto i : list.ordered_items) list.scores.push_back(scores[i]);
    return list;
}

namespace {

// Positions (1-based) of the test positives within the ranked list.
std::vector<std::size_t> positive_positions(
    const RankedList& ranked, const std::vector<std::uint32_t>& test_positives) {
    std::vector<std::size_t> positions;
    positions.reserve(test_positives.size());
    for (std::size_t idx = 0; idx < ranked.ordered_items.size(); ++idx)
        if (std::binary_search(test_positives.begin(), test_positives.end(),
                               ranked.ordered_items[idx]))
            positions.push_back(idx + 1);
    return positions;
}

}  // namespace

double ndcg_at_k(const RankedList& ranked,
                 const std::vector<std::uint32_t>& test_positives,
                 std::size_t k) {
    if (test_positives.empty())
        throw std::invalid_argument("ndcg_at_k: empty test set");
    const auto positions = positive_positions(ranked, test_positives);
    return dcg_at_k(positions, k) / idcg_at_k(test_positives.size(), k);
}

double recall_at_k(const RankedList& ranked,
                   const std::vector<std::uint32_t>& test_positives,
                   std::size_t k) {
    if (test_positives.empty())
        throw std::invalid_argument("recall_at_k: empty test set");
    const std::size_t top = std::min(k, ranked.ordered_items.size());
    std::size_t hits = 0;
    for (std::size_t idx = 0; idx < top; ++idx)
        if (std::binary_search(test_positives.begin(), test_positives.end(),
                               ranked.ordered_items[idx]))
            ++hits;
    return static_cast<double>(hits) / static_cast<double>(test_positives.size());
}

std::size_t hits_at_k(std::span<const double> scores,
                      const std::vector<std::uint32_t>& positives, double beta) {
    std::size_t h = 0;
    for (const auto i : positives)
        if (scores[i] >= beta) ++h;
    return h;
}

namespace {

double kahan_mean(const std::vector<double>& xs) {
    double sum = 0.0, c = 0.0;
    for (const double x : xs) {
        const double y = x - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

}  // namespace

EvalReport evaluate(const EmbeddingModel& model, const DatasetSplit& split,
                    EvalTarget target, const std::vector<std::size_t>& cutoffs,
                    std::size_t num_threads) {
    if (model.num_users != split.train.num_users ||
        model.num_items != split.train.num_items)
        throw std::invalid_argument("evaluate: model/split shape mismatch");
    const InteractionSet& targets =
        target == EvalTarget::Test ? split.test : split.validation;

    std::vector<std::uint32_t> users;
    for (std::uint32_t u = 0; u < model.num_users; ++u)
        if (!targets.positives[u].empty()) users.push_back(u);

    const std::size_t n_cut = cutoffs.size();
    std::vector<std::vector<double>> ndcg(n_cut, std::vector<double>(users.size()));
    std::vector<std::vector<double>> recall(n_cut, std::vector<double>(users.size()));

    auto eval_range = [&](std::size_t begin, std::size_t end) {
        std::vector<double> scores;
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::uint32_t u = users[idx];
            score_all_items(model, u, scores);
            std::vector<std::uint32_t> masked = split.train.positives[u];
            if (target == EvalTarget::Test && !split.validation.positives[u].empty()) {
                masked.insert(masked.end(), split.validation.positives[u].begin(),
                              split.validation.positives[u].end());
                std::sort(masked.begin(), masked.end());
            }
            const RankedList ranked = build_ranked_list(u, scores, masked);
            for (std::size_t c = 0; c < n_cut; ++c) {
                ndcg[c][idx] = ndcg_at_k(ranked, targets.positives[u], cutoffs[c]);
                recall[c][idx] = recall_at_k(ranked, targets.positives[u], cutoffs[c]);
            }
        }
    };

    std::size_t threads = num_threads;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(1, users.size()));
    if (threads <= 1) {
        eval_range(0, users.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (users.size() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(users.size(), begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(eval_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    EvalReport report;
    report.cutoffs = cutoffs;
    report.evaluable_users = users.size();
    report.evaluated_users = users;
    report.per_user_ndcg = std::move(ndcg);
    report.per_user_recall = std::move(recall);
    for (std::size_t c = 0; c < n_cut; ++c) {
        report.mean_ndcg.push_back(kahan_mean(report.per_user_ndcg[c]));
        report.mean_recall.push_back(kahan_mean(report.per_user_recall[c]));
    }
    return report;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "cutoff,metric,value\n";
    out.precision(10);
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        out << cutoffs[c] << ",ndcg," << mean_ndcg[c] << '\n';
        out << cutoffs[c] << ",recall," << mean_recall[c] << '\n';
    }
    return out.str();
}

std::string EvalReport::per_user_csv() const {
    std::ostringstream out;
    out << "user,cutoff,ndcg,recall\n";
    out.precision(10);
    for (std::size_t c = 0; c < cutoffs.size(); ++c)
        for (std::size_t n = 0; n < evaluated_users.size(); ++n)
            out << evaluated_users[n] << ',' << cutoffs[c] << ','
                << per_user_ndcg[c][n] << ',' << per_user_recall[c][n] << '\n';
    return out.str();
}

std::string EvalReport::to_json() const {
    std::ostringstream out;
    out.precision(10);
    out << "{\"evaluable_users\":" << evaluable_users << ",\"metrics\":[";
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        if (c) out << ',';
        out << "{\"cutoff\":" << cutoffs[c] << ",\"ndcg\":" << mean_ndcg[c]
            << ",\"recall\":" << mean_recall[c] << '}';
    }
    out << "]}";
    return out.str();
}

}  // namespace toprank
