#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "toprank/dataset.hpp"
#include "toprank/model.hpp"

namespace toprank {

// Items sorted by descending score, ties broken by ascending item id.
// Masked items never appear.
struct RankedList {
    std::uint32_t user = 0;
    std::vector<std::uint32_t> ordered_items;
    std::vector<double> scores;
};

struct EvalReport {
    std::vector<std::size_t> cutoffs;
    std::vector<double> mean_ndcg;    // per cutoff
    std::vector<double> mean_recall;  // per cutoff
    std::size_t evaluable_users = 0;
    // per_user_*[c][n] = value for the n-th evaluable user at cutoffs[c].
    std::vector<std::vector<double>> per_user_ndcg;
    std::vector<std::vector<double>> per_user_recall;
    std::vector<std::uint32_t> evaluated_users;

    std::string to_csv() const;
    std::string per_user_csv() const;
    std::string to_json() const;
};

// pi_ui = sum_j 1[s_uj >= s_ui]; tie-pessimistic, always >= 1.
std::size_t rank_position(std::span<const double> scores, std::uint32_t item);

double dcg_at_k(std::span<const std::size_t> positions, std::size_t k);
double idcg_at_k(std::size_t num_test_positives, std::size_t k);

RankedList build_ranked_list(std::uint32_t user, std::span<const double> scores,
                             const std::vector<std::uint32_t>& masked);

double ndcg_at_k(const RankedList& ranked,
                 const std::vector<std::uint32_t>& test_positives, std::size_t k);
double recall_at_k(const RankedList& ranked,
                   const std::vector<std::uint32_t>& test_positives, std::size_t k);

// H_u^K: number of positives scoring at or above beta.
std::size_t hits_at_k(std::span<const double> scores,
                      const std::vector<std::uint32_t>& positives, double beta);

enum class EvalTarget { Validation, Test };

// Scores all items per user, masks train positives (and validation positives
// for the test target), and averages metrics over users with nonempty target
// sets. Parallel over users; the reduction is order-independent.
EvalReport evaluate(const EmbeddingModel& model, const DatasetSplit& split,
                    EvalTarget target, const std::vector<std::size_t>& cutoffs,
                    std::size_t num_threads = 0);

}  // namespace toprank
