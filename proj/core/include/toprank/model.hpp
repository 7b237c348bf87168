#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace toprank {

enum class ScoreKind { Dot, Cosine };

ScoreKind score_kind_from_string(const std::string& s);
std::string to_string(ScoreKind kind);

// Matrix factorization backbone: user and item embedding tables, row-major.
struct EmbeddingModel {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::size_t d = 0;
    ScoreKind score_kind = ScoreKind::Dot;
    std::vector<double> user_table;  // num_users x d
    std::vector<double> item_table;  // num_items x d

    std::span<const double> user_row(std::uint32_t u) const {
        return {user_table.data() + static_cast<std::size_t>(u) * d, d};
    }
    std::span<const double> item_row(std::uint32_t i) const {
        return {item_table.data() + static_cast<std::size_t>(i) * d, d};
    }
    std::span<double> user_row(std::uint32_t u) {
        return {user_table.data() + static_cast<std::size_t>(u) * d, d};
    }
    std::span<double> item_row(std::uint32_t i) {
        return {item_table.data() + static_cast<std::size_t>(i) * d, d};
    }
};

// Entries ~ N(0, 0.1^2), deterministic per seed.
EmbeddingModel init_model(std::size_t num_users, std::size_t num_items,
                          std::size_t d, ScoreKind kind, std::uint64_t seed);

double score(const EmbeddingModel& model, std::uint32_t u, std::uint32_t i);

// Scores every item for one user into `out` (size num_items).
void score_all_items(const EmbeddingModel& model, std::uint32_t u,
                     std::vector<double>& out);

// Sparse per-row gradient accumulator for one table.
struct SparseGrad {
    std::size_t d = 0;
    std::vector<std::uint32_t> rows;          // sorted, unique after compact()
    std::vector<std::vector<double>> values;  // parallel to rows

    void init(std::size_t dim) { d = dim; }
    // Adds `g` into the gradient of `row` (creates the row on first touch).
    void add(std::uint32_t row, std::span<const double> g);
    double* find(std::uint32_t row);
    void compact();  // sort rows, merge duplicates
    void clear();

private:
    std::vector<std::int64_t> index_;  // row -> position, lazily sized
};

struct AdamState {
    double lr = 0.001;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step_count = 0;
    std::vector<double> user_m, user_v;  // congruent to user_table
    std::vector<double> item_m, item_v;  // congruent to item_table

    static AdamState create(const EmbeddingModel& model, double lr,
                            double weight_decay);
};

// Bias-corrected sparse Adam over the touched rows of both tables.
// Weight decay is coupled L2 (added to the gradient of touched rows).
// Increments step_count once per call.
void adam_step(EmbeddingModel& model, SparseGrad& user_grads,
               SparseGrad& item_grads, AdamState& state);

}  // namespace toprank
