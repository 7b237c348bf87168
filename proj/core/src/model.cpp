#include "toprank/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "toprank/rng.hpp"

namespace toprank {

ScoreKind score_kind_from_string(const std::string& s) {
    if (s == "dot") return ScoreKind::Dot;
    if (s == "cosine") return ScoreKind::Cosine;
    throw std::invalid_argument("unknown score kind: " + s);
}

std::string to_string(ScoreKind kind) {
    return kind == ScoreKind::Dot ? "dot" : "cosine";
}

EmbeddingModel init_model(std::size_t num_users, std::size_t num_items,
                          std::size_t d, ScoreKind kind, std::uint64_t seed) {
    if (num_users == 0 || num_items == 0 || d == 0)
        throw std::invalid_argument("init_model: counts and dimension must be positive");
    EmbeddingModel model;
    model.num_users = num_users;
    model.num_items = num_items;
    model.d = d;
    model.score_kind = kind;
    model.user_table.resize(num_users * d);
    model.item_table.resize(num_items * d);
    Rng rng = Rng::stream(seed, 0x1417ULL);
    constexpr double kInitStd = 0.1;
    for (auto& x : model.user_table) x = kInitStd * rng.next_gaussian();
    for (auto& x : model.item_table) x = kInitStd * rng.next_gaussian();
    return model;
}

namespace {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

double score(const EmbeddingModel& model, std::uint32_t u, std::uint32_t i) {
    const auto uu = model.user_row(u);
    const auto vv = model.item_row(i);
    const double uv = dot(uu, vv);
    if (model.score_kind == ScoreKind::Dot) return uv;
    return uv / (norm(uu) * norm(vv) + 1e-12);
}

void score_all_items(const EmbeddingModel& model, std::uint32_t u,
                     std::vector<double>& out) {
    out.resize(model.num_items);
    const auto uu = model.user_row(u);
    if (model.score_kind == ScoreKind::Dot) {
        for (std::uint32_t i = 0; i < model.num_items; ++i)
            out[i] = dot(uu, model.item_row(i));
    } else {
        const double un = norm(uu);
        for (std::uint32_t i = 0; i < model.num_items; ++i) {
            const auto vv = model.item_row(i);
            out[i] = dot(uu, vv) / (un * norm(vv) + 1e-12);
        }
    }
}

void SparseGrad::add(std::uint32_t row, std::span<const double> g) {
    if (row >= index_.size()) index_.resize(row + 1, -1);
    if (index_[row] < 0) {
        index_[row] = static_cast<std::int64_t>(rows.size());
        rows.push_back(row);
        values.emplace_back(g.begin(), g.end());
        return;
    }
    auto& v = values[static_cast<std::size_t>(index_[row])];
    for (std::size_t k = 0; k < d; ++k) v[k] += g[k];
}

double* SparseGrad::find(std::uint32_t row) {
    if (row >= index_.size() || index_[row] < 0) return nullptr;
    return values[static_cast<std::size_t>(index_[row])].data();
}

void SparseGrad::compact() {
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return rows[a] < rows[b]; });
    std::vector<std::uint32_t> new_rows;
    std::vector<std::vector<double>> new_values;
    new_rows.reserve(rows.size());
    new_values.reserve(values.size());
    for (const std::size_t idx : order) {
        new_rows.push_back(rows[idx]);
        new_values.push_back(std::move(values[idx]));
    }
    rows = std::move(new_rows);
    values = std::move(new_values);
    for (std::size_t i = 0; i < rows.size(); ++i) index_[rows[i]] = static_cast<std::int64_t>(i);
}

void SparseGrad::clear() {
    for (const auto row : rows) index_[row] = -1;
    rows.clear();
    values.clear();
}

AdamState AdamState::create(const EmbeddingModel& model, double lr,
                            double weight_decay) {
    AdamState state;
    state.lr = lr;
    state.weight_decay = weight_decay;
    state.user_m.assign(model.user_table.size(), 0.0);
    state.user_v.assign(model.user_table.size(), 0.0);
    state.item_m.assign(model.item_table.size(), 0.0);
    state.item_v.assign(model.item_table.size(), 0.0);
    return state;
}

namespace {

void adam_apply(std::vector<double>& params, std::vector<double>& m,
                std::vector<double>& v, const SparseGrad& grads, std::size_t d,
                const AdamState& s, double bc1, double bc2) {
    for (std::size_t idx = 0; idx < grads.rows.size(); ++idx) {
        const std::size_t base = static_cast<std::size_t>(grads.rows[idx]) * d;
        const auto& g = grads.values[idx];
        for (std::size_t k = 0; k < d; ++k) {
            if (!std::isfinite(g[k]))
                throw std::runtime_error("adam_step: non-finite gradient at row " +
                                         std::to_string(grads.rows[idx]));
            const double gk = g[k] + s.weight_decay * params[base + k];
            m[base + k] = s.beta1 * m[base + k] + (1.0 - s.beta1) * gk;
            v[base + k] = s.beta2 * v[base + k] + (1.0 - s.beta2) * gk * gk;
            const double mh = m[base + k] / bc1;
            const double vh = v[base + k] / bc2;
            params[base + k] -= s.lr * mh / (std::sqrt(vh) + s.eps);
        }
    }
}

}  // namespace

void adam_step(EmbeddingModel& model, SparseGrad& user_grads,
               SparseGrad& item_grads, AdamState& state) {
    ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    user_grads.compact();
    item_grads.compact();
    adam_apply(model.user_table, state.user_m, state.user_v, user_grads, model.d,
               state, bc1, bc2);
    adam_apply(model.item_table, state.item_m, state.item_v, item_grads, model.d,
               state, bc1, bc2);
}

}  // namespace toprank
