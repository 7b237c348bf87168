#include "toprank/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_set>
#include <unordered_map>

namespace toprank {

void TrainConfig::validate() const {
    loss.validate();
    if (epochs < 1 || batch_size < 1)
        throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
    if (d < 1) throw std::invalid_argument("TrainConfig: d must be >= 1");
}

std::string TrainHistory::to_csv() const {
    std::ostringstream out;
    out << "epoch,mean_loss,seconds,quantile_refreshed\n";
    out.precision(10);
    for (const auto& e : epochs)
        out << e.epoch << ',' << e.mean_loss << ',' << e.seconds << ','
            << (e.quantile_refreshed ? 1 : 0) << '\n';
    return out.str();
}

std::vector<std::uint32_t> sample_negatives(const InteractionSet& train,
                                            std::uint32_t user, std::size_t n,
                                            Rng& rng) {
    const auto& pos = train.positives[user];
    if (pos.size() >= train.num_items)
        throw std::runtime_error("sample_negatives: user " + std::to_string(user) +
                                 " has no negative items");
    std::vector<std::uint32_t> out;
    out.reserve(n);
    while (out.size() < n) {
        const auto i = static_cast<std::uint32_t>(rng.next_below(train.num_items));
        if (!std::binary_search(pos.begin(), pos.end(), i)) out.push_back(i);
    }
    return out;
}

std::vector<std::uint32_t> sample_negatives_distinct(const InteractionSet& train,
                                                     std::uint32_t user,
                                                     std::size_t n, Rng& rng) {
    const auto& pos = train.positives[user];
    if (pos.size() >= train.num_items)
        throw std::runtime_error("sample_negatives_distinct: user " +
                                 std::to_string(user) + " has no negative items");
    const std::size_t available = train.num_items - pos.size();
    std::vector<std::uint32_t> out;
    if (n >= available) {
        out.reserve(available);
        for (std::uint32_t i = 0; i < train.num_items; ++i)
            if (!std::binary_search(pos.begin(), pos.end(), i)) out.push_back(i);
        return out;
    }
    std::unordered_set<std::uint32_t> seen;
    out.reserve(n);
    while (out.size() < n) {
        const auto i = static_cast<std::uint32_t>(rng.next_below(train.num_items));
        if (std::binary_search(pos.begin(), pos.end(), i)) continue;
        if (seen.insert(i).second) out.push_back(i);
    }
    return out;
}

void update_quantiles(const EmbeddingModel& model, const InteractionSet& train,
                      QuantileState& state, std::size_t n, std::size_t k,
                      std::uint64_t seed, std::int64_t epoch,
                      std::size_t num_threads) {
    if (state.beta.size() != train.num_users) state.beta.assign(train.num_users, 0.0);
    std::size_t threads = num_threads;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());

    auto refresh_range = [&](std::uint32_t begin, std::uint32_t end) {
        std::vector<double> pos_scores, neg_scores;
        for (std::uint32_t u = begin; u < end; ++u) {
            const auto& pos = train.positives[u];
            if (pos.empty()) continue;
            Rng rng = Rng::stream(seed, 0xbe7aULL, static_cast<std::uint64_t>(epoch), u);
            const auto negs = sample_negatives_distinct(train, u, n, rng);
            pos_scores.clear();
            neg_scores.clear();
            for (const auto i : pos) pos_scores.push_back(score(model, u, i));
            for (const auto j : negs) neg_scores.push_back(score(model, u, j));
            state.beta[u] = mc_topk_quantile(pos_scores, neg_scores, k);
        }
    };

    const auto n_users = static_cast<std::uint32_t>(train.num_users);
    if (threads <= 1 || n_users < 2 * threads) {
        refresh_range(0, n_users);
    } else {
        std::vector<std::thread> pool;
        const std::uint32_t chunk = (n_users + static_cast<std::uint32_t>(threads) - 1) /
                                    static_cast<std::uint32_t>(threads);
        for (std::uint32_t begin = 0; begin < n_users; begin += chunk)
            pool.emplace_back(refresh_range, begin, std::min(n_users, begin + chunk));
        for (auto& th : pool) th.join();
    }
    state.k = k;
    state.sample_size = n;
    state.last_update_epoch = epoch;
}

namespace {

// 1-based descending-sort positions (ascending-id ties) for all items.
std::vector<double> full_rank_positions(const EmbeddingModel& model,
                                        std::uint32_t u) {
    std::vector<double> scores;
    score_all_items(model, u, scores);
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

// Sample ranking positions over the pool P_u + negatives, rescaled to the
// full item space.
void estimated_rank_positions(const EmbeddingModel& model, std::uint32_t u,
                              const std::vector<std::uint32_t>& positives,
                              std::span<const std::uint32_t> negatives,
                              std::uint32_t item, double* pi_item,
                              std::vector<double>& pi_negs) {
    std::vector<std::pair<double, std::uint32_t>> pool;
    pool.reserve(positives.size() + negatives.size());
    for (const auto p : positives) pool.emplace_back(score(model, u, p), p);
    const std::size_t neg_offset = pool.size();
    for (const auto j : negatives) pool.emplace_back(score(model, u, j), j);

    std::vector<std::uint32_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (pool[a].first != pool[b].first) return pool[a].first > pool[b].first;
        return pool[a].second < pool[b].second;
    });
    std::vector<std::size_t> sample_rank(pool.size());
    for (std::size_t r = 0; r < order.size(); ++r) sample_rank[order[r]] = r + 1;

    pi_negs.resize(negatives.size());
    for (std::size_t idx = 0; idx < negatives.size(); ++idx)
        pi_negs[idx] = rescale_sampled_rank(sample_rank[neg_offset + idx],
                                            model.num_items, pool.size());
    *pi_item = 0.0;
    for (std::size_t idx = 0; idx < positives.size(); ++idx)
        if (positives[idx] == item)
            *pi_item = rescale_sampled_rank(sample_rank[idx], model.num_items,
                                            pool.size());
}

struct ChunkResult {
    SparseGrad user_g;
    SparseGrad item_g;
    double loss = 0.0;
};

}  // namespace

void train_epochs(const DatasetSplit& split, const TrainConfig& config,
                  EmbeddingModel& model, AdamState& optimizer,
                  QuantileState& quantiles, TrainHistory& history,
                  std::size_t start_epoch, std::size_t end_epoch) {
    config.validate();
    const InteractionSet& train_set = split.train;
    const LossConfig& loss = config.loss;

    std::vector<std::pair<std::uint32_t, std::uint32_t>> interactions;
    interactions.reserve(train_set.total_interactions);
    for (std::uint32_t u = 0; u < train_set.num_users; ++u)
        for (const auto i : train_set.positives[u]) interactions.emplace_back(u, i);
    if (interactions.empty()) throw std::invalid_argument("train: empty train set");

    std::size_t threads = config.num_threads;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());

    SparseGrad user_grads, item_grads;
    user_grads.init(model.d);
    item_grads.init(model.d);

    for (std::size_t epoch = start_epoch + 1; epoch <= end_epoch; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        bool refreshed = false;
        if (loss.variant == LossVariant::SLK && epoch % loss.t_beta == 0) {
            update_quantiles(model, train_set, quantiles, loss.n, loss.k,
                             config.seed, static_cast<std::int64_t>(epoch), threads);
            refreshed = true;
        }

        // Epoch-local permutation of the interaction list.
        std::vector<std::uint32_t> order(interactions.size());
        std::iota(order.begin(), order.end(), 0u);
        Rng shuffle_rng = Rng::stream(config.seed, 0x5bafULL, epoch);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t batch_begin = 0; batch_begin < order.size();
             batch_begin += config.batch_size) {
            const std::size_t batch_end =
                std::min(order.size(), batch_begin + config.batch_size);

            // Exact lambda ranks are computed per distinct user per batch.
            std::unordered_map<std::uint32_t, std::vector<double>> ranks;
            if (loss.variant == LossVariant::LambdaK) {
                std::vector<std::uint32_t> batch_users;
                for (std::size_t idx = batch_begin; idx < batch_end; ++idx)
                    batch_users.push_back(interactions[order[idx]].first);
                std::sort(batch_users.begin(), batch_users.end());
                batch_users.erase(
                    std::unique(batch_users.begin(), batch_users.end()),
                    batch_users.end());
                for (const auto u : batch_users) ranks.emplace(u, std::vector<double>{});
                std::atomic<std::size_t> next{0};
                auto rank_worker = [&]() {
                    while (true) {
                        const std::size_t idx = next.fetch_add(1);
                        if (idx >= batch_users.size()) break;
                        ranks[batch_users[idx]] =
                            full_rank_positions(model, batch_users[idx]);
                    }
                };
                std::vector<std::thread> pool;
                for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(rank_worker);
                rank_worker();
                for (auto& th : pool) th.join();
            }

            auto process_range = [&](std::size_t begin, std::size_t end,
                                     ChunkResult& result) {
                result.user_g.init(model.d);
                result.item_g.init(model.d);
                std::vector<double> pi_negs;
                for (std::size_t idx = begin; idx < end; ++idx) {
                    const auto [u, i] = interactions[order[idx]];
                    Rng rng = Rng::stream(config.seed, 0x4e9ULL, epoch, idx);
                    const auto negs = sample_negatives(train_set, u, loss.n, rng);
                    double contribution = 0.0;
                    switch (loss.variant) {
                        case LossVariant::SL:
                        case LossVariant::SLK: {
                            const bool weighted = loss.variant == LossVariant::SLK;
                            const double beta = weighted ? quantiles.beta[u] : 0.0;
                            contribution = softmax_interaction_gradient(
                                model, u, i, negs, beta, loss.tau_d, loss.tau_w,
                                weighted, result.user_g, result.item_g);
                            break;
                        }
                        case LossVariant::BPR:
                            contribution = bpr_interaction_gradient(
                                model, u, i, negs, result.user_g, result.item_g);
                            break;
                        case LossVariant::LambdaK: {
                            const auto& pos = ranks.at(u);
                            pi_negs.resize(negs.size());
                            for (std::size_t nidx = 0; nidx < negs.size(); ++nidx)
                                pi_negs[nidx] = pos[negs[nidx]];
                            contribution = lambda_interaction_gradient(
                                model, u, i, pos[i], negs, pi_negs, loss.k,
                                result.user_g, result.item_g);
                            break;
                        }
                        case LossVariant::LambdaKS: {
                            double pi_i = 0.0;
                            estimated_rank_positions(model, u,
                                                     train_set.positives[u], negs,
                                                     i, &pi_i, pi_negs);
                            contribution = lambda_interaction_gradient(
                                model, u, i, pi_i, negs, pi_negs, loss.k,
                                result.user_g, result.item_g);
                            break;
                        }
                    }
                    if (!std::isfinite(contribution))
                        throw std::runtime_error(
                            "train: non-finite loss at epoch " +
                            std::to_string(epoch) + ", interaction index " +
                            std::to_string(idx));
                    result.loss += contribution;
                }
            };

            // Fixed chunk granularity keeps the reduction tree identical for
            // every thread count, so results are bit-reproducible.
            const std::size_t batch_n = batch_end - batch_begin;
            constexpr std::size_t kChunk = 64;
            const std::size_t n_chunks = (batch_n + kChunk - 1) / kChunk;
            std::vector<ChunkResult> chunks(n_chunks);
            const auto run_chunk = [&](std::size_t c) {
                const std::size_t b = batch_begin + c * kChunk;
                process_range(b, std::min(batch_end, b + kChunk), chunks[c]);
            };
            if (threads <= 1 || n_chunks == 1) {
                for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
            } else {
                std::atomic<std::size_t> next{0};
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < std::min(threads, n_chunks); ++t)
                    pool.emplace_back([&] {
                        for (std::size_t c = next.fetch_add(1); c < n_chunks;
                             c = next.fetch_add(1))
                            run_chunk(c);
                    });
                for (auto& th : pool) th.join();
            }

            // Deterministic merge in chunk order.
            user_grads.clear();
            item_grads.clear();
            for (auto& c : chunks) {
                c.user_g.compact();
                c.item_g.compact();
                for (std::size_t idx = 0; idx < c.user_g.rows.size(); ++idx)
                    user_grads.add(c.user_g.rows[idx], c.user_g.values[idx]);
                for (std::size_t idx = 0; idx < c.item_g.rows.size(); ++idx)
                    item_grads.add(c.item_g.rows[idx], c.item_g.values[idx]);
                epoch_loss += c.loss;
            }
            adam_step(model, user_grads, item_grads, optimizer);
        }

        const auto t1 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = epoch_loss / static_cast<double>(interactions.size());
        rec.seconds = std::chrono::duration<double>(t1 - t0).count();
        rec.quantile_refreshed = refreshed;
        history.epochs.push_back(rec);

        if (config.eval_every > 0 && epoch % config.eval_every == 0 &&
            split.validation.total_interactions > 0) {
            history.evals.emplace_back(
                epoch, evaluate(model, split, EvalTarget::Validation,
                                config.eval_cutoffs, threads));
        }
    }
}

TrainResult train(const DatasetSplit& split, const TrainConfig& config) {
    config.validate();
    TrainResult result;
    result.model = init_model(split.train.num_users, split.train.num_items,
                              config.d, config.score_kind, config.seed);
    result.optimizer =
        AdamState::create(result.model, config.lr, config.weight_decay);
    result.quantiles.beta.assign(split.train.num_users, 0.0);
    result.quantiles.k = config.loss.k;
    result.quantiles.sample_size = config.loss.n;
    train_epochs(split, config, result.model, result.optimizer, result.quantiles,
                 result.history, 0, config.epochs);
    return result;
}

namespace {

constexpr char kMagic[8] = {'T', 'O', 'P', 'R', 'A', 'N', 'K', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& value, const std::string& path) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw std::runtime_error("corrupt checkpoint (truncated): " + path);
}

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    const std::uint64_t n = v.size();
    write_pod(out, n);
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v,
                  const std::string& path) {
    std::uint64_t n = 0;
    read_pod(in, n, path);
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("corrupt checkpoint (truncated): " + path);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, static_cast<std::uint64_t>(ckpt.model.num_users));
    write_pod(out, static_cast<std::uint64_t>(ckpt.model.num_items));
    write_pod(out, static_cast<std::uint64_t>(ckpt.model.d));
    write_pod(out, static_cast<std::uint32_t>(ckpt.model.score_kind));
    write_pod(out, static_cast<std::uint64_t>(ckpt.epoch));
    write_pod(out, ckpt.seed);
    write_pod(out, ckpt.optimizer.lr);
    write_pod(out, ckpt.optimizer.weight_decay);
    write_pod(out, ckpt.optimizer.beta1);
    write_pod(out, ckpt.optimizer.beta2);
    write_pod(out, ckpt.optimizer.eps);
    write_pod(out, ckpt.optimizer.step_count);
    write_pod(out, static_cast<std::uint64_t>(ckpt.quantiles.k));
    write_pod(out, static_cast<std::uint64_t>(ckpt.quantiles.sample_size));
    write_pod(out, ckpt.quantiles.last_update_epoch);
    write_doubles(out, ckpt.model.user_table);
    write_doubles(out, ckpt.model.item_table);
    write_doubles(out, ckpt.optimizer.user_m);
    write_doubles(out, ckpt.optimizer.user_v);
    write_doubles(out, ckpt.optimizer.item_m);
    write_doubles(out, ckpt.optimizer.item_v);
    write_doubles(out, ckpt.quantiles.beta);
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file (bad magic): " + path);
    Checkpoint ckpt;
    std::uint64_t num_users, num_items, d, epoch, qk, qn;
    std::uint32_t kind;
    read_pod(in, num_users, path);
    read_pod(in, num_items, path);
    read_pod(in, d, path);
    read_pod(in, kind, path);
    read_pod(in, epoch, path);
    read_pod(in, ckpt.seed, path);
    read_pod(in, ckpt.optimizer.lr, path);
    read_pod(in, ckpt.optimizer.weight_decay, path);
    read_pod(in, ckpt.optimizer.beta1, path);
    read_pod(in, ckpt.optimizer.beta2, path);
    read_pod(in, ckpt.optimizer.eps, path);
    read_pod(in, ckpt.optimizer.step_count, path);
    read_pod(in, qk, path);
    read_pod(in, qn, path);
    read_pod(in, ckpt.quantiles.last_update_epoch, path);
    if (kind > 1) throw std::runtime_error("corrupt checkpoint (score kind): " + path);
    ckpt.model.num_users = num_users;
    ckpt.model.num_items = num_items;
    ckpt.model.d = d;
    ckpt.model.score_kind = static_cast<ScoreKind>(kind);
    ckpt.epoch = epoch;
    ckpt.quantiles.k = qk;
    ckpt.quantiles.sample_size = qn;
    read_doubles(in, ckpt.model.user_table, path);
    read_doubles(in, ckpt.model.item_table, path);
    read_doubles(in, ckpt.optimizer.user_m, path);
    read_doubles(in, ckpt.optimizer.user_v, path);
    read_doubles(in, ckpt.optimizer.item_m, path);
    read_doubles(in, ckpt.optimizer.item_v, path);
    read_doubles(in, ckpt.quantiles.beta, path);
    if (ckpt.model.user_table.size() != num_users * d ||
        ckpt.model.item_table.size() != num_items * d ||
        ckpt.quantiles.beta.size() != num_users)
        throw std::runtime_error("corrupt checkpoint (shape mismatch): " + path);
    return ckpt;
}

}  // namespace toprank
