#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "toprank/metrics.hpp"
#include "toprank/quantile.hpp"
#include "toprank/rng.hpp"
#include "toprank/trainer.hpp"

using namespace toprank;
namespace fs = std::filesystem;

namespace {

// Synthetic planted-preference dataset: users belong to one of `groups`
// item blocks and interact mostly inside their block.
DatasetSplit planted_split(std::size_t users, std::size_t items,
                           std::size_t per_user, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 0x9147ULL);
    const std::size_t groups = 5;
    InteractionSet full;
    full.num_users = users;
    full.num_items = items;
    full.positives.assign(users, {});
    for (std::uint32_t u = 0; u < users; ++u) {
        const std::size_t g = u % groups;
        const std::size_t block = items / groups;
        std::set<std::uint32_t> chosen;
        while (chosen.size() < per_user) {
            std::uint32_t i;
            if (rng.next_below(10) < 8)
                i = static_cast<std::uint32_t>(g * block + rng.next_below(block));
            else
                i = static_cast<std::uint32_t>(rng.next_below(items));
            chosen.insert(i);
        }
        full.positives[u].assign(chosen.begin(), chosen.end());
    }
    full.recount();
    Vocab uv, iv;
    for (std::size_t u = 0; u < users; ++u) uv.intern("u" + std::to_string(u));
    for (std::size_t i = 0; i < items; ++i) iv.intern("i" + std::to_string(i));
    return split_dataset(full, uv, iv, 0.8, 0.1, seed);
}

TrainConfig small_config(LossVariant variant) {
    TrainConfig cfg;
    cfg.loss.variant = variant;
    cfg.loss.k = 5;
    cfg.loss.n = 10;
    cfg.loss.t_beta = 3;
    cfg.loss.tau_d = 0.2;
    cfg.loss.tau_w = 1.0;
    cfg.lr = 0.05;
    cfg.epochs = 4;
    cfg.batch_size = 64;
    cfg.seed = 42;
    cfg.d = 8;
    cfg.num_threads = 2;
    cfg.score_kind = ScoreKind::Cosine;
    return cfg;
}

}  // namespace

TEST_CASE("sample_negatives: forced draw, determinism, uniformity") {
    InteractionSet train;
    train.num_users = 1;
    train.num_items = 5;
    train.positives = {{0, 1, 2, 3}};
    train.recount();
    Rng rng = Rng::stream(1, 0ULL);
    for (const auto i : sample_negatives(train, 0, 20, rng)) CHECK(i == 4);

    InteractionSet wide;
    wide.num_users = 1;
    wide.num_items = 50;
    wide.positives = {{0, 10, 20}};
    wide.recount();
    Rng a = Rng::stream(9, 1ULL), b = Rng::stream(9, 1ULL);
    CHECK(sample_negatives(wide, 0, 100, a) == sample_negatives(wide, 0, 100, b));

    // Chi-square uniformity over the 47 negatives, 1e6 draws.
    Rng c = Rng::stream(5, 2ULL);
    std::vector<std::size_t> counts(50, 0);
    const std::size_t draws = 1000000;
    for (const auto i : sample_negatives(wide, 0, draws, c)) ++counts[i];
    CHECK(counts[0] == 0);
    CHECK(counts[10] == 0);
    CHECK(counts[20] == 0);
    const double expect = static_cast<double>(draws) / 47.0;
    const double sd = std::sqrt(expect * (1.0 - 1.0 / 47.0));
    for (std::uint32_t i = 0; i < 50; ++i) {
        if (i == 0 || i == 10 || i == 20) continue;
        CHECK(std::abs(static_cast<double>(counts[i]) - expect) < 4.0 * sd);
    }

    InteractionSet degenerate;
    degenerate.num_users = 1;
    degenerate.num_items = 2;
    degenerate.positives = {{0, 1}};
    degenerate.recount();
    Rng d = Rng::stream(1, 3ULL);
    CHECK_THROWS(sample_negatives(degenerate, 0, 1, d));
}

TEST_CASE("sample_negatives_distinct covers all negatives when n is large") {
    InteractionSet train;
    train.num_users = 1;
    train.num_items = 30;
    train.positives = {{3, 7}};
    train.recount();
    Rng rng = Rng::stream(2, 0ULL);
    auto all = sample_negatives_distinct(train, 0, 1000, rng);
    CHECK(all.size() == 28);
    auto some = sample_negatives_distinct(train, 0, 10, rng);
    CHECK(some.size() == 10);
    std::sort(some.begin(), some.end());
    CHECK(std::adjacent_find(some.begin(), some.end()) == some.end());
}

TEST_CASE("update_quantiles: dominant positive, full coverage, determinism") {
    const std::size_t users = 6, items = 40, d = 4;
    auto model = init_model(users, items, d, ScoreKind::Dot, 3);
    InteractionSet train;
    train.num_users = users;
    train.num_items = items;
    train.positives.assign(users, {});
    Rng rng = Rng::stream(3, 0ULL);
    for (std::uint32_t u = 0; u < users; ++u) {
        std::set<std::uint32_t> s;
        while (s.size() < 5) s.insert(static_cast<std::uint32_t>(rng.next_below(items)));
        train.positives[u].assign(s.begin(), s.end());
    }
    train.recount();

    // Make user 0's first positive dominate everything.
    const auto star = train.positives[0][0];
    for (std::size_t k = 0; k < d; ++k) {
        model.user_table[k] = 1.0;
        model.item_table[star * d + k] = 5.0;
    }
    QuantileState st;
    update_quantiles(model, train, st, 9999, 1, 7, 0, 2);
    CHECK(st.beta[0] == doctest::Approx(score(model, 0, star)));
    CHECK(st.last_update_epoch == 0);

    // Full coverage equals the exact quantile for every user.
    for (std::uint32_t u = 0; u < users; ++u) {
        std::vector<double> all;
        score_all_items(model, u, all);
        CHECK(st.beta[u] == exact_topk_quantile(all, 1));
    }
    QuantileState st5;
    update_quantiles(model, train, st5, 9999, 5, 7, 0, 1);
    for (std::uint32_t u = 0; u < users; ++u) {
        std::vector<double> all;
        score_all_items(model, u, all);
        CHECK(st5.beta[u] == exact_topk_quantile(all, 5));
    }

    QuantileState s1, s2;
    update_quantiles(model, train, s1, 10, 3, 11, 4, 1);
    update_quantiles(model, train, s2, 10, 3, 11, 4, 3);
    CHECK(s1.beta == s2.beta);
}

TEST_CASE("train with lr=0 leaves embeddings bit-identical") {
    const auto split = planted_split(20, 50, 8, 1);
    for (const auto variant :
         {LossVariant::SL, LossVariant::SLK, LossVariant::BPR,
          LossVariant::LambdaK, LossVariant::LambdaKS}) {
        auto cfg = small_config(variant);
        cfg.lr = 0.0;
        cfg.epochs = 2;
        const auto result = train(split, cfg);
        const auto fresh = init_model(split.train.num_users, split.train.num_items,
                                      cfg.d, cfg.score_kind, cfg.seed);
        CHECK(result.model.user_table == fresh.user_table);
        CHECK(result.model.item_table == fresh.item_table);
    }
}

TEST_CASE("training is deterministic end to end, across thread counts") {
    const auto split = planted_split(20, 50, 8, 2);
    auto cfg = small_config(LossVariant::SLK);
    const auto a = train(split, cfg);
    const auto b = train(split, cfg);
    CHECK(a.model.user_table == b.model.user_table);
    CHECK(a.model.item_table == b.model.item_table);
    REQUIRE(a.history.epochs.size() == b.history.epochs.size());
    for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
        CHECK(a.history.epochs[e].mean_loss == b.history.epochs[e].mean_loss);

    // Fixed-granularity chunking makes the reduction identical for any
    // thread count, so single-threaded training is bit-identical too.
    cfg.num_threads = 1;
    const auto c = train(split, cfg);
    CHECK(a.model.user_table == c.model.user_table);
    CHECK(a.model.item_table == c.model.item_table);
    for (std::size_t e = 0; e < a.history.epochs.size(); ++e)
        CHECK(a.history.epochs[e].mean_loss == c.history.epochs[e].mean_loss);
}

TEST_CASE("one optimizer step per batch and per-epoch history rows") {
    const auto split = planted_split(20, 50, 8, 3);
    auto cfg = small_config(LossVariant::SL);
    cfg.epochs = 3;
    cfg.batch_size = 50;
    const auto result = train(split, cfg);
    const auto total = split.train.total_interactions;
    const auto batches = (total + cfg.batch_size - 1) / cfg.batch_size;
    CHECK(result.optimizer.step_count ==
          static_cast<std::int64_t>(cfg.epochs * batches));
    CHECK(result.history.epochs.size() == cfg.epochs);
    for (const auto& e : result.history.epochs) CHECK(std::isfinite(e.mean_loss));
}

TEST_CASE("quantiles refresh on schedule and are zero before the first refresh") {
    const auto split = planted_split(20, 50, 8, 4);
    auto cfg = small_config(LossVariant::SLK);
    cfg.epochs = 7;
    cfg.loss.t_beta = 3;
    const auto result = train(split, cfg);
    // Epochs 3 and 6 refresh.
    std::vector<std::size_t> refreshed;
    for (const auto& e : result.history.epochs)
        if (e.quantile_refreshed) refreshed.push_back(e.epoch);
    CHECK(refreshed == std::vector<std::size_t>{3, 6});
    CHECK(result.quantiles.last_update_epoch == 6);

    // With t_beta > epochs the quantiles stay at their zero initialization.
    auto cfg2 = small_config(LossVariant::SLK);
    cfg2.epochs = 2;
    cfg2.loss.t_beta = 10;
    const auto r2 = train(split, cfg2);
    for (const auto b : r2.quantiles.beta) CHECK(b == 0.0);
}

TEST_CASE("checkpoint round trip and bit-identical resume") {
    const auto split = planted_split(20, 50, 8, 5);
    auto cfg = small_config(LossVariant::SLK);
    cfg.epochs = 6;
    const auto full = train(split, cfg);

    // Train 3 epochs, checkpoint, reload, continue to 6.
    TrainResult part;
    part.model = init_model(split.train.num_users, split.train.num_items, cfg.d,
                            cfg.score_kind, cfg.seed);
    part.optimizer = AdamState::create(part.model, cfg.lr, cfg.weight_decay);
    part.quantiles.beta.assign(split.train.num_users, 0.0);
    train_epochs(split, cfg, part.model, part.optimizer, part.quantiles,
                 part.history, 0, 3);

    const auto path =
        (fs::temp_directory_path() / "toprank_test_ckpt.bin").string();
    Checkpoint out;
    out.model = part.model;
    out.optimizer = part.optimizer;
    out.quantiles = part.quantiles;
    out.epoch = 3;
    out.seed = cfg.seed;
    save_checkpoint(out, path);
    auto in = load_checkpoint(path);
    CHECK(in.model.user_table == part.model.user_table);
    CHECK(in.optimizer.user_m == part.optimizer.user_m);
    CHECK(in.quantiles.beta == part.quantiles.beta);
    CHECK(in.epoch == 3);

    TrainHistory rest;
    train_epochs(split, cfg, in.model, in.optimizer, in.quantiles, rest,
                 in.epoch, cfg.epochs);
    CHECK(in.model.user_table == full.model.user_table);
    CHECK(in.model.item_table == full.model.item_table);
    CHECK(in.optimizer.user_v == full.optimizer.user_v);

    // Size accounting: 2 tables + 4 moment tables + beta + metadata.
    const auto bytes = fs::file_size(path);
    const std::size_t doubles = 3 * (20 + 50) * cfg.d + 20;
    CHECK(bytes > doubles * 8);
    CHECK(bytes < doubles * 8 + 4096);
    fs::remove(path);
}

TEST_CASE("truncated checkpoints raise explicit corruption errors") {
    const auto split = planted_split(10, 30, 5, 6);
    auto cfg = small_config(LossVariant::SL);
    cfg.epochs = 1;
    const auto r = train(split, cfg);
    const auto dir = fs::temp_directory_path();
    const auto path = (dir / "toprank_test_trunc.bin").string();
    Checkpoint out;
    out.model = r.model;
    out.optimizer = r.optimizer;
    out.quantiles = r.quantiles;
    out.epoch = 1;
    out.seed = cfg.seed;
    save_checkpoint(out, path);

    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    const auto cut = (dir / "toprank_test_cut.bin").string();
    std::ofstream outf(cut, std::ios::binary);
    outf.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    outf.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("corrupt"),
                         std::runtime_error);

    const auto garbage = (dir / "toprank_test_magic.bin").string();
    std::ofstream g(garbage, std::ios::binary);
    g << "not a checkpoint at all";
    g.close();
    CHECK_THROWS(load_checkpoint(garbage));
    fs::remove(path);
    fs::remove(cut);
    fs::remove(garbage);
}

TEST_CASE("SL@K training beats the untrained model on planted preferences") {
    // 20 seeds at desk scale; every loss variant must improve NDCG@20
    // versus its own epoch-0 evaluation in at least 19 of 20 seeds.
    std::size_t improved = 0;
    const std::size_t seeds = 20;
    for (std::size_t s = 0; s < seeds; ++s) {
        const auto split = planted_split(50, 100, 12, 100 + s);
        auto cfg = small_config(LossVariant::SLK);
        cfg.loss.k = 20;
        cfg.loss.n = 20;
        cfg.epochs = 30;
        cfg.seed = 1000 + s;
        const auto before = evaluate(
            init_model(split.train.num_users, split.train.num_items, cfg.d,
                       cfg.score_kind, cfg.seed),
            split, EvalTarget::Test, {20}, 2);
        const auto result = train(split, cfg);
        const auto after =
            evaluate(result.model, split, EvalTarget::Test, {20}, 2);
        if (after.mean_ndcg[0] > before.mean_ndcg[0]) ++improved;
    }
    CHECK(improved >= seeds - 1);
}

TEST_CASE("history CSV has one row per epoch") {
    const auto split = planted_split(10, 30, 8, 7);
    REQUIRE(split.validation.total_interactions > 0);
    auto cfg = small_config(LossVariant::BPR);
    cfg.epochs = 3;
    cfg.eval_every = 2;
    const auto r = train(split, cfg);
    const auto csv = r.history.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
    REQUIRE(r.history.evals.size() == 1);
    CHECK(r.history.evals[0].first == 2);
}
