// toprank command-line front end: dataset preparation, training from spec
// files, checkpoint evaluation, gradient diagnostics, and loss benchmarks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "toprank/config.hpp"
#include "toprank/dataset.hpp"
#include "toprank/losses.hpp"
#include "toprank/metrics.hpp"
#include "toprank/model.hpp"
#include "toprank/quantile.hpp"
#include "toprank/rng.hpp"
#include "toprank/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace toprank;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

DatasetSplit load_split(const std::string& dir) {
    const fs::path base(dir);
    DatasetSplit split;
    split.user_vocab = load_vocab((base / "users.vocab").string());
    split.item_vocab = load_vocab((base / "items.vocab").string());
    split.train = load_split_file((base / "train.tsv").string(),
                                  split.user_vocab, split.item_vocab);
    split.validation = load_split_file((base / "validation.tsv").string(),
                                       split.user_vocab, split.item_vocab);
    split.test = load_split_file((base / "test.tsv").string(), split.user_vocab,
                                 split.item_vocab);
    return split;
}

json split_manifest(const DatasetSplit& split) {
    const std::size_t total = split.train.total_interactions +
                              split.validation.total_interactions +
                              split.test.total_interactions;
    const double denom = static_cast<double>(split.train.num_users) *
                         static_cast<double>(split.train.num_items);
    json m;
    m["users"] = split.train.num_users;
    m["items"] = split.train.num_items;
    m["interactions"] = total;
    m["train_interactions"] = split.train.total_interactions;
    m["validation_interactions"] = split.validation.total_interactions;
    m["test_interactions"] = split.test.total_interactions;
    m["density"] = denom > 0 ? static_cast<double>(total) / denom : 0.0;
    return m;
}

std::string eval_target_csv(const EvalReport& report) { return report.to_csv(); }

void write_report(const fs::path& dir, const EvalReport& report,
                  const std::string& stem) {
    write_file(dir / (stem + ".csv"), eval_target_csv(report));
    write_file(dir / (stem + ".json"), report.to_json());
    write_file(dir / (stem + "_per_user.csv"), report.per_user_csv());
}

// ---------------------------------------------------------------- prepare --

int cmd_prepare(const std::string& input, const std::string& format_name,
                const std::string& out_dir, std::size_t kcore,
                double rating_threshold, double train_frac, double val_frac,
                std::uint64_t seed) {
    if (fs::exists(out_dir)) {
        std::cerr << "error: output directory exists: " << out_dir << "\n";
        return 1;
    }
    FileFormat format;
    if (format_name == "tsv") format = FileFormat::Tsv;
    else if (format_name == "csv") format = FileFormat::Csv;
    else {
        std::cerr << "error: unknown format '" << format_name << "'\n";
        return 1;
    }
    const RawInteractions raw = load_interactions(input, format);
    Vocab users, items;
    const InteractionSet full =
        kcore_filter(raw, kcore, rating_threshold, &users, &items);
    const DatasetSplit split =
        split_dataset(full, users, items, train_frac, val_frac, seed);

    fs::create_directories(out_dir);
    const fs::path base(out_dir);
    save_vocab(split.user_vocab, (base / "users.vocab").string());
    save_vocab(split.item_vocab, (base / "items.vocab").string());
    save_interactions(split.train, split.user_vocab, split.item_vocab,
                      (base / "train.tsv").string());
    save_interactions(split.validation, split.user_vocab, split.item_vocab,
                      (base / "validation.tsv").string());
    save_interactions(split.test, split.user_vocab, split.item_vocab,
                      (base / "test.tsv").string());

    json manifest = split_manifest(split);
    manifest["kcore"] = kcore;
    manifest["rating_threshold"] = rating_threshold;
    manifest["train_frac"] = train_frac;
    manifest["val_frac_of_train"] = val_frac;
    manifest["seed"] = seed;
    write_file(base / "manifest.json", manifest.dump(2) + "\n");
    std::ostringstream csv;
    csv << "users,items,interactions,density\n"
        << manifest["users"] << ',' << manifest["items"] << ','
        << manifest["interactions"] << ',' << manifest["density"] << '\n';
    write_file(base / "manifest.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

// ------------------------------------------------------------------ train --

int run_one(const ExperimentSpec& spec, const fs::path& run_dir,
            json* index_row) {
    if (fs::exists(run_dir)) {
        std::cerr << "error: run directory exists: " << run_dir << "\n";
        return 1;
    }
    DatasetSplit split = load_split(spec.split_dir);
    NoiseReport noise;
    if (spec.noise_ratio > 0.0)
        split.train = inject_false_positives(split.train, spec.noise_ratio,
                                             spec.train.seed, &noise);

    fs::create_directories(run_dir);
    write_file(run_dir / "spec.resolved.ini", resolved_spec_text(spec));
    json manifest = split_manifest(split);
    manifest["noise_ratio"] = spec.noise_ratio;
    manifest["noise_added"] = noise.added;
    write_file(run_dir / "manifest.json", manifest.dump(2) + "\n");

    const TrainResult result = train(split, spec.train);
    write_file(run_dir / "history.csv", result.history.to_csv());

    Checkpoint ckpt;
    ckpt.model = result.model;
    ckpt.optimizer = result.optimizer;
    ckpt.quantiles = result.quantiles;
    ckpt.epoch = spec.train.epochs;
    ckpt.seed = spec.train.seed;
    save_checkpoint(ckpt, (run_dir / "checkpoint.bin").string());

    const EvalReport report =
        evaluate(result.model, split, EvalTarget::Test, spec.train.eval_cutoffs,
                 spec.train.num_threads);
    write_report(run_dir, report, "report");
    std::cout << eval_target_csv(report);

    if (index_row) {
        (*index_row)["run_dir"] = run_dir.string();
        for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
            (*index_row)["ndcg@" + std::to_string(report.cutoffs[c])] =
                report.mean_ndcg[c];
            (*index_row)["recall@" + std::to_string(report.cutoffs[c])] =
                report.mean_recall[c];
        }
    }
    return 0;
}

int cmd_train(const std::string& spec_path, const std::string& out_override,
              std::int64_t seed_override, std::int64_t threads_override) {
    KeyValues keys = load_spec_keys(spec_path);
    apply_env_overrides(keys);
    if (!out_override.empty()) keys["output.dir"] = out_override;
    if (seed_override >= 0) keys["train.seed"] = std::to_string(seed_override);
    if (threads_override >= 0)
        keys["train.threads"] = std::to_string(threads_override);

    if (!is_grid(keys)) {
        const ExperimentSpec spec = spec_from_keys(keys);
        if (spec.out_dir.empty()) {
            std::cerr << "error: spec field 'output.dir' is required\n";
            return 1;
        }
        return run_one(spec, fs::path(spec.out_dir), nullptr);
    }

    const auto combos = expand_grid(keys);
    const std::string base_dir = keys.count("output.dir") ? keys.at("output.dir")
                                                          : std::string();
    if (base_dir.empty()) {
        std::cerr << "error: spec field 'output.dir' is required\n";
        return 1;
    }
    std::vector<json> rows;
    for (const auto& combo : combos) {
        std::string label = grid_label(keys, combo);
        ExperimentSpec spec = spec_from_keys(combo);
        std::string dir_name = label;
        std::replace(dir_name.begin(), dir_name.end(), ',', '_');
        spec.out_dir = (fs::path(base_dir) / dir_name).string();
        json row;
        row["label"] = label;
        const int rc = run_one(spec, fs::path(spec.out_dir), &row);
        if (rc != 0) return rc;
        rows.push_back(std::move(row));
    }
    // Index CSV over the grid, one row per combination.
    std::vector<std::string> cols{"label", "run_dir"};
    for (const auto& [key, value] : rows.front().items())
        if (key != "label" && key != "run_dir") cols.push_back(key);
    std::ostringstream csv;
    for (std::size_t c = 0; c < cols.size(); ++c) csv << (c ? "," : "") << cols[c];
    csv << '\n';
    csv.precision(10);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (c) csv << ',';
            const auto& v = row.at(cols[c]);
            if (v.is_string()) csv << v.get<std::string>();
            else csv << v.get<double>();
        }
        csv << '\n';
    }
    write_file(fs::path(base_dir) / "index.csv", csv.str());
    std::cout << csv.str();
    return 0;
}

// ------------------------------------------------------------------- eval --

int cmd_eval(const std::string& ckpt_path, const std::string& split_dir,
             const std::vector<std::size_t>& cutoffs, const std::string& target,
             const std::string& out_dir, std::size_t threads) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const DatasetSplit split = load_split(split_dir);
    EvalTarget tgt;
    if (target == "test") tgt = EvalTarget::Test;
    else if (target == "validation") tgt = EvalTarget::Validation;
    else {
        std::cerr << "error: unknown eval target '" << target << "'\n";
        return 1;
    }
    const EvalReport report = evaluate(ckpt.model, split, tgt, cutoffs, threads);
    std::cout << eval_target_csv(report);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_report(fs::path(out_dir), report, "report");
    }
    return 0;
}

// ------------------------------------------------------------ grad-report --

std::vector<double> full_positions(const EmbeddingModel& model, std::uint32_t u) {
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

double top_share(std::vector<double> norms, double fraction) {
    std::sort(norms.begin(), norms.end(), std::greater<double>());
    const double total = std::accumulate(norms.begin(), norms.end(), 0.0);
    if (total <= 0.0) return 0.0;
    const std::size_t m = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::ceil(fraction * static_cast<double>(norms.size()))));
    return std::accumulate(norms.begin(), norms.begin() + static_cast<long>(m),
                           0.0) /
           total;
}

int cmd_grad_report(const std::string& ckpt_path, const std::string& split_dir,
                    const std::vector<std::string>& loss_names,
                    std::size_t samples, std::size_t k, std::size_t n,
                    double tau_d, double tau_w, std::uint64_t seed,
                    const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const DatasetSplit split = load_split(split_dir);
    const InteractionSet& train_set = split.train;

    std::vector<std::pair<std::uint32_t, std::uint32_t>> interactions;
    for (std::uint32_t u = 0; u < train_set.num_users; ++u)
        for (const auto i : train_set.positives[u]) interactions.emplace_back(u, i);
    if (interactions.empty()) {
        std::cerr << "error: empty train split\n";
        return 1;
    }
    // One shared sampled batch: same interactions and same negative draws
    // for every loss, so the distributions are directly comparable.
    Rng pick = Rng::stream(seed, 0x9badULL);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> batch;
    for (std::size_t s = 0; s < samples; ++s)
        batch.push_back(interactions[pick.next_below(interactions.size())]);

    QuantileState quantiles;
    const bool need_beta =
        std::find(loss_names.begin(), loss_names.end(), "SL@K") !=
        loss_names.end();
    if (need_beta) {
        if (ckpt.quantiles.beta.size() == train_set.num_users &&
            ckpt.quantiles.last_update_epoch >= 0) {
            quantiles = ckpt.quantiles;
        } else {
            update_quantiles(ckpt.model, train_set, quantiles, n, k, seed, 0, 0);
        }
    }

    std::ostringstream detail;
    detail.precision(10);
    detail << "loss,sample,user,item,grad_norm\n";
    json summary = json::array();
    std::ostringstream summary_csv;
    summary_csv.precision(10);
    summary_csv << "loss,samples,top5_share\n";

    for (const auto& name : loss_names) {
        const LossVariant variant = loss_variant_from_string(name);
        std::vector<double> norms;
        SparseGrad user_g, item_g;
        user_g.init(ckpt.model.d);
        item_g.init(ckpt.model.d);
        std::vector<double> pi_negs;
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const auto [u, i] = batch[s];
            Rng rng = Rng::stream(seed, 0x4e9ULL, 0, s);
            const auto negs = sample_negatives(train_set, u, n, rng);
            user_g.clear();
            item_g.clear();
            switch (variant) {
                case LossVariant::SL:
                case LossVariant::SLK: {
                    const bool weighted = variant == LossVariant::SLK;
                    const double beta = weighted ? quantiles.beta[u] : 0.0;
                    softmax_interaction_gradient(ckpt.model, u, i, negs, beta,
                                                 tau_d, tau_w, weighted, user_g,
                                                 item_g);
                    break;
                }
                case LossVariant::BPR:
                    bpr_interaction_gradient(ckpt.model, u, i, negs, user_g,
                                             item_g);
                    break;
                case LossVariant::LambdaK: {
                    const auto pos = full_positions(ckpt.model, u);
                    pi_negs.resize(negs.size());
                    for (std::size_t x = 0; x < negs.size(); ++x)
                        pi_negs[x] = pos[negs[x]];
                    lambda_interaction_gradient(ckpt.model, u, i, pos[i], negs,
                                                pi_negs, k, user_g, item_g);
                    break;
                }
                case LossVariant::LambdaKS: {
                    // Sample ranks over P_u + negatives, rescaled.
                    std::vector<std::pair<double, std::uint32_t>> pool;
                    for (const auto p : train_set.positives[u])
                        pool.emplace_back(score(ckpt.model, u, p), p);
                    const std::size_t off = pool.size();
                    for (const auto j : negs)
                        pool.emplace_back(score(ckpt.model, u, j), j);
                    std::vector<std::uint32_t> order(pool.size());
                    std::iota(order.begin(), order.end(), 0u);
                    std::sort(order.begin(), order.end(),
                              [&](std::uint32_t a, std::uint32_t b) {
                                  if (pool[a].first != pool[b].first)
                                      return pool[a].first > pool[b].first;
                                  return pool[a].second < pool[b].second;
                              });
                    std::vector<std::size_t> rank(pool.size());
                    for (std::size_t r = 0; r < order.size(); ++r)
                        rank[order[r]] = r + 1;
                    double pi_i = 0.0;
                    for (std::size_t x = 0; x < off; ++x)
                        if (train_set.positives[u][x] == i)
                            pi_i = rescale_sampled_rank(
                                rank[x], ckpt.model.num_items, pool.size());
                    pi_negs.resize(negs.size());
                    for (std::size_t x = 0; x < negs.size(); ++x)
                        pi_negs[x] = rescale_sampled_rank(
                            rank[off + x], ckpt.model.num_items, pool.size());
                    lambda_interaction_gradient(ckpt.model, u, i, pi_i, negs,
                                                pi_negs, k, user_g, item_g);
                    break;
                }
            }
            // Per-interaction contribution to the user-row gradient norm.
            user_g.compact();
            double norm2 = 0.0;
            for (std::size_t row = 0; row < user_g.rows.size(); ++row)
                if (user_g.rows[row] == u)
                    for (const double g : user_g.values[row]) norm2 += g * g;
            const double norm = std::sqrt(norm2);
            norms.push_back(norm);
            detail << name << ',' << s << ',' << u << ',' << i << ',' << norm
                   << '\n';
        }
        const double share = top_share(norms, 0.05);
        summary_csv << name << ',' << norms.size() << ',' << share << '\n';
        summary.push_back({{"loss", name},
                           {"samples", norms.size()},
                           {"top5_share", share}});
    }
    std::cout << summary_csv.str();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(fs::path(out_dir) / "grad_magnitudes.csv", detail.str());
        write_file(fs::path(out_dir) / "grad_summary.csv", summary_csv.str());
        write_file(fs::path(out_dir) / "grad_summary.json",
                   summary.dump(2) + "\n");
    }
    return 0;
}

// ------------------------------------------------------------------ bench --

int cmd_bench(const std::string& split_dir,
              const std::vector<std::string>& loss_names, std::size_t reps,
              std::size_t epochs, std::size_t batch_size, std::size_t k,
              std::size_t n, std::uint64_t seed, std::size_t threads,
              const std::string& out_dir) {
    const DatasetSplit split = load_split(split_dir);
    std::ostringstream csv;
    csv.precision(10);
    csv << "loss,reps,median_seconds_per_epoch,mean_loss\n";
    json summary = json::array();
    for (const auto& name : loss_names) {
        TrainConfig cfg;
        cfg.loss.variant = loss_variant_from_string(name);
        cfg.loss.k = k;
        cfg.loss.n = n;
        cfg.loss.t_beta = 1;  // refresh every epoch so SL@K timing includes it
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        cfg.num_threads = threads;
        std::vector<double> per_epoch;
        double mean_loss = 0.0;
        for (std::size_t rep = 0; rep < reps; ++rep) {
            const TrainResult result = train(split, cfg);
            double secs = 0.0;
            for (const auto& e : result.history.epochs) secs += e.seconds;
            per_epoch.push_back(secs / static_cast<double>(epochs));
            if (rep == 0) mean_loss = result.history.epochs.back().mean_loss;
        }
        std::sort(per_epoch.begin(), per_epoch.end());
        const double median =
            per_epoch.size() % 2 == 1
                ? per_epoch[per_epoch.size() / 2]
                : 0.5 * (per_epoch[per_epoch.size() / 2 - 1] +
                         per_epoch[per_epoch.size() / 2]);
        csv << name << ',' << reps << ',' << median << ',' << mean_loss << '\n';
        summary.push_back({{"loss", name},
                           {"reps", reps},
                           {"median_seconds_per_epoch", median},
                           {"mean_loss", mean_loss}});
    }
    std::cout << csv.str();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(fs::path(out_dir) / "bench.csv", csv.str());
        write_file(fs::path(out_dir) / "bench.json", summary.dump(2) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Top-K ranking loss training and evaluation engine"};
    app.require_subcommand(1);

    // prepare
    auto* prep = app.add_subcommand("prepare", "Preprocess a raw interaction dump");
    std::string prep_input, prep_format = "tsv", prep_out;
    std::size_t prep_kcore = 10;
    double prep_threshold = 3.0, prep_train_frac = 0.8, prep_val_frac = 0.1;
    std::uint64_t prep_seed = 42;
    prep->add_option("--input", prep_input, "Raw interaction file")->required();
    prep->add_option("--format", prep_format, "tsv or csv");
    prep->add_option("--out", prep_out, "Output split directory")->required();
    prep->add_option("--kcore", prep_kcore, "k-core threshold");
    prep->add_option("--rating-threshold", prep_threshold,
                     "Keep records with rating >= threshold");
    prep->add_option("--train-frac", prep_train_frac, "Train fraction per user");
    prep->add_option("--val-frac", prep_val_frac,
                     "Validation fraction of the train part");
    prep->add_option("--seed", prep_seed, "Split seed");

    // train
    auto* tr = app.add_subcommand("train", "Run an experiment from a spec file");
    std::string tr_spec, tr_out;
    std::int64_t tr_seed = -1, tr_threads = -1;
    tr->add_option("--spec", tr_spec, "Spec file path")->required();
    tr->add_option("--out", tr_out, "Override output directory");
    tr->add_option("--seed", tr_seed, "Override train.seed");
    tr->add_option("--threads", tr_threads, "Override train.threads");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_split, ev_target = "test", ev_out;
    std::vector<std::size_t> ev_cutoffs{20};
    std::size_t ev_threads = 0;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
    ev->add_option("--split", ev_split, "Prepared split directory")->required();
    ev->add_option("--cutoffs", ev_cutoffs, "Evaluation cutoffs")->delimiter(',');
    ev->add_option("--target", ev_target, "test or validation");
    ev->add_option("--out", ev_out, "Report output directory");
    ev->add_option("--threads", ev_threads, "Worker threads (0 = auto)");

    // grad-report
    auto* gr = app.add_subcommand("grad-report",
                                  "Per-interaction gradient magnitudes");
    std::string gr_ckpt, gr_split, gr_out;
    std::vector<std::string> gr_losses{"SL@K", "LambdaLoss@K"};
    std::size_t gr_samples = 1024, gr_k = 20, gr_n = 200;
    double gr_tau_d = 0.2, gr_tau_w = 1.0;
    std::uint64_t gr_seed = 42;
    gr->add_option("--checkpoint", gr_ckpt, "Checkpoint path")->required();
    gr->add_option("--split", gr_split, "Prepared split directory")->required();
    gr->add_option("--losses", gr_losses, "Loss variants")->delimiter(',');
    gr->add_option("--samples", gr_samples, "Sampled interactions");
    gr->add_option("--k", gr_k, "Top-K cutoff");
    gr->add_option("--n", gr_n, "Negatives per interaction");
    gr->add_option("--tau-d", gr_tau_d, "Softmax temperature");
    gr->add_option("--tau-w", gr_tau_w, "Weight temperature");
    gr->add_option("--seed", gr_seed, "Sampling seed");
    gr->add_option("--out", gr_out, "Report output directory");

    // bench
    auto* be = app.add_subcommand("bench", "Per-loss seconds-per-epoch timing");
    std::string be_split, be_out;
    std::vector<std::string> be_losses{"SL", "SL@K", "LambdaLoss@K"};
    std::size_t be_reps = 3, be_epochs = 1, be_batch = 1024, be_k = 20,
                be_n = 200, be_threads = 0;
    std::uint64_t be_seed = 42;
    be->add_option("--split", be_split, "Prepared split directory")->required();
    be->add_option("--losses", be_losses, "Loss variants")->delimiter(',');
    be->add_option("--reps", be_reps, "Repetitions");
    be->add_option("--epochs", be_epochs, "Epochs per repetition");
    be->add_option("--batch-size", be_batch, "Batch size");
    be->add_option("--k", be_k, "Top-K cutoff");
    be->add_option("--n", be_n, "Negatives per interaction");
    be->add_option("--seed", be_seed, "Seed (pins the batch schedule)");
    be->add_option("--threads", be_threads, "Worker threads (0 = auto)");
    be->add_option("--out", be_out, "Report output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed())
            return cmd_prepare(prep_input, prep_format, prep_out, prep_kcore,
                               prep_threshold, prep_train_frac, prep_val_frac,
                               prep_seed);
        if (tr->parsed()) return cmd_train(tr_spec, tr_out, tr_seed, tr_threads);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_split, ev_cutoffs, ev_target, ev_out,
                            ev_threads);
        if (gr->parsed())
            return cmd_grad_report(gr_ckpt, gr_split, gr_losses, gr_samples,
                                   gr_k, gr_n, gr_tau_d, gr_tau_w, gr_seed,
                                   gr_out);
        if (be->parsed())
            return cmd_bench(be_split, be_losses, be_reps, be_epochs, be_batch,
                             be_k, be_n, be_seed, be_threads, be_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
