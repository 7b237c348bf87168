#include "toprank/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "toprank/rng.hpp"

namespace toprank {

bool InteractionSet::is_positive(std::uint32_t user, std::uint32_t item) const {
    const auto& list = positives[user];
    return std::binary_search(list.begin(), list.end(), item);
}

void InteractionSet::recount() {
    total_interactions = 0;
    for (const auto& list : positives) total_interactions += list.size();
}

std::uint32_t Vocab::intern(const std::string& key) {
    auto it = key_to_id.find(key);
    if (it != key_to_id.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(id_to_key.size());
    id_to_key.push_back(key);
    key_to_id.emplace(key, id);
    return id;
}

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(delim, start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

}  // namespace

RawInteractions load_interactions(const std::string& path, FileFormat format) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open interaction file: " + path);
    const char delim = format == FileFormat::Tsv ? '\t' : ',';

    RawInteractions raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_fields(line, delim);
        if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": expected at least user and item fields");
        }
        RawRecord rec;
        rec.user_key = fields[0];
        rec.item_key = fields[1];
        if (fields.size() >= 3 && !fields[2].empty()) {
            try {
                rec.rating = std::stod(fields[2]);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": bad rating field '" + fields[2] + "'");
            }
            if (!std::isfinite(*rec.rating)) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": non-finite rating");
            }
        }
        if (fields.size() >= 4 && !fields[3].empty()) {
            try {
                rec.timestamp = static_cast<std::int64_t>(std::stoll(fields[3]));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                         ": bad timestamp field '" + fields[3] + "'");
            }
        }
        raw.records.push_back(std::move(rec));
    }
    return raw;
}

InteractionSet kcore_filter(const RawInteractions& raw, std::size_t k,
                            double rating_threshold, Vocab* user_vocab,
                            Vocab* item_vocab) {
    if (k < 1) throw std::invalid_argument("kcore_filter: k must be >= 1");

    // Collapse duplicates on raw keys; threshold applies only when a rating
    // is present.
    std::vector<std::pair<std::string, std::string>> kept;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& rec : raw.records) {
        if (rec.rating && *rec.rating < rating_threshold) continue;
        auto pair = std::make_pair(rec.user_key, rec.item_key);
        if (seen.insert(pair).second) kept.push_back(std::move(pair));
    }

    // Iterative degree pruning until fixed point.
    std::unordered_map<std::string, std::size_t> udeg, ideg;
    std::vector<bool> alive(kept.size(), true);
    for (const auto& [u, i] : kept) {
        ++udeg[u];
        ++ideg[i];
    }
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t idx = 0; idx < kept.size(); ++idx) {
            if (!alive[idx]) continue;
            const auto& [u, i] = kept[idx];
            if (udeg[u] < k || ideg[i] < k) {
                alive[idx] = false;
                --udeg[u];
                --ideg[i];
                changed = true;
            }
        }
    }

    Vocab users, items;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    for (std::size_t idx = 0; idx < kept.size(); ++idx) {
        if (!alive[idx]) continue;
        edges.emplace_back(users.intern(kept[idx].first),
                           items.intern(kept[idx].second));
    }
    if (edges.empty()) {
        throw std::runtime_error(
            "kcore_filter: no interactions survive k-core filtering (k=" +
            std::to_string(k) + ")");
    }

    InteractionSet out;
    out.num_users = users.id_to_key.size();
    out.num_items = items.id_to_key.size();
    out.positives.resize(out.num_users);
    for (const auto& [u, i] : edges) out.positives[u].push_back(i);
    for (auto& list : out.positives) std::sort(list.begin(), list.end());
    out.recount();

    if (user_vocab) *user_vocab = std::move(users);
    if (item_vocab) *item_vocab = std::move(items);
    return out;
}

DatasetSplit split_dataset(const InteractionSet& full, const Vocab& user_vocab,
                           const Vocab& item_vocab, double train_frac,
                           double val_frac_of_train, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("split_dataset: train_frac must be in (0,1)");
    if (!(val_frac_of_train >= 0.0 && val_frac_of_train < 1.0))
        throw std::invalid_argument(
            "split_dataset: val_frac_of_train must be in [0,1)");

    DatasetSplit split;
    split.user_vocab = user_vocab;
    split.item_vocab = item_vocab;
    for (InteractionSet* s : {&split.train, &split.validation, &split.test}) {
        s->num_users = full.num_users;
        s->num_items = full.num_items;
        s->positives.resize(full.num_users);
    }

    for (std::uint32_t u = 0; u < full.num_users; ++u) {
        std::vector<std::uint32_t> items = full.positives[u];
        Rng rng = Rng::stream(seed, 0x5eedULL, u);
        // Fisher-Yates shuffle.
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = rng.next_below(i);
            std::swap(items[i - 1], items[j]);
        }
        const std::size_t n = items.size();
        // Test rounds down (the remainder stays on the training side),
        // validation takes the nearest count of its share of the remaining
        // training portion, and train keeps the rest but never empties.
        // The 1e-9 slack keeps values like (1-0.8)*10 = 1.9999... from
        // flooring one below the intended count.
        const std::size_t n_test = static_cast<std::size_t>(
            static_cast<double>(n) * (1.0 - train_frac) + 1e-9);
        std::size_t n_val = static_cast<std::size_t>(
            static_cast<double>(n - n_test) * val_frac_of_train + 0.5);
        if (n_val + n_test >= n && n > n_test) n_val = n - n_test - 1;
        const std::size_t n_train = n - n_test - n_val;
        split.train.positives[u].assign(items.begin(), items.begin() + n_train);
        split.validation.positives[u].assign(items.begin() + n_train,
                                             items.begin() + n_train + n_val);
        split.test.positives[u].assign(items.begin() + n_train + n_val,
                                       items.end());
    }
    for (InteractionSet* s : {&split.train, &split.validation, &split.test}) {
        for (auto& list : s->positives) std::sort(list.begin(), list.end());
        s->recount();
    }
    return split;
}

InteractionSet inject_false_positives(const InteractionSet& train, double ratio,
                                      std::uint64_t seed, NoiseReport* report) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw std::invalid_argument("inject_false_positives: ratio must be in [0,1]");
    InteractionSet out = train;
    NoiseReport rep;
    if (ratio == 0.0) {
        if (report) *report = rep;
        return out;
    }
    for (std::uint32_t u = 0; u < train.num_users; ++u) {
        const auto& pos = train.positives[u];
        const std::size_t want = static_cast<std::size_t>(
            std::ceil(ratio * static_cast<double>(pos.size())));
        if (want == 0) continue;
        const std::size_t num_neg = train.num_items - pos.size();
        const std::size_t take = std::min(want, num_neg);
        if (take < want) ++rep.shortfall_users;

        Rng rng = Rng::stream(seed, 0x4015eULL, u);
        std::set<std::uint32_t> added;
        if (take == num_neg) {
            // Degenerate user: flip every negative.
            for (std::uint32_t i = 0; i < train.num_items; ++i)
                if (!train.is_positive(u, i)) added.insert(i);
        } else {
            while (added.size() < take) {
                const auto i =
                    static_cast<std::uint32_t>(rng.next_below(train.num_items));
                if (!train.is_positive(u, i)) added.insert(i);
            }
        }
        auto& list = out.positives[u];
        list.insert(list.end(), added.begin(), added.end());
        std::sort(list.begin(), list.end());
        rep.added += added.size();
    }
    out.recount();
    if (report) *report = rep;
    return out;
}

void save_interactions(const InteractionSet& set, const Vocab& user_vocab,
                       const Vocab& item_vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::uint32_t u = 0; u < set.num_users; ++u)
        for (const auto i : set.positives[u])
            out << user_vocab.id_to_key[u] << '\t' << item_vocab.id_to_key[i]
                << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t id = 0; id < vocab.id_to_key.size(); ++id)
        out << vocab.id_to_key[id] << '\t' << id << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path);
    Vocab vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": expected key<TAB>id");
        const std::string key = line.substr(0, tab);
        const auto id = static_cast<std::uint32_t>(std::stoul(line.substr(tab + 1)));
        if (id != vocab.id_to_key.size())
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": ids must be contiguous from 0");
        vocab.intern(key);
    }
    return vocab;
}

InteractionSet load_split_file(const std::string& path, const Vocab& user_vocab,
                               const Vocab& item_vocab) {
    RawInteractions raw = load_interactions(path, FileFormat::Tsv);
    InteractionSet set;
    set.num_users = user_vocab.id_to_key.size();
    set.num_items = item_vocab.id_to_key.size();
    set.positives.resize(set.num_users);
    for (const auto& rec : raw.records) {
        const auto uit = user_vocab.key_to_id.find(rec.user_key);
        const auto iit = item_vocab.key_to_id.find(rec.item_key);
        if (uit == user_vocab.key_to_id.end() || iit == item_vocab.key_to_id.end())
            throw std::runtime_error(path + ": key not present in vocabulary: " +
                                     rec.user_key + "/" + rec.item_key);
        set.positives[uit->second].push_back(iit->second);
    }
    for (auto& list : set.positives) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    set.recount();
    return set;
}

}  // namespace toprank
