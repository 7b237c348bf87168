#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace toprank {

struct RawRecord {
    std::string user_key;
    std::string item_key;
    std::optional<double> rating;
    std::optional<std::int64_t> timestamp;
};

struct RawInteractions {
    std::vector<RawRecord> records;
};

enum class FileFormat { Tsv, Csv };

// Per-user positive-item lists over a contiguous id space.
// Lists are strictly ascending (duplicates collapse to one interaction).
struct InteractionSet {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    std::vector<std::vector<std::uint32_t>> positives;
    std::size_t total_interactions = 0;

    bool is_positive(std::uint32_t user, std::uint32_t item) const;
    void recount();
};

struct Vocab {
    std::vector<std::string> id_to_key;
    std::unordered_map<std::string, std::uint32_t> key_to_id;

    std::uint32_t intern(const std::string& key);
};

struct DatasetSplit {
    InteractionSet train;
    InteractionSet validation;
    InteractionSet test;
    Vocab user_vocab;
    Vocab item_vocab;
};

RawInteractions load_interactions(const std::string& path, FileFormat format);

// Drops records with rating < rating_threshold (records without ratings are
// kept), then iteratively removes users/items with < k interactions until a
// fixed point. Ids are assigned in first-appearance order of survivors.
// Throws std::runtime_error if nothing survives.
InteractionSet kcore_filter(const RawInteractions& raw, std::size_t k,
                            double rating_threshold, Vocab* user_vocab,
                            Vocab* item_vocab);

// Per-user seeded shuffle + partition; rounding toward train.
DatasetSplit split_dataset(const InteractionSet& full, const Vocab& user_vocab,
                           const Vocab& item_vocab, double train_frac,
                           double val_frac_of_train, std::uint64_t seed);

struct NoiseReport {
    std::size_t added = 0;
    std::size_t shortfall_users = 0;
};

// Flips ceil(r * |P_u|) uniformly sampled negatives to positives per user.
InteractionSet inject_false_positives(const InteractionSet& train, double ratio,
                                      std::uint64_t seed,
                                      NoiseReport* report = nullptr);

void save_interactions(const InteractionSet& set, const Vocab& user_vocab,
                       const Vocab& item_vocab, const std::string& path);
void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);
InteractionSet load_split_file(const std::string& path, const Vocab& user_vocab,
                               const Vocab& item_vocab);

}  // namespace toprank
