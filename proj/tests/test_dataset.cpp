#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "toprank/dataset.hpp"
#include "toprank/rng.hpp"

using namespace toprank;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
    const fs::path p = fs::temp_directory_path() / ("toprank_test_" + name);
    std::ofstream out(p);
    out << content;
    return p;
}

RawInteractions make_raw(
    const std::vector<std::tuple<std::string, std::string, double>>& recs) {
    RawInteractions raw;
    for (const auto& [u, i, r] : recs)
        raw.records.push_back({u, i, r, std::nullopt});
    return raw;
}

// Independent iterative-pruning oracle: recompute degrees from scratch each
// pass over the surviving (user,item) pair set until nothing changes.
std::set<std::pair<std::string, std::string>> kcore_oracle(
    std::set<std::pair<std::string, std::string>> pairs, std::size_t k) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<std::string, std::size_t> udeg, ideg;
        for (const auto& [u, i] : pairs) {
            ++udeg[u];
            ++ideg[i];
        }
        for (auto it = pairs.begin(); it != pairs.end();) {
            if (udeg[it->first] < k || ideg[it->second] < k) {
                it = pairs.erase(it);
                changed = true;
            } else {
                ++it;
            }
        }
    }
    return pairs;
}

}  // namespace

TEST_CASE("load_interactions parses ratings and timestamps") {
    const auto p = temp_file("load1.tsv", "u1\ti1\t5\t100\nu2\ti1\t2\t101\n");
    const auto raw = load_interactions(p.string(), FileFormat::Tsv);
    REQUIRE(raw.records.size() == 2);
    CHECK(raw.records[0].user_key == "u1");
    CHECK(raw.records[0].rating == 5.0);
    CHECK(raw.records[1].rating == 2.0);
    CHECK(raw.records[1].timestamp == 101);
    fs::remove(p);
}

TEST_CASE("load_interactions: empty file, comments, csv") {
    const auto p = temp_file("load2.tsv", "");
    CHECK(load_interactions(p.string(), FileFormat::Tsv).records.empty());
    fs::remove(p);

    const auto q = temp_file("load3.csv", "# header comment\nu1,i1,4\n");
    const auto raw = load_interactions(q.string(), FileFormat::Csv);
    REQUIRE(raw.records.size() == 1);
    CHECK(raw.records[0].item_key == "i1");
    fs::remove(q);
}

TEST_CASE("load_interactions reports malformed lines by number") {
    const auto p = temp_file("load4.tsv", "u1\n");
    CHECK_THROWS_WITH_AS(load_interactions(p.string(), FileFormat::Tsv),
                         doctest::Contains("line 1"), std::runtime_error);
    fs::remove(p);
    CHECK_THROWS(load_interactions("/nonexistent/file.tsv", FileFormat::Tsv));
}

TEST_CASE("kcore: complete bipartite 3x3 survives k=2 intact") {
    std::vector<std::tuple<std::string, std::string, double>> recs;
    for (int u = 0; u < 3; ++u)
        for (int i = 0; i < 3; ++i)
            recs.emplace_back("u" + std::to_string(u), "i" + std::to_string(i),
                              5.0);
    Vocab users, items;
    const auto set = kcore_filter(make_raw(recs), 2, 3.0, &users, &items);
    CHECK(set.num_users == 3);
    CHECK(set.num_items == 3);
    CHECK(set.total_interactions == 9);
}

TEST_CASE("kcore: star graph dies at k=2 with an explicit error") {
    std::vector<std::tuple<std::string, std::string, double>> recs;
    for (int i = 0; i < 10; ++i)
        recs.emplace_back("u0", "i" + std::to_string(i), 5.0);
    Vocab users, items;
    CHECK_THROWS(kcore_filter(make_raw(recs), 2, 3.0, &users, &items));
}

TEST_CASE("kcore drops low ratings but keeps rating-less records") {
    RawInteractions raw;
    raw.records.push_back({"u0", "i0", 5.0, std::nullopt});
    raw.records.push_back({"u0", "i1", 2.0, std::nullopt});  // dropped
    raw.records.push_back({"u0", "i2", std::nullopt, std::nullopt});
    raw.records.push_back({"u1", "i0", 4.0, std::nullopt});
    raw.records.push_back({"u1", "i2", 3.0, std::nullopt});
    Vocab users, items;
    const auto set = kcore_filter(raw, 2, 3.0, &users, &items);
    CHECK(set.num_users == 2);
    CHECK(set.num_items == 2);  // i1 gone
    CHECK(set.total_interactions == 4);
}

TEST_CASE("kcore matches the independent iterative-pruning oracle") {
    Rng rng = Rng::stream(21, 0ULL);
    std::vector<std::tuple<std::string, std::string, double>> recs;
    std::set<std::pair<std::string, std::string>> pairs;
    for (int t = 0; t < 4000; ++t) {
        const std::string u = "u" + std::to_string(rng.next_below(60));
        const std::string i = "i" + std::to_string(rng.next_below(80));
        if (pairs.insert({u, i}).second) recs.emplace_back(u, i, 5.0);
    }
    const auto expect = kcore_oracle(pairs, 10);
    Vocab users, items;
    if (expect.empty()) {
        CHECK_THROWS(kcore_filter(make_raw(recs), 10, 3.0, &users, &items));
        return;
    }
    const auto set = kcore_filter(make_raw(recs), 10, 3.0, &users, &items);
    std::set<std::pair<std::string, std::string>> got;
    for (std::uint32_t u = 0; u < set.num_users; ++u)
        for (const auto i : set.positives[u])
            got.insert({users.id_to_key[u], items.id_to_key[i]});
    CHECK(got == expect);
}

TEST_CASE("kcore output is a fixed point of itself") {
    Rng rng = Rng::stream(22, 0ULL);
    std::vector<std::tuple<std::string, std::string, double>> recs;
    std::set<std::pair<std::string, std::string>> seen;
    for (int t = 0; t < 3000; ++t) {
        const std::string u = "u" + std::to_string(rng.next_below(40));
        const std::string i = "i" + std::to_string(rng.next_below(50));
        if (seen.insert({u, i}).second) recs.emplace_back(u, i, 5.0);
    }
    Vocab users, items;
    const auto set = kcore_filter(make_raw(recs), 8, 3.0, &users, &items);
    // Re-run on its own output.
    RawInteractions again;
    for (std::uint32_t u = 0; u < set.num_users; ++u)
        for (const auto i : set.positives[u])
            again.records.push_back(
                {users.id_to_key[u], items.id_to_key[i], std::nullopt,
                 std::nullopt});
    Vocab users2, items2;
    const auto set2 = kcore_filter(again, 8, 3.0, &users2, &items2);
    CHECK(set2.total_interactions == set.total_interactions);
    CHECK(set2.num_users == set.num_users);
    CHECK(set2.num_items == set.num_items);
}

TEST_CASE("split: 10 items at (0.8, 0.1) gives 7/1/2 and is deterministic") {
    InteractionSet full;
    full.num_users = 1;
    full.num_items = 10;
    full.positives = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
    full.recount();
    Vocab users, items;
    users.intern("u0");
    for (int i = 0; i < 10; ++i) items.intern("i" + std::to_string(i));

    const auto a = split_dataset(full, users, items, 0.8, 0.1, 7);
    CHECK(a.train.positives[0].size() == 7);
    CHECK(a.validation.positives[0].size() == 1);
    CHECK(a.test.positives[0].size() == 2);

    const auto b = split_dataset(full, users, items, 0.8, 0.1, 7);
    CHECK(a.train.positives == b.train.positives);
    CHECK(a.validation.positives == b.validation.positives);
    CHECK(a.test.positives == b.test.positives);
    const auto c = split_dataset(full, users, items, 0.8, 0.1, 8);
    const bool differs = a.train.positives != c.train.positives ||
                         a.test.positives != c.test.positives;
    CHECK(differs);
}

TEST_CASE("split is a partition and the train share lands near 72%") {
    // 80% x 90% of interactions end in train: expect 72% +- 2%.
    Rng rng = Rng::stream(23, 0ULL);
    InteractionSet full;
    full.num_users = 500;
    full.num_items = 800;
    full.positives.assign(500, {});
    for (std::uint32_t u = 0; u < 500; ++u) {
        std::set<std::uint32_t> items_u;
        const std::size_t n = 10 + rng.next_below(40);
        while (items_u.size() < n)
            items_u.insert(static_cast<std::uint32_t>(rng.next_below(800)));
        full.positives[u].assign(items_u.begin(), items_u.end());
    }
    full.recount();
    Vocab users, items;
    for (int u = 0; u < 500; ++u) users.intern("u" + std::to_string(u));
    for (int i = 0; i < 800; ++i) items.intern("i" + std::to_string(i));
    const auto split = split_dataset(full, users, items, 0.8, 0.1, 3);

    for (std::uint32_t u = 0; u < 500; ++u) {
        std::vector<std::uint32_t> merged;
        for (const auto* part :
             {&split.train, &split.validation, &split.test}) {
            for (const auto i : part->positives[u]) merged.push_back(i);
        }
        std::sort(merged.begin(), merged.end());
        CHECK(merged == full.positives[u]);
        // Pairwise disjoint follows from the merged multiset being
        // duplicate-free and equal to the original strict-ascending list.
        CHECK(std::adjacent_find(merged.begin(), merged.end()) == merged.end());
    }
    const double share = static_cast<double>(split.train.total_interactions) /
                         static_cast<double>(full.total_interactions);
    CHECK(share > 0.70);
    CHECK(share < 0.76);
    // Train plus validation is the "training side" of the 80/20 split; the
    // floor on the test count can only push interactions toward it.
    const double train_side =
        static_cast<double>(split.train.total_interactions +
                            split.validation.total_interactions) /
        static_cast<double>(full.total_interactions);
    CHECK(train_side > 0.78);
    CHECK(train_side < 0.82);
}

TEST_CASE("inject_false_positives: zero ratio, exact counts, set difference") {
    InteractionSet train;
    train.num_users = 2;
    train.num_items = 100;
    train.positives = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 2, 3}};
    train.recount();

    const auto same = inject_false_positives(train, 0.0, 1);
    CHECK(same.positives == train.positives);

    NoiseReport report;
    const auto noisy = inject_false_positives(train, 0.15, 1, &report);
    CHECK(noisy.positives[0].size() == 12);  // ceil(0.15*10)=2 added
    CHECK(noisy.positives[1].size() == 4);   // ceil(0.15*3)=1 added
    CHECK(report.added == 3);
    CHECK(report.shortfall_users == 0);
    for (std::uint32_t u = 0; u < 2; ++u) {
        std::size_t fresh = 0;
        for (const auto i : noisy.positives[u])
            if (!std::binary_search(train.positives[u].begin(),
                                    train.positives[u].end(), i))
                ++fresh;
        CHECK(std::includes(noisy.positives[u].begin(), noisy.positives[u].end(),
                            train.positives[u].begin(),
                            train.positives[u].end()));
        CHECK(fresh == (u == 0 ? 2 : 1));
    }
}

TEST_CASE("inject_false_positives reports negative shortfall") {
    InteractionSet train;
    train.num_users = 1;
    train.num_items = 11;
    train.positives = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
    train.recount();
    NoiseReport report;
    const auto noisy = inject_false_positives(train, 0.5, 1, &report);
    CHECK(noisy.positives[0].size() == 11);  // only one negative existed
    CHECK(report.shortfall_users == 1);
}

TEST_CASE("split files and vocab round-trip through save/load") {
    InteractionSet set;
    set.num_users = 2;
    set.num_items = 3;
    set.positives = {{0, 2}, {1}};
    set.recount();
    Vocab users, items;
    users.intern("alice");
    users.intern("bob");
    items.intern("x");
    items.intern("y");
    items.intern("z");

    const auto dir = fs::temp_directory_path() / "toprank_test_roundtrip";
    fs::create_directories(dir);
    save_vocab(users, (dir / "users.vocab").string());
    save_vocab(items, (dir / "items.vocab").string());
    save_interactions(set, users, items, (dir / "part.tsv").string());

    const auto users2 = load_vocab((dir / "users.vocab").string());
    const auto items2 = load_vocab((dir / "items.vocab").string());
    CHECK(users2.id_to_key == users.id_to_key);
    CHECK(items2.id_to_key == items.id_to_key);
    const auto set2 = load_split_file((dir / "part.tsv").string(), users2, items2);
    CHECK(set2.positives == set.positives);
    CHECK(set2.total_interactions == 3);
    fs::remove_all(dir);
}
