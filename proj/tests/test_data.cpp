#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "ptffsr/codec.hpp"
#include "ptffsr/data.hpp"
#include "ptffsr/errors.hpp"

using namespace ptffsr;

namespace {

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& contents) {
        path = std::filesystem::temp_directory_path() /
               ("ptffsr_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++) + ".csv");
        std::ofstream out(path, std::ios::binary);
        out << contents;
    }
    ~TempFile() { std::filesystem::remove(path); }
    static inline int counter = 0;
};

std::vector<RawInteraction> user_rows(const std::string& user, int count, int item_offset = 0) {
    std::vector<RawInteraction> rows;
    for (int i = 0; i < count; ++i)
        rows.push_back({user, "item" + std::to_string(item_offset + i), i});
    return rows;
}

}  // namespace

TEST_CASE("load_csv: well-formed rows come back in file order") {
    TempFile f("user,item,timestamp\nu1,a,3\nu1,b,1\nu2,a,2\n");
    auto rows = load_csv(f.path.string(), CsvSchema{});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].item == "a");
    CHECK(rows[0].timestamp == 3);
    CHECK(rows[1].item == "b");
    CHECK(rows[2].user == "u2");
}

TEST_CASE("load_csv: custom column names and extra columns") {
    TempFile f("ts,who,extra,what\n5,u1,x,a\n6,u1,y,b\n");
    auto rows = load_csv(f.path.string(), CsvSchema{"who", "what", "ts"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].user == "u1");
    CHECK(rows[0].item == "a");
    CHECK(rows[0].timestamp == 5);
}

TEST_CASE("load_csv: empty file yields an empty list") {
    TempFile f("");
    CHECK(load_csv(f.path.string(), CsvSchema{}).empty());
}

TEST_CASE("load_csv: missing column is a schema error") {
    TempFile f("user,item\nu1,a\n");
    CHECK_THROWS_AS(load_csv(f.path.string(), CsvSchema{}), SchemaError);
}

TEST_CASE("load_csv: a non-integer timestamp is reported with its line number") {
    TempFile f("user,item,timestamp\nu1,a,1\nu1,b,oops\n");
    try {
        load_csv(f.path.string(), CsvSchema{});
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("load_csv: missing file is an I/O error") {
    CHECK_THROWS_AS(load_csv("/nonexistent/nowhere.csv", CsvSchema{}), IoError);
}

TEST_CASE("preprocess: a user with four interactions is discarded") {
    auto rows = user_rows("short", 4);
    auto keep = user_rows("long", 6);
    rows.insert(rows.end(), keep.begin(), keep.end());
    Corpus c = preprocess(rows);
    CHECK(c.num_users == 1);
    CHECK(c.user_names[0] == "long");
}

TEST_CASE("preprocess: 25 interactions keep the most recent 20 as 18 train + val + test") {
    Corpus c = preprocess(user_rows("u", 25));
    REQUIRE(c.num_users == 1);
    const auto& seq = c.sequences[0];
    CHECK(seq.items.size() == 18);
    // items 0..4 fell off the front; train covers items 5..22
    CHECK(c.item_names[static_cast<std::size_t>(seq.items[0] - 1)] == "item5");
    CHECK(c.item_names[static_cast<std::size_t>(seq.val_item - 1)] == "item23");
    CHECK(c.item_names[static_cast<std::size_t>(seq.test_item - 1)] == "item24");
}

TEST_CASE("preprocess: exactly five interactions split 3/1/1") {
    Corpus c = preprocess(user_rows("u", 5));
    const auto& seq = c.sequences[0];
    CHECK(seq.items.size() == 3);
    CHECK(seq.val_item != 0);
    CHECK(seq.test_item != 0);
}

TEST_CASE("preprocess: timestamp ties keep file order") {
    std::vector<RawInteraction> rows;
    for (int i = 0; i < 5; ++i) rows.push_back({"u", "item" + std::to_string(i), 0});
    Corpus c = preprocess(rows);
    const auto& seq = c.sequences[0];
    for (int i = 0; i < 3; ++i)
        CHECK(c.item_names[static_cast<std::size_t>(seq.items[static_cast<std::size_t>(i)] - 1)] ==
              "item" + std::to_string(i));
}

TEST_CASE("preprocess: zero survivors is an error") {
    CHECK_THROWS_AS(preprocess(user_rows("u", 3)), InputError);
}

TEST_CASE("dense ids are contiguous from 1 and round-trip through the name tables") {
    std::vector<RawInteraction> rows = user_rows("alice", 6);
    auto more = user_rows("bob", 7, 100);
    rows.insert(rows.end(), more.begin(), more.end());
    Corpus c = preprocess(rows);
    CHECK(c.num_users == 2);
    for (int u = 1; u <= c.num_users; ++u)
        CHECK(c.user_ids.at(c.user_names[static_cast<std::size_t>(u - 1)]) == u);
    for (int j = 1; j <= c.num_items; ++j)
        CHECK(c.item_ids.at(c.item_names[static_cast<std::size_t>(j - 1)]) == j);
}

TEST_CASE("preprocess is idempotent over its own re-export") {
    Corpus first = synth_corpus(20, 30, 1, 99);
    Corpus second = preprocess(to_raw_interactions(first));
    CHECK(first == second);
}

TEST_CASE("sample_negatives: the only free item is forced") {
    std::vector<RawInteraction> rows;
    for (int i = 0; i < 5; ++i) rows.push_back({"u", "i" + std::to_string(i % 2), i});
    Corpus c = preprocess(rows);  // items i0, i1 -> user interacted with both
    auto seq = c.sequences[0];
    RandomStream rng(1);
    auto negs = sample_negatives(seq, /*num_items=*/3, /*step=*/0, /*k=*/1, rng);
    REQUIRE(negs.size() == 1);
    CHECK(negs[0] == 3);
    CHECK(seq.trained_items.count(3) == 1);
}

TEST_CASE("sample_negatives: draws never intersect the interacted set") {
    Corpus c = synth_corpus(5, 40, 1, 7);
    auto seq = c.sequences[0];
    RandomStream rng(2);
    for (int trial = 0; trial < 10000; ++trial) {
        auto negs = sample_negatives(seq, c.num_items, trial % static_cast<int>(seq.items.size()),
                                     2, rng);
        for (ItemId id : negs) {
            CHECK(seq.interacted.count(id) == 0);
            CHECK(id >= 1);
            CHECK(id <= c.num_items);
        }
    }
}

TEST_CASE("sample_negatives: deterministic under the same seed, infeasible k rejected") {
    Corpus c = synth_corpus(3, 25, 1, 5);
    auto a = c.sequences[0];
    auto b = c.sequences[0];
    RandomStream ra(77), rb(77);
    CHECK(sample_negatives(a, c.num_items, 0, 3, ra) == sample_negatives(b, c.num_items, 0, 3, rb));

    auto seq = c.sequences[0];
    RandomStream rng(1);
    const int pool = c.num_items - static_cast<int>(seq.interacted.size());
    CHECK_THROWS_AS(sample_negatives(seq, c.num_items, 0, pool + 1, rng), InputError);
    CHECK_THROWS_AS(sample_negatives(seq, c.num_items, -1, 1, rng), InputError);
}

TEST_CASE("synth_corpus: fixed seed reproduces byte-identical caches") {
    Corpus a = synth_corpus(25, 40, 1, 123);
    Corpus b = synth_corpus(25, 40, 1, 123);
    CHECK(encode_corpus(a) == encode_corpus(b));
    Corpus c = synth_corpus(25, 40, 1, 124);
    CHECK(encode_corpus(a) != encode_corpus(c));
}

TEST_CASE("synth_corpus: every user survives preprocessing") {
    Corpus c = synth_corpus(50, 30, 1, 11);
    CHECK(c.num_users == 50);
    for (const auto& seq : c.sequences) CHECK(seq.items.size() >= 3);
}

TEST_CASE("synth_corpus: within-cluster transition mass is 0.8 within 0.02") {
    // Count transitions over the raw generated sequences (train + val + test
    // in order), across enough users for ~1e5 transitions.
    Corpus c = synth_corpus(9000, 50, 1, 2025);
    std::size_t total = 0, within = 0;
    for (const auto& seq : c.sequences) {
        std::vector<ItemId> full = seq.items;
        full.push_back(seq.val_item);
        full.push_back(seq.test_item);
        for (std::size_t i = 1; i < full.size(); ++i) {
            ++total;
            if (synth_cluster_of(c, full[i]) == synth_cluster_of(c, full[i - 1])) ++within;
        }
    }
    CHECK(total > 100000);
    const double freq = static_cast<double>(within) / static_cast<double>(total);
    CHECK(freq == doctest::Approx(0.8).epsilon(0.025));
}

TEST_CASE("synth_corpus: cluster labels parse and partition the catalog") {
    Corpus c = synth_corpus(30, 50, 1, 3);
    CHECK(synth_cluster_count(50) == 5);
    std::map<int, int> sizes;
    for (ItemId id = 1; id <= c.num_items; ++id) {
        int cl = synth_cluster_of(c, id);
        CHECK(cl >= 0);
        CHECK(cl < 5);
        ++sizes[cl];
    }
    CHECK(sizes.size() == 5);
}

TEST_CASE("synth_corpus: input validation") {
    CHECK_THROWS_AS(synth_corpus(10, 9, 1, 1), InputError);
    CHECK_THROWS_AS(synth_corpus(0, 20, 1, 1), InputError);
    CHECK_THROWS_AS(synth_corpus(10, 20, 0, 1), InputError);
}
