#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptffsr/rng.hpp"
#include "ptffsr/types.hpp"

namespace ptffsr {

struct RawInteraction {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;
};

struct CsvSchema {
    std::string user = "user";
    std::string item = "item";
    std::string timestamp = "timestamp";
};

// Reads a comma-separated file with a header row. Rows come back in file
// order; a malformed row (wrong field count, non-integer timestamp) raises
// SchemaError naming the line. An empty file yields an empty list.
std::vector<RawInteraction> load_csv(const std::string& path, const CsvSchema& schema);

// One user's data after preprocessing. items is the chronological training
// part; the last two raw interactions are held out as val/test.
struct InteractionSequence {
    UserId user = 0;
    std::vector<ItemId> items;
    ItemId val_item = 0;
    ItemId test_item = 0;
    // V'_u: every id this user's model has trained on — the training items
    // plus whatever negative sampling exposed. Grows monotonically.
    std::set<ItemId> trained_items;
    // train + val + test membership; the negative-sampling exclusion pool.
    std::set<ItemId> interacted;

    bool operator==(const InteractionSequence&) const = default;
};

struct Corpus {
    std::vector<InteractionSequence> sequences;  // index u-1 holds user u
    int num_users = 0;
    int num_items = 0;
    std::vector<std::string> user_names;  // dense id u -> user_names[u-1]
    std::vector<std::string> item_names;
    std::unordered_map<std::string, UserId> user_ids;
    std::unordered_map<std::string, ItemId> item_ids;

    bool operator==(const Corpus& o) const {
        return sequences == o.sequences && num_users == o.num_users &&
               num_items == o.num_items && user_names == o.user_names &&
               item_names == o.item_names;
    }
};

// Implicit-feedback preprocessing: per-user chronological sort (ties keep
// file order), users with fewer than min_len interactions dropped, each kept
// sequence truncated to its most recent max_len interactions, last two held
// out for validation/test. Dense ids are assigned in first-appearance order,
// starting at 1 (0 is padding).
Corpus preprocess(const std::vector<RawInteraction>& raw, int min_len = 5, int max_len = 20);

// Inverse of preprocessing for round-trip checks and re-export: emits each
// user's kept interactions (train, val, test) with positional timestamps.
std::vector<RawInteraction> to_raw_interactions(const Corpus& corpus);

// k distinct items drawn uniformly from the user's never-interacted pool
// (train, val and test all excluded). Drawn ids join seq.trained_items.
// step must address a valid train position.
std::vector<ItemId> sample_negatives(InteractionSequence& seq, int num_items, int step, int k,
                                     RandomStream& rng);

// Seeded corpus with planted cluster structure: items are partitioned into
// synth_cluster_count(num_items) clusters and consecutive interactions stay
// within the current item's cluster with probability 0.8. Raw lengths are
// uniform in [min_len, max_len + 2] ahead of the usual preprocessing.
Corpus synth_corpus(int num_users, int num_items, int markov_order, std::uint64_t seed,
                    int min_len = 5, int max_len = 20);

int synth_cluster_count(int num_items);
// Recovers the planted cluster from a generated item name ("c<k>_i<j>").
int synth_cluster_of(const Corpus& corpus, ItemId id);

}  // namespace ptffsr
