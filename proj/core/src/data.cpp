#include "ptffsr/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ptffsr/errors.hpp"

namespace ptffsr {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::vector<RawInteraction> load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    std::string line;
    std::vector<RawInteraction> rows;
    if (!std::getline(in, line)) return rows;  // empty file: empty list
    if (!line.empty() && line.back() == '\r') line.pop_back();

    auto header = split_csv_line(line);
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw SchemaError("missing column '" + name + "' in " + path);
    };
    const int user_col = col(schema.user);
    const int item_col = col(schema.item);
    const int ts_col = col(schema.timestamp);
    const std::size_t min_fields =
        static_cast<std::size_t>(std::max({user_col, item_col, ts_col})) + 1;

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() < min_fields)
            throw SchemaError("line " + std::to_string(line_no) + ": expected at least " +
                              std::to_string(min_fields) + " fields, got " +
                              std::to_string(fields.size()));
        RawInteraction r;
        r.user = fields[static_cast<std::size_t>(user_col)];
        r.item = fields[static_cast<std::size_t>(item_col)];
        const std::string& ts = fields[static_cast<std::size_t>(ts_col)];
        auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), r.timestamp);
        if (ec != std::errc() || ptr != ts.data() + ts.size())
            throw SchemaError("line " + std::to_string(line_no) + ": timestamp '" + ts +
                              "' is not an integer");
        rows.push_back(std::move(r));
    }
    return rows;
}

Corpus preprocess(const std::vector<RawInteraction>& raw, int min_len, int max_len) {
    if (min_len < 3) throw InputError("min_len must be at least 3 (two interactions are held out)");
    if (max_len < min_len) throw InputError("max_len must be >= min_len");

    struct Bucket {
        std::vector<std::size_t> row_idx;  // indices into raw, file order
    };
    std::vector<std::string> user_order;
    std::unordered_map<std::string, Bucket> by_user;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto [it, inserted] = by_user.try_emplace(raw[i].user);
        if (inserted) user_order.push_back(raw[i].user);
        it->second.row_idx.push_back(i);
    }

    Corpus corpus;
    auto item_id = [&](const std::string& name) {
        auto [it, inserted] =
            corpus.item_ids.try_emplace(name, static_cast<ItemId>(corpus.item_names.size() + 1));
        if (inserted) corpus.item_names.push_back(name);
        return it->second;
    };

    for (const std::string& uname : user_order) {
        auto& idx = by_user[uname].row_idx;
        if (static_cast<int>(idx.size()) < min_len) continue;
        // Chronological order; stable sort keeps file order on timestamp ties.
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return raw[a].timestamp < raw[b].timestamp;
        });
        if (static_cast<int>(idx.size()) > max_len)
            idx.erase(idx.begin(), idx.end() - max_len);  // keep the most recent

        InteractionSequence seq;
        seq.user = static_cast<UserId>(corpus.user_names.size() + 1);
        for (std::size_t i = 0; i + 2 < idx.size(); ++i)
            seq.items.push_back(item_id(raw[idx[i]].item));
        seq.val_item = item_id(raw[idx[idx.size() - 2]].item);
        seq.test_item = item_id(raw[idx.back()].item);
        seq.trained_items.insert(seq.items.begin(), seq.items.end());
        seq.interacted = seq.trained_items;
        seq.interacted.insert(seq.val_item);
        seq.interacted.insert(seq.test_item);

        corpus.user_ids.emplace(uname, seq.user);
        corpus.user_names.push_back(uname);
        corpus.sequences.push_back(std::move(seq));
    }
    if (corpus.sequences.empty()) throw InputError("preprocessing left zero users");
    corpus.num_users = static_cast<int>(corpus.sequences.size());
    corpus.num_items = static_cast<int>(corpus.item_names.size());
    return corpus;
}

std::vector<RawInteraction> to_raw_interactions(const Corpus& corpus) {
    std::vector<RawInteraction> out;
    for (const auto& seq : corpus.sequences) {
        const std::string& uname = corpus.user_names[static_cast<std::size_t>(seq.user - 1)];
        std::int64_t ts = 0;
        auto push = [&](ItemId id) {
            out.push_back({uname, corpus.item_names[static_cast<std::size_t>(id - 1)], ts++});
        };
        for (ItemId id : seq.items) push(id);
        push(seq.val_item);
        push(seq.test_item);
    }
    return out;
}

std::vector<ItemId> sample_negatives(InteractionSequence& seq, int num_items, int step, int k,
                                     RandomStream& rng) {
    if (step < 0 || step >= static_cast<int>(seq.items.size()))
        throw InputError("sample_negatives: step out of range");
    const int pool = num_items - static_cast<int>(seq.interacted.size());
    if (k < 0 || k > pool) throw InputError("sample_negatives: k exceeds the non-interacted pool");

    std::vector<ItemId> out;
    out.reserve(static_cast<std::size_t>(k));
    std::set<ItemId> drawn;
    while (static_cast<int>(out.size()) < k) {
        ItemId id = static_cast<ItemId>(1 + rng.next_below(static_cast<std::uint64_t>(num_items)));
        if (seq.interacted.count(id) || drawn.count(id)) continue;
        drawn.insert(id);
        out.push_back(id);
    }
    seq.trained_items.insert(out.begin(), out.end());
    return out;
}

int synth_cluster_count(int num_items) { return std::max(2, num_items / 10); }

Corpus synth_corpus(int num_users, int num_items, int markov_order, std::uint64_t seed,
                    int min_len, int max_len) {
    if (num_items < 10) throw InputError("synth_corpus: need at least 10 items");
    if (num_users < 1) throw InputError("synth_corpus: need at least one user");
    if (markov_order < 1) throw InputError("synth_corpus: markov_order must be >= 1");

    const int clusters = synth_cluster_count(num_items);
    std::vector<int> cluster_of(static_cast<std::size_t>(num_items));
    std::vector<std::vector<int>> members(static_cast<std::size_t>(clusters));
    for (int j = 0; j < num_items; ++j) {
        int c = j % clusters;
        cluster_of[static_cast<std::size_t>(j)] = c;
        members[static_cast<std::size_t>(c)].push_back(j);
    }

    RandomStream rng(derive_seed(seed, RngPurpose::synth));
    std::vector<RawInteraction> raw;
    for (int u = 0; u < num_users; ++u) {
        const int home = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(clusters)));
        const int len = min_len + static_cast<int>(rng.next_below(
                                      static_cast<std::uint64_t>(max_len + 2 - min_len + 1)));
        std::vector<int> items;
        items.reserve(static_cast<std::size_t>(len));
        const auto& home_members = members[static_cast<std::size_t>(home)];
        items.push_back(home_members[rng.next_below(home_members.size())]);
        for (int t = 1; t < len; ++t) {
            const int lookback = std::min<int>(markov_order, t);
            const int anchor =
                items[items.size() - 1 - rng.next_below(static_cast<std::uint64_t>(lookback))];
            const int ac = cluster_of[static_cast<std::size_t>(anchor)];
            int next;
            if (rng.next_double() < 0.8) {
                const auto& m = members[static_cast<std::size_t>(ac)];
                next = m[rng.next_below(m.size())];
            } else {
                // uniform over items outside the anchor's cluster
                do {
                    next = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_items)));
                } while (cluster_of[static_cast<std::size_t>(next)] == ac);
            }
            items.push_back(next);
        }
        for (int t = 0; t < len; ++t)
            raw.push_back({"u" + std::to_string(u),
                           "c" + std::to_string(cluster_of[static_cast<std::size_t>(items[t])]) +
                               "_i" + std::to_string(items[t]),
                           t});
    }
    return preprocess(raw, min_len, max_len);
}

int synth_cluster_of(const Corpus& corpus, ItemId id) {
    if (id < 1 || id > corpus.num_items) throw InputError("synth_cluster_of: id out of range");
    const std::string& name = corpus.item_names[static_cast<std::size_t>(id - 1)];
    if (name.size() < 4 || name[0] != 'c') throw InputError("not a synthetic item name: " + name);
    std::size_t underscore = name.find('_');
    if (underscore == std::string::npos) throw InputError("not a synthetic item name: " + name);
    return std::stoi(name.substr(1, underscore - 1));
}

}  // namespace ptffsr
