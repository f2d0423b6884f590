#include "ptffsr/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ptffsr/errors.hpp"

namespace ptffsr {

int rank_of_target(std::span<const double> scores, ItemId target,
                   const std::set<ItemId>& exclude) {
    const int num_items = static_cast<int>(scores.size());
    if (target < 1 || target > num_items) throw InputError("rank_of_target: target out of range");
    const double ts = scores[static_cast<std::size_t>(target - 1)];
    int ahead = 0;
    for (int j = 1; j <= num_items; ++j) {
        if (j == target || exclude.count(static_cast<ItemId>(j))) continue;
        const double s = scores[static_cast<std::size_t>(j - 1)];
        if (s > ts || (s == ts && j < target)) ++ahead;
    }
    return ahead + 1;
}

namespace {

EvalResult evaluate_impl(SeqModel& model, const Corpus& corpus,
                         const std::map<UserId, std::vector<ItemId>>* contexts, int k,
                         EvalSplit split, std::string mode_tag) {
    if (k < 1) throw InputError("evaluate: k must be >= 1");
    EvalResult res;
    res.k = k;
    res.mode = std::move(mode_tag);

    double hr_sum = 0.0, ndcg_sum = 0.0;
    for (const auto& seq : corpus.sequences) {
        const ItemId target = split == EvalSplit::val ? seq.val_item : seq.test_item;
        if (target < 1 || target > model.config().num_items) {
            ++res.skipped;
            continue;
        }

        std::vector<ItemId> context;
        if (contexts != nullptr) {
            auto it = contexts->find(seq.user);
            if (it == contexts->end()) {
                ++res.skipped;
                continue;
            }
            context = it->second;
        } else {
            context = seq.items;
        }
        if (contexts == nullptr && split == EvalSplit::test) context.push_back(seq.val_item);

        std::set<ItemId> exclude(seq.items.begin(), seq.items.end());
        if (split == EvalSplit::test) exclude.insert(seq.val_item);
        exclude.erase(target);  // the target is always a ranking candidate

        Tape tape;
        Var enc = model.encode_from_start(tape, context);
        Var scores =
            model.score_all(tape, row_at(enc, static_cast<int>(context.size())));
        const int rank = rank_of_target(tape.value(scores).data, target, exclude);

        if (rank <= k) {
            hr_sum += 1.0;
            ndcg_sum += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
        }
        ++res.num_users;
    }
    if (res.num_users > 0) {
        hr_sum /= res.num_users;
        ndcg_sum /= res.num_users;
    }
    res.hr = hr_sum;
    res.ndcg = ndcg_sum;
    return res;
}

}  // namespace

EvalResult evaluate(SeqModel& model, const Corpus& corpus, int k, EvalSplit split,
                    std::string mode_tag) {
    return evaluate_impl(model, corpus, nullptr, k, split, std::move(mode_tag));
}

EvalResult evaluate_with_contexts(SeqModel& model, const Corpus& corpus,
                                  const std::map<UserId, std::vector<ItemId>>& contexts, int k,
                                  EvalSplit split, std::string mode_tag) {
    return evaluate_impl(model, corpus, &contexts, k, split, std::move(mode_tag));
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "mode,round,k,hr,ndcg,users\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.6f,%.6f,%d\n", row.mode.c_str(), row.round,
                      row.result.k, row.result.hr, row.result.ndcg, row.result.num_users);
        out << buf;
    }
}

}  // namespace ptffsr
