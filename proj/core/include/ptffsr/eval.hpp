#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptffsr/data.hpp"
#include "ptffsr/models.hpp"

namespace ptffsr {

struct EvalResult {
    double hr = 0.0;
    double ndcg = 0.0;
    int k = 0;
    int num_users = 0;  // users actually evaluated
    int skipped = 0;    // users whose target the model cannot score
    std::string mode;
};

enum class EvalSplit { val, test };

// 1-based rank of the target among the non-excluded items under descending
// score, ties broken toward the smaller id. The target itself is always
// ranked even if it appears in `exclude`.
int rank_of_target(std::span<const double> scores, ItemId target,
                   const std::set<ItemId>& exclude);

// Full-catalog ranking evaluation. For each user the model is conditioned on
// the true train sequence (plus the val item for the test split) and every
// item outside the user's interacted-so-far set is ranked. HR@k is the hit
// fraction; NDCG@k contributes 1/log2(rank+1) per hit. Users whose target is
// outside the model's catalog are skipped and counted.
EvalResult evaluate(SeqModel& model, const Corpus& corpus, int k, EvalSplit split,
                    std::string mode_tag = "");

// Same metric, but conditioning on caller-supplied contexts (e.g. perturbed
// uploads for a privacy-faithful readout). Exclusion sets still come from
// each user's true history: a client filters known items from whatever the
// server returns. Users without a context are skipped.
EvalResult evaluate_with_contexts(SeqModel& model, const Corpus& corpus,
                                  const std::map<UserId, std::vector<ItemId>>& contexts, int k,
                                  EvalSplit split, std::string mode_tag = "");

struct MetricsRow {
    std::string mode;
    int round = 0;
    EvalResult result;
};

// metrics.csv: mode, round, k, hr, ndcg, users
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace ptffsr
