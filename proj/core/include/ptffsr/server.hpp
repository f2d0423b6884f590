#pragma once

#include <map>
#include <memory>
#include <span>
#include <vector>

#include "ptffsr/messages.hpp"
#include "ptffsr/models.hpp"
#include "ptffsr/rng.hpp"

namespace ptffsr {

// Central-server runtime. The model never leaves this state: the only
// outbound message type is DownloadMessage (soft-labeled sequences).
struct ServerState {
    std::unique_ptr<SeqModel> model;
    // Per user, the two most recent uploads in round order (older first).
    std::map<UserId, std::vector<UploadMessage>> upload_history;
    std::map<UserId, std::vector<UserId>> similar_groups;
    RandomStream rng{0};
    double temperature = 1.0;  // divides cosine similarities inside exp
};

// Push an upload, keeping at most the two most recent per user.
void ingest_upload(ServerState& state, const UploadMessage& msg);

// Sequence representation: the encoder's last-step latent, [1 x hidden].
Var seq_repr(SeqModel& model, Tape& tape, std::span<const ItemId> items);

// For each uploader, the top-k other uploaders ranked by cosine similarity
// between the server item embeddings of their final uploaded items; ties
// break toward the smaller user id. A single-client round yields empty
// groups and the contrastive/sharing terms skip gracefully.
std::map<UserId, std::vector<UserId>> build_similar_groups(
    ServerState& state, const std::vector<UploadMessage>& uploads, int k);

// Preference-consistency InfoNCE on representation vectors: pulls the same
// user's two most recent uploads together against other users' current
// representations.
Var pc_loss_from_reprs(Var e_prev, Var e_cur, std::span<const Var> negatives,
                       double temperature = 1.0);

// Intention-similarity InfoNCE: the anchor against its similar group
// (positives) versus remaining batch users (negatives).
Var is_loss_from_reprs(Var anchor, std::span<const Var> positives,
                       std::span<const Var> negatives, double temperature = 1.0);

struct ServerTrainStats {
    double rec_mean = 0.0;  // per-upload recommendation loss, final epoch
    double pc_mean = 0.0;
    double is_mean = 0.0;
    int uploads = 0;
};

// SGD on sum_u [ rec(upload_u) + lambda_pc * pc_u + lambda_is * is_u ] over
// the batch, with fresh per-step negatives drawn from the items absent from
// each upload (the server has no access to true interactions). Uploads are
// processed in ascending user order; batches larger than batch_cap split.
ServerTrainStats server_train(ServerState& state, const std::vector<UploadMessage>& uploads,
                              int epochs, int batch_cap, double lambda_pc, double lambda_is,
                              double lr, int num_negatives);

// Soft-labeled sequence for user: one upload sampled uniformly from the
// user's similar group (all other uploads when the group is empty; the
// user's own upload only when it is the sole one), then per step the true
// item plus num_negatives absent items, scored by the server model.
// use_similar_group=false forces the uniform pool (the "-SK" ablation).
DownloadMessage build_download(ServerState& state, UserId user,
                               const std::vector<UploadMessage>& uploads, int round,
                               int num_negatives, bool use_similar_group = true);

// Top-k items for a query sequence, conditioned the same way training
// predictions are; items present in the query are excluded, ties break
// toward smaller ids.
std::vector<ItemId> recommend(ServerState& state, const UploadMessage& query, int k);

}  // namespace ptffsr
