#pragma once

#include <memory>
#include <span>
#include <vector>

#include "ptffsr/data.hpp"
#include "ptffsr/messages.hpp"
#include "ptffsr/models.hpp"
#include "ptffsr/rng.hpp"

namespace ptffsr {

// One participant's runtime state. The model and the private sequence stay
// on the client; the only thing that ever leaves is an UploadMessage built
// through the exponential mechanism.
struct ClientState {
    UserId user = 0;
    std::unique_ptr<SeqModel> model;
    InteractionSequence private_data;
    std::vector<SoftLabeledSequence> shared_data;  // server-sent soft-labeled sequences
    int num_items = 0;
    RandomStream rng{0};

    ClientState() = default;
    ClientState(UserId u, std::unique_ptr<SeqModel> m, InteractionSequence seq, int items)
        : user(u), model(std::move(m)), private_data(std::move(seq)), num_items(items) {}
};

// Uploads must be reproducible per round yet vary across rounds, so each
// client reseeds from (global_seed, user, round) at round start.
void reseed_client(ClientState& state, std::uint64_t global_seed, int round);

// Local SGD on the private sequence (fresh negatives per epoch) plus the
// soft-label loss over every server-shared sequence. One step per epoch: the
// batch is the client's whole data. Returns the final epoch's loss.
double client_train(ClientState& state, int epochs, double lr, int num_negatives,
                    SoftLabelLossKind soft_kind = SoftLabelLossKind::bce);

// Exponential-mechanism selection probabilities: softmax of
// (epsilon / (2*delta)) * score. Scores must be pre-clamped to [0, 1] so
// delta is an honest sensitivity bound.
std::vector<double> exp_mech_probabilities(std::span<const double> scores, double epsilon,
                                           double delta);

// One index drawn from exp_mech_probabilities via inverse CDF.
std::size_t exp_mech_sample(std::span<const double> scores, double epsilon, double delta,
                            RandomStream& rng);

// Sigmoid-clamped model scores over the user's trained-item set V'_u
// (ascending id order), conditioned on the given prefix. An empty prefix is
// served by the model's learned start token.
struct PrefixScores {
    std::vector<ItemId> candidates;
    std::vector<double> scores;
};
PrefixScores prefix_scores(ClientState& state, std::span<const ItemId> prefix);

struct UploadBuildResult {
    UploadMessage message;
    std::vector<int> replaced_positions;  // ascending
};

// Perturbed upload: ceil(beta * T) positions chosen uniformly without
// replacement are rewritten left to right, each sampled by the exponential
// mechanism from V'_u conditioned on the current (already partially
// rewritten) prefix. Remaining positions keep the true item. Each rewritten
// position spends epsilon, so the message is (epsilon * ceil(beta*T))-DP
// with respect to the rewritten positions.
UploadBuildResult build_upload(ClientState& state, int round, double beta, double epsilon);

// Store a fresh server download, evicting the oldest beyond capacity.
void receive_download(ClientState& state, const DownloadMessage& msg, std::size_t capacity);

}  // namespace ptffsr
