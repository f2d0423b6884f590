#include "ptffsr/client.hpp"

#include <algorithm>
#include <cmath>

#include "ptffsr/errors.hpp"

namespace ptffsr {

void reseed_client(ClientState& state, std::uint64_t global_seed, int round) {
    state.rng = RandomStream(derive_seed(global_seed, RngPurpose::client_round,
                                         {static_cast<std::uint64_t>(state.user),
                                          static_cast<std::uint64_t>(round)}));
}

namespace {

// -sum_t [log s(pos_t) + sum_k log(1 - s(neg_tk))] over the private
// sequence, predictions conditioned through the start token so the first
// item is a training target too.
Var private_rec_loss(ClientState& state, Tape& tape, int num_negatives) {
    auto& seq = state.private_data;
    const int steps = static_cast<int>(seq.items.size());
    Var enc = state.model->encode_from_start(tape, seq.items);

    std::vector<Var> pos_rows, neg_rows;
    pos_rows.reserve(static_cast<std::size_t>(steps));
    neg_rows.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
        Var e = row_at(enc, t);
        ItemId pos = seq.items[static_cast<std::size_t>(t)];
        pos_rows.push_back(state.model->score_items(tape, e, {&pos, 1}));
        auto negs = sample_negatives(seq, state.num_items, t, num_negatives, state.rng);
        neg_rows.push_back(state.model->score_items(tape, e, negs));
    }
    return rec_loss(stack_rows(pos_rows), stack_rows(neg_rows));
}

Var shared_soft_loss(ClientState& state, Tape& tape, const SoftLabeledSequence& shared,
                     SoftLabelLossKind kind) {
    auto base = shared.base_items();
    Var enc = state.model->encode_from_start(tape, base);
    Var total{};
    for (std::size_t t = 0; t < shared.steps.size(); ++t) {
        const auto& cands = shared.steps[t];
        std::vector<ItemId> items;
        std::vector<double> labels;
        items.reserve(cands.size());
        labels.reserve(cands.size());
        for (const auto& c : cands) {
            items.push_back(c.item);
            labels.push_back(c.score);
        }
        Var pred = state.model->score_items(tape, row_at(enc, static_cast<int>(t)), items);
        Var term = soft_label_loss(pred, labels, kind);
        total = total.valid() ? add(total, term) : term;
    }
    return total;
}

}  // namespace

double client_train(ClientState& state, int epochs, double lr, int num_negatives,
                    SoftLabelLossKind soft_kind) {
    if (epochs < 0 || lr <= 0.0) throw InputError("client_train: bad epochs/lr");
    if (num_negatives < 1) throw InputError("client_train: need at least one negative per step");
    double last_loss = 0.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Tape tape;
        state.model->zero_grad();
        Var total = private_rec_loss(state, tape, num_negatives);
        for (const auto& shared : state.shared_data) {
            Var s = shared_soft_loss(state, tape, shared, soft_kind);
            if (s.valid()) total = add(total, s);
        }
        backward(total);
        state.model->sgd_step(lr);
        last_loss = tape.value(total).data[0];
    }
    return last_loss;
}

std::vector<double> exp_mech_probabilities(std::span<const double> scores, double epsilon,
                                           double delta) {
    if (scores.empty()) throw InputError("exp_mech: empty candidate list");
    if (epsilon <= 0.0 || delta <= 0.0) throw InputError("exp_mech: epsilon and delta must be > 0");
    for (double s : scores)
        if (!(s >= 0.0 && s <= 1.0))
            throw InputError("exp_mech: scores must be pre-clamped to [0, 1]");
    std::vector<double> p(scores.begin(), scores.end());
    const double c = epsilon / (2.0 * delta);
    for (double& v : p) v *= c;
    kernel::softmax_row_inplace(p);
    return p;
}

std::size_t exp_mech_sample(std::span<const double> scores, double epsilon, double delta,
                            RandomStream& rng) {
    auto p = exp_mech_probabilities(scores, epsilon, delta);
    const double u = rng.next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    return p.size() - 1;  // guard against rounding at the top end
}

PrefixScores prefix_scores(ClientState& state, std::span<const ItemId> prefix) {
    PrefixScores out;
    out.candidates.assign(state.private_data.trained_items.begin(),
                          state.private_data.trained_items.end());
    Tape tape;
    Var enc = state.model->encode_from_start(tape, prefix);
    Var e = row_at(enc, static_cast<int>(prefix.size()));
    Var scores = sigmoid(state.model->score_items(tape, e, out.candidates));
    out.scores = tape.value(scores).data;
    return out;
}

UploadBuildResult build_upload(ClientState& state, int round, double beta, double epsilon) {
    if (beta < 0.0 || beta > 1.0) throw InputError("build_upload: beta must be in [0, 1]");
    const auto& items = state.private_data.items;
    const int steps = static_cast<int>(items.size());
    const int replace_count =
        std::clamp(static_cast<int>(std::ceil(beta * steps - 1e-9)), 0, steps);
    if (replace_count > 0 && epsilon <= 0.0)
        throw InputError("build_upload: epsilon must be > 0 when beta > 0");

    // Uniform positions without replacement, then left-to-right so each
    // rewrite conditions on the already-rewritten prefix.
    std::vector<int> pool(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < replace_count; ++i) {
        int j = i + static_cast<int>(state.rng.next_below(static_cast<std::uint64_t>(steps - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    std::vector<int> positions(pool.begin(), pool.begin() + replace_count);
    std::sort(positions.begin(), positions.end());

    UploadBuildResult result;
    result.message.user = state.user;
    result.message.round = round;
    result.message.items = items;
    result.replaced_positions = positions;
    for (int pos : positions) {
        auto ps = prefix_scores(
            state, std::span<const ItemId>(result.message.items.data(),
                                           static_cast<std::size_t>(pos)));
        std::size_t pick = exp_mech_sample(ps.scores, epsilon, 1.0, state.rng);
        result.message.items[static_cast<std::size_t>(pos)] = ps.candidates[pick];
    }
    return result;
}

void receive_download(ClientState& state, const DownloadMessage& msg, std::size_t capacity) {
    if (capacity == 0) return;
    state.shared_data.push_back(msg.payload);
    while (state.shared_data.size() > capacity)
        state.shared_data.erase(state.shared_data.begin());
}

}  // namespace ptffsr
