#include "ptffsr/server.hpp"

#include <algorithm>
#include <set>

#include "ptffsr/errors.hpp"

namespace ptffsr {

void ingest_upload(ServerState& state, const UploadMessage& msg) {
    auto& hist = state.upload_history[msg.user];
    hist.push_back(msg);
    while (hist.size() > 2) hist.erase(hist.begin());
}

Var seq_repr(SeqModel& model, Tape& tape, std::span<const ItemId> items) {
    if (items.empty()) throw InputError("seq_repr: empty sequence");
    Var enc = model.encode(tape, items);
    return row_at(enc, static_cast<int>(items.size()) - 1);
}

std::map<UserId, std::vector<UserId>> build_similar_groups(
    ServerState& state, const std::vector<UploadMessage>& uploads, int k) {
    if (k < 0) throw InputError("build_similar_groups: k must be >= 0");
    std::map<UserId, std::vector<UserId>> groups;
    if (uploads.size() < 2) {
        for (const auto& u : uploads) groups[u.user] = {};
        state.similar_groups = groups;
        return groups;
    }

    const Tensor& emb = state.model->item_embeddings().value;
    const int d = emb.cols();
    auto emb_row = [&](ItemId id) {
        return std::span<const double>(emb.data.data() + static_cast<std::size_t>(id) * d,
                                       static_cast<std::size_t>(d));
    };

    std::vector<std::pair<UserId, ItemId>> final_items;
    final_items.reserve(uploads.size());
    for (const auto& u : uploads) final_items.emplace_back(u.user, u.items.back());
    std::sort(final_items.begin(), final_items.end());

    for (const auto& [user, item] : final_items) {
        std::vector<std::pair<double, UserId>> ranked;
        ranked.reserve(final_items.size() - 1);
        for (const auto& [other, other_item] : final_items) {
            if (other == user) continue;
            ranked.emplace_back(kernel::cosine_sim(emb_row(item), emb_row(other_item)), other);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        auto& group = groups[user];
        for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i)
            group.push_back(ranked[i].second);
    }
    state.similar_groups = groups;
    return groups;
}

Var pc_loss_from_reprs(Var e_prev, Var e_cur, std::span<const Var> negatives,
                       double temperature) {
    const double inv_t = 1.0 / temperature;
    Var s_pos = scale(cosine_sim(e_prev, e_cur), inv_t);
    Var denom = exp_op(s_pos);
    for (Var n : negatives) denom = add(denom, exp_op(scale(cosine_sim(e_cur, n), inv_t)));
    return sub(log_op(denom), s_pos);
}

Var is_loss_from_reprs(Var anchor, std::span<const Var> positives,
                       std::span<const Var> negatives, double temperature) {
    if (positives.empty()) throw InputError("is_loss: empty similar group");
    const double inv_t = 1.0 / temperature;
    Var numer{};
    for (Var p : positives) {
        Var term = exp_op(scale(cosine_sim(anchor, p), inv_t));
        numer = numer.valid() ? add(numer, term) : term;
    }
    Var denom = numer;
    for (Var n : negatives) denom = add(denom, exp_op(scale(cosine_sim(anchor, n), inv_t)));
    return sub(log_op(denom), log_op(numer));
}

namespace {

// k distinct items absent from `exclude`, uniform over the catalog.
std::vector<ItemId> draw_absent(int num_items, const std::set<ItemId>& exclude, int k,
                                RandomStream& rng) {
    if (k > num_items - static_cast<int>(exclude.size()))
        throw InputError("not enough absent items to sample");
    std::vector<ItemId> out;
    out.reserve(static_cast<std::size_t>(k));
    std::set<ItemId> drawn;
    while (static_cast<int>(out.size()) < k) {
        ItemId id = static_cast<ItemId>(1 + rng.next_below(static_cast<std::uint64_t>(num_items)));
        if (exclude.count(id) || drawn.count(id)) continue;
        drawn.insert(id);
        out.push_back(id);
    }
    return out;
}

Var upload_rec_loss(SeqModel& model, Tape& tape, const UploadMessage& upload, int num_negatives,
                    RandomStream& rng) {
    const auto& items = upload.items;
    const int steps = static_cast<int>(items.size());
    std::set<ItemId> present(items.begin(), items.end());
    Var enc = model.encode_from_start(tape, items);

    std::vector<Var> pos_rows, neg_rows;
    pos_rows.reserve(static_cast<std::size_t>(steps));
    neg_rows.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
        Var e = row_at(enc, t);
        ItemId pos = items[static_cast<std::size_t>(t)];
        pos_rows.push_back(model.score_items(tape, e, {&pos, 1}));
        auto negs = draw_absent(model.config().num_items, present, num_negatives, rng);
        neg_rows.push_back(model.score_items(tape, e, negs));
    }
    return rec_loss(stack_rows(pos_rows), stack_rows(neg_rows));
}

}  // namespace

ServerTrainStats server_train(ServerState& state, const std::vector<UploadMessage>& uploads,
                              int epochs, int batch_cap, double lambda_pc, double lambda_is,
                              double lr, int num_negatives) {
    if (uploads.empty()) throw ProtocolError("server_train: no uploads this round");
    if (batch_cap < 1) throw InputError("server_train: batch_cap must be >= 1");

    std::vector<UploadMessage> batch(uploads);
    std::sort(batch.begin(), batch.end(),
              [](const auto& a, const auto& b) { return a.user < b.user; });

    ServerTrainStats stats;
    stats.uploads = static_cast<int>(batch.size());
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double rec_sum = 0.0, pc_sum = 0.0, is_sum = 0.0;
        for (std::size_t begin = 0; begin < batch.size();
             begin += static_cast<std::size_t>(batch_cap)) {
            const std::size_t end = std::min(batch.size(), begin + static_cast<std::size_t>(batch_cap));
            Tape tape;
            state.model->zero_grad();

            std::map<UserId, Var> cur;
            Var total{};
            for (std::size_t i = begin; i < end; ++i) {
                const auto& up = batch[i];
                Var rec = upload_rec_loss(*state.model, tape, up, num_negatives, state.rng);
                rec_sum += tape.value(rec).data[0];
                total = total.valid() ? add(total, rec) : rec;
                cur[up.user] = seq_repr(*state.model, tape, up.items);
            }

            for (std::size_t i = begin; i < end; ++i) {
                const auto& up = batch[i];
                std::set<UserId> group_set;
                auto git = state.similar_groups.find(up.user);
                if (git != state.similar_groups.end())
                    group_set.insert(git->second.begin(), git->second.end());

                // Chunk users outside the anchor's group (and not the anchor)
                // serve as contrastive negatives for both losses.
                std::vector<Var> negatives;
                for (std::size_t j = begin; j < end; ++j) {
                    UserId other = batch[j].user;
                    if (other == up.user || group_set.count(other)) continue;
                    negatives.push_back(cur[other]);
                }

                auto hit = state.upload_history.find(up.user);
                if (lambda_pc != 0.0 && hit != state.upload_history.end() &&
                    hit->second.size() == 2) {
                    Var e_prev = seq_repr(*state.model, tape, hit->second.front().items);
                    Var pc = pc_loss_from_reprs(e_prev, cur[up.user], negatives,
                                                state.temperature);
                    pc_sum += tape.value(pc).data[0];
                    total = add(total, scale(pc, lambda_pc));
                }

                if (lambda_is != 0.0 && !group_set.empty()) {
                    std::vector<Var> positives;
                    for (UserId member : group_set) {
                        auto it = cur.find(member);
                        if (it != cur.end()) positives.push_back(it->second);
                    }
                    if (!positives.empty()) {
                        Var is = is_loss_from_reprs(cur[up.user], positives, negatives,
                                                    state.temperature);
                        is_sum += tape.value(is).data[0];
                        total = add(total, scale(is, lambda_is));
                    }
                }
            }

            backward(total);
            state.model->sgd_step(lr);
        }
        if (epoch == epochs - 1) {
            stats.rec_mean = rec_sum / static_cast<double>(batch.size());
            stats.pc_mean = pc_sum / static_cast<double>(batch.size());
            stats.is_mean = is_sum / static_cast<double>(batch.size());
        }
    }
    return stats;
}

DownloadMessage build_download(ServerState& state, UserId user,
                               const std::vector<UploadMessage>& uploads, int round,
                               int num_negatives, bool use_similar_group) {
    if (uploads.empty()) throw ProtocolError("build_download: no uploads this round");
    if (num_negatives < 0) throw InputError("build_download: negative candidate count");

    std::vector<const UploadMessage*> pool;
    auto git = state.similar_groups.find(user);
    if (use_similar_group && git != state.similar_groups.end() && !git->second.empty()) {
        std::set<UserId> members(git->second.begin(), git->second.end());
        for (const auto& up : uploads)
            if (members.count(up.user)) pool.push_back(&up);
    }
    if (pool.empty())
        for (const auto& up : uploads)
            if (up.user != user) pool.push_back(&up);
    if (pool.empty()) pool.push_back(&uploads.front());  // sole uploader distills itself

    const UploadMessage& base = *pool[state.rng.next_below(pool.size())];
    std::set<ItemId> present(base.items.begin(), base.items.end());

    Tape tape;
    Var enc = state.model->encode_from_start(tape, base.items);
    DownloadMessage msg;
    msg.user = user;
    msg.round = round;
    msg.payload.steps.resize(base.items.size());
    for (std::size_t t = 0; t < base.items.size(); ++t) {
        std::vector<ItemId> cands{base.items[t]};
        auto negs = draw_absent(state.model->config().num_items, present, num_negatives,
                                state.rng);
        cands.insert(cands.end(), negs.begin(), negs.end());
        Var scores =
            state.model->score_items(tape, row_at(enc, static_cast<int>(t)), cands);
        const Tensor& sv = tape.value(scores);
        auto& step = msg.payload.steps[t];
        step.reserve(cands.size());
        for (std::size_t i = 0; i < cands.size(); ++i)
            step.push_back({cands[i], sv.data[i]});
    }
    return msg;
}

std::vector<ItemId> recommend(ServerState& state, const UploadMessage& query, int k) {
    if (k < 1) throw InputError("recommend: k must be >= 1");
    Tape tape;
    Var enc = state.model->encode_from_start(tape, query.items);
    Var scores = state.model->score_all(
        tape, row_at(enc, static_cast<int>(query.items.size())));
    const Tensor& sv = tape.value(scores);

    std::set<ItemId> exclude(query.items.begin(), query.items.end());
    std::vector<std::pair<double, ItemId>> ranked;
    ranked.reserve(static_cast<std::size_t>(state.model->config().num_items));
    for (int j = 1; j <= state.model->config().num_items; ++j) {
        if (exclude.count(static_cast<ItemId>(j))) continue;
        ranked.emplace_back(sv.data[static_cast<std::size_t>(j - 1)], static_cast<ItemId>(j));
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<ItemId> out;
    out.reserve(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k)));
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i)
        out.push_back(ranked[i].second);
    return out;
}

}  // namespace ptffsr
