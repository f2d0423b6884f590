#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ptffsr/client.hpp"
#include "ptffsr/errors.hpp"

using namespace ptffsr;

namespace {

ClientState make_client(const Corpus& corpus, std::size_t idx, std::uint64_t seed = 1) {
    ModelConfig cfg = ModelConfig::client_preset(Arch::sasrec, corpus.num_items);
    const auto& seq = corpus.sequences[idx];
    return ClientState(seq.user, make_model(cfg, seed), seq, corpus.num_items);
}

double tv_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::fabs(a[i] - b[i]);
    return 0.5 * d;
}

}  // namespace

TEST_CASE("exp_mech probabilities follow the closed form") {
    const std::vector<double> scores = {1.0, 0.0};
    auto p = exp_mech_probabilities(scores, 2.0, 1.0);
    const double e = std::exp(1.0);
    CHECK(p[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("exp_mech input validation") {
    RandomStream rng(1);
    const std::vector<double> empty;
    const std::vector<double> ok = {0.5, 0.5};
    const std::vector<double> out_of_range = {0.5, 1.5};
    CHECK_THROWS_AS(exp_mech_sample(empty, 1.0, 1.0, rng), InputError);
    CHECK_THROWS_AS(exp_mech_sample(ok, 0.0, 1.0, rng), InputError);
    CHECK_THROWS_AS(exp_mech_sample(ok, 1.0, 0.0, rng), InputError);
    CHECK_THROWS_AS(exp_mech_sample(out_of_range, 1.0, 1.0, rng), InputError);
}

TEST_CASE("exp_mech: vanishing epsilon approaches the uniform distribution") {
    std::vector<double> scores(10);
    for (std::size_t i = 0; i < scores.size(); ++i)
        scores[i] = static_cast<double>(i) / 9.0;
    RandomStream rng(42);
    std::vector<double> counts(10, 0.0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i)
        counts[exp_mech_sample(scores, 1e-6, 1.0, rng)] += 1.0 / draws;
    std::vector<double> uniform(10, 0.1);
    CHECK(tv_distance(counts, uniform) < 0.01);
}

TEST_CASE("exp_mech: empirical distribution matches the closed form within TV 0.01") {
    const std::vector<double> scores = {0.03, 0.91, 0.27, 0.55, 0.68, 0.14, 0.99, 0.42, 0.75, 0.08};
    const double eps = 1.0;
    auto expected = exp_mech_probabilities(scores, eps, 1.0);
    RandomStream rng(7);
    std::vector<double> counts(scores.size(), 0.0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[exp_mech_sample(scores, eps, 1.0, rng)] += 1.0 / draws;
    CHECK(tv_distance(counts, expected) < 0.01);
}

TEST_CASE("exp_mech: per-outcome probability ratio respects the epsilon bound") {
    RandomStream rng(13);
    for (double eps : {0.5, 1.0, 2.0}) {
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 2 + rng.next_below(9);
            std::vector<double> a(n), b;
            for (double& v : a) v = rng.next_double();
            b = a;
            // move one coordinate by at most delta = 1, staying in [0, 1]
            const std::size_t j = rng.next_below(n);
            b[j] = rng.next_double();
            auto pa = exp_mech_probabilities(a, eps, 1.0);
            auto pb = exp_mech_probabilities(b, eps, 1.0);
            double worst = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                worst = std::max(worst, std::max(pa[i] / pb[i], pb[i] / pa[i]));
            CHECK(worst <= std::exp(eps) + 1e-9);
        }
    }
}

TEST_CASE("exp_mech: raising a candidate's score strictly raises its probability") {
    RandomStream rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(6);
        for (double& v : s) v = rng.next_double(0.0, 0.9);
        auto before = exp_mech_probabilities(s, 1.5, 1.0);
        std::vector<double> raised = s;
        raised[2] += 0.1;
        auto after = exp_mech_probabilities(raised, 1.5, 1.0);
        CHECK(after[2] > before[2]);
    }
}

TEST_CASE("prefix_scores: singleton trained set, sigmoid range, restriction property") {
    Corpus corpus = synth_corpus(6, 30, 1, 5);
    ClientState c = make_client(corpus, 0);

    auto ps = prefix_scores(c, std::span<const ItemId>(c.private_data.items.data(), 2));
    CHECK(ps.candidates.size() == c.private_data.trained_items.size());
    for (double s : ps.scores) {
        CHECK(s > 0.0);
        CHECK(s < 1.0);
    }

    // restriction: sigmoid of the full score vector gathered at V'_u
    Tape tape;
    Var enc = c.model->encode_from_start(
        tape, std::span<const ItemId>(c.private_data.items.data(), 2));
    Var all = sigmoid(c.model->score_all(tape, row_at(enc, 2)));
    const Tensor& av = tape.value(all);
    for (std::size_t i = 0; i < ps.candidates.size(); ++i)
        CHECK(ps.scores[i] ==
              doctest::Approx(av.data[static_cast<std::size_t>(ps.candidates[i] - 1)])
                  .epsilon(1e-12));

    // a client whose trained set is a single item scores exactly that item
    ClientState solo = make_client(corpus, 1);
    solo.private_data.trained_items = {solo.private_data.items[0]};
    auto single = prefix_scores(solo, {});
    CHECK(single.candidates.size() == 1);
    RandomStream rng(3);
    CHECK(exp_mech_sample(single.scores, 1.0, 1.0, rng) == 0);
}

TEST_CASE("build_upload: beta 0 sends the true sequence") {
    Corpus corpus = synth_corpus(4, 20, 1, 9);
    ClientState c = make_client(corpus, 0);
    reseed_client(c, 1, 0);
    auto res = build_upload(c, 0, 0.0, 1.0);
    CHECK(res.message.items == c.private_data.items);
    CHECK(res.replaced_positions.empty());
}

TEST_CASE("build_upload: length preserved, ids confined to the trained set") {
    Corpus corpus = synth_corpus(8, 25, 1, 17);
    for (std::size_t idx = 0; idx < 3; ++idx) {
        ClientState c = make_client(corpus, idx);
        RandomStream neg_rng(5);
        sample_negatives(c.private_data, corpus.num_items, 0, 4, neg_rng);
        for (int round = 0; round < 3; ++round) {
            reseed_client(c, 11, round);
            auto res = build_upload(c, round, 0.6, 1.0);
            CHECK(res.message.items.size() == c.private_data.items.size());
            for (ItemId id : res.message.items)
                CHECK(c.private_data.trained_items.count(id) == 1);
        }
    }
}

TEST_CASE("build_upload: beta 0.5 over eight steps rewrites exactly four positions") {
    std::vector<RawInteraction> rows;
    for (int i = 0; i < 10; ++i) rows.push_back({"u", "i" + std::to_string(i), i});
    for (int i = 0; i < 10; ++i) rows.push_back({"v", "i" + std::to_string(i), i});
    Corpus corpus = preprocess(rows);
    ClientState c = make_client(corpus, 0);
    REQUIRE(c.private_data.items.size() == 8);
    for (int round = 0; round < 20; ++round) {
        reseed_client(c, 2, round);
        auto res = build_upload(c, round, 0.5, 1.0);
        CHECK(res.replaced_positions.size() == 4);
        std::set<int> replaced(res.replaced_positions.begin(), res.replaced_positions.end());
        for (std::size_t t = 0; t < 8; ++t)
            if (!replaced.count(static_cast<int>(t)))
                CHECK(res.message.items[t] == c.private_data.items[t]);
    }
}

TEST_CASE("build_upload: full replacement at vanishing epsilon overlaps like uniform draws") {
    Corpus corpus = synth_corpus(4, 30, 1, 23);
    ClientState c = make_client(corpus, 0);
    const double steps = static_cast<double>(c.private_data.items.size());
    const double pool = static_cast<double>(c.private_data.trained_items.size());
    const double p = 1.0 / pool;
    const int trials = 1000;
    double overlap = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        reseed_client(c, 31, trial);
        auto res = build_upload(c, trial, 1.0, 1e-6);
        for (std::size_t t = 0; t < res.message.items.size(); ++t)
            if (res.message.items[t] == c.private_data.items[t]) overlap += 1.0;
    }
    overlap /= trials;
    const double expected = steps * p;
    const double sigma = std::sqrt(steps * p * (1 - p) / trials);
    CHECK(std::fabs(overlap - expected) <= 3.0 * sigma + 1e-9);
}

TEST_CASE("build_upload: reproducible per round, varying across rounds") {
    Corpus corpus = synth_corpus(4, 25, 1, 41);
    ClientState a = make_client(corpus, 0, 7);
    ClientState b = make_client(corpus, 0, 7);
    reseed_client(a, 5, 3);
    reseed_client(b, 5, 3);
    auto ra = build_upload(a, 3, 0.8, 1.0);
    auto rb = build_upload(b, 3, 0.8, 1.0);
    CHECK(ra.message == rb.message);

    reseed_client(b, 5, 4);
    auto rc = build_upload(b, 4, 0.8, 1.0);
    CHECK(ra.message.items != rc.message.items);
}

TEST_CASE("client_train: loss composition matches an independent replay") {
    Corpus corpus = synth_corpus(5, 20, 1, 57);
    ClientState trained = make_client(corpus, 2, 99);
    reseed_client(trained, 123, 0);
    const double reported = client_train(trained, 1, 1e-9, 1);

    // Replay the single epoch with the same derived seed and an identical
    // model, assembling the objective out of the public pieces.
    ClientState replay = make_client(corpus, 2, 99);
    reseed_client(replay, 123, 0);
    Tape tape;
    Var enc = replay.model->encode_from_start(tape, replay.private_data.items);
    std::vector<Var> pos_rows, neg_rows;
    for (std::size_t t = 0; t < replay.private_data.items.size(); ++t) {
        Var e = row_at(enc, static_cast<int>(t));
        ItemId pos = replay.private_data.items[t];
        pos_rows.push_back(replay.model->score_items(tape, e, {&pos, 1}));
        auto negs = sample_negatives(replay.private_data, corpus.num_items,
                                     static_cast<int>(t), 1, replay.rng);
        neg_rows.push_back(replay.model->score_items(tape, e, negs));
    }
    const double expected =
        tape.value(rec_loss(stack_rows(pos_rows), stack_rows(neg_rows))).data[0];
    CHECK(reported == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("client_train: five epochs do not increase the loss (small lr, 5% slack)") {
    Corpus corpus = synth_corpus(6, 25, 1, 61);
    ClientState one = make_client(corpus, 0, 5);
    ClientState five = make_client(corpus, 0, 5);
    reseed_client(one, 9, 0);
    reseed_client(five, 9, 0);
    const double first = client_train(one, 1, 0.01, 1);
    const double last = client_train(five, 5, 0.01, 1);
    CHECK(last <= first * 1.05);
}

TEST_CASE("client_train: identical data and seed give identical parameters") {
    Corpus corpus = synth_corpus(6, 25, 1, 71);
    ClientState a = make_client(corpus, 1, 3);
    ClientState b = make_client(corpus, 1, 3);
    reseed_client(a, 17, 2);
    reseed_client(b, 17, 2);
    client_train(a, 3, 0.05, 2);
    client_train(b, 3, 0.05, 2);
    for (std::size_t p = 0; p < a.model->parameters().size(); ++p)
        CHECK(a.model->parameters()[p]->value.data == b.model->parameters()[p]->value.data);
}

TEST_CASE("client_train: soft-labeled shared data joins the objective") {
    Corpus corpus = synth_corpus(6, 25, 1, 81);
    ClientState plain = make_client(corpus, 0, 13);
    ClientState shared = make_client(corpus, 0, 13);
    SoftLabeledSequence s;
    s.steps = {{{1, 0.5}, {2, -0.5}}, {{3, 0.2}, {4, 0.0}}};
    shared.shared_data.push_back(s);
    reseed_client(plain, 23, 0);
    reseed_client(shared, 23, 0);
    const double lp = client_train(plain, 1, 1e-9, 1);
    const double ls = client_train(shared, 1, 1e-9, 1);
    CHECK(ls > lp);  // the BCE term is strictly positive here
}

TEST_CASE("receive_download keeps only the newest sequences up to capacity") {
    Corpus corpus = synth_corpus(4, 20, 1, 91);
    ClientState c = make_client(corpus, 0);
    for (int i = 0; i < 3; ++i) {
        DownloadMessage m;
        m.user = c.user;
        m.round = i;
        m.payload.steps = {{{static_cast<ItemId>(i + 1), 0.0}, {2, 0.0}}};
        receive_download(c, m, 1);
    }
    REQUIRE(c.shared_data.size() == 1);
    CHECK(c.shared_data[0].steps[0][0].item == 3);

    c.shared_data.clear();
    for (int i = 0; i < 3; ++i) {
        DownloadMessage m;
        m.user = c.user;
        m.round = i;
        m.payload.steps = {{{static_cast<ItemId>(i + 1), 0.0}, {2, 0.0}}};
        receive_download(c, m, 2);
    }
    CHECK(c.shared_data.size() == 2);
    CHECK(c.shared_data[0].steps[0][0].item == 2);
    CHECK(c.shared_data[1].steps[0][0].item == 3);
}
