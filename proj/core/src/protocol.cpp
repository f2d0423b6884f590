#include "ptffsr/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "ptffsr/codec.hpp"
#include "ptffsr/errors.hpp"

namespace ptffsr {

using nlohmann::json;

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::ptf: return "ptf";
        case Mode::fedavg: return "fedavg";
        case Mode::local: return "local";
    }
    return "ptf";
}

Mode mode_from_name(const std::string& s) {
    if (s == "ptf") return Mode::ptf;
    if (s == "fedavg") return Mode::fedavg;
    if (s == "local") return Mode::local;
    throw ConfigError("unknown mode: " + s);
}

void ProtocolConfig::validate() const {
    if (global_rounds < 0) throw ConfigError("global_rounds must be >= 0");
    if (subround_size < 1) throw ConfigError("subround_size must be >= 1");
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must be in [0, 1]");
    if (beta > 0.0 && epsilon <= 0.0) throw ConfigError("epsilon must be > 0 when beta > 0");
    if (lambda_pc < 0.0 || lambda_is < 0.0) throw ConfigError("lambda weights must be >= 0");
    if (group_size < 0) throw ConfigError("group_size must be >= 0");
    if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
    if (lr_client <= 0.0 || lr_server <= 0.0) throw ConfigError("learning rates must be > 0");
    if (client_epochs < 0 || server_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (num_negatives < 1) throw ConfigError("num_negatives must be >= 1");
    if (num_negatives > 254) throw ConfigError("num_negatives must fit the download codec (<= 254)");
    if (shared_capacity < 0) throw ConfigError("shared_capacity must be >= 0");
    if (batch_cap < 1) throw ConfigError("batch_cap must be >= 1");
    if (client_dim < 1 || client_layers < 1 || server_dim < 1 || server_layers < 1)
        throw ConfigError("model dims/layers must be >= 1");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
    if (threads < 0) throw ConfigError("threads must be >= 0");
}

ModelConfig ProtocolConfig::client_model(int num_items) const {
    return ModelConfig{client_arch, client_dim, client_dim, client_layers, max_seq_len, num_items};
}

ModelConfig ProtocolConfig::server_model(int num_items) const {
    return ModelConfig{server_arch, server_dim, server_dim, server_layers, max_seq_len, num_items};
}

namespace {

std::string soft_loss_name(SoftLabelLossKind k) {
    return k == SoftLabelLossKind::bce ? "bce" : "mse";
}

SoftLabelLossKind soft_loss_from_name(const std::string& s) {
    if (s == "bce") return SoftLabelLossKind::bce;
    if (s == "mse") return SoftLabelLossKind::mse;
    throw ConfigError("unknown soft_loss: " + s);
}

}  // namespace

ProtocolConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    ProtocolConfig cfg;
    const std::vector<std::string> known = {
        "mode",          "seed",          "global_rounds",   "subround_size",
        "beta",          "epsilon",       "lambda_pc",       "lambda_is",
        "group_size",    "temperature",   "lr_client",       "lr_server",
        "client_epochs", "server_epochs", "num_negatives",   "shared_capacity",
        "batch_cap",     "soft_loss",     "similarity_sharing", "client_arch",
        "client_dim",    "client_layers", "server_arch",     "server_dim",
        "server_layers", "max_seq_len",   "eval_every",      "eval_k",
        "threads"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown config key: " + key);

    try {
        if (j.contains("mode")) cfg.mode = mode_from_name(j["mode"].get<std::string>());
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("global_rounds")) cfg.global_rounds = j["global_rounds"].get<int>();
        if (j.contains("subround_size")) cfg.subround_size = j["subround_size"].get<int>();
        if (j.contains("beta")) cfg.beta = j["beta"].get<double>();
        if (j.contains("epsilon")) cfg.epsilon = j["epsilon"].get<double>();
        if (j.contains("lambda_pc")) cfg.lambda_pc = j["lambda_pc"].get<double>();
        if (j.contains("lambda_is")) cfg.lambda_is = j["lambda_is"].get<double>();
        if (j.contains("group_size")) cfg.group_size = j["group_size"].get<int>();
        if (j.contains("temperature")) cfg.temperature = j["temperature"].get<double>();
        if (j.contains("lr_client")) cfg.lr_client = j["lr_client"].get<double>();
        if (j.contains("lr_server")) cfg.lr_server = j["lr_server"].get<double>();
        if (j.contains("client_epochs")) cfg.client_epochs = j["client_epochs"].get<int>();
        if (j.contains("server_epochs")) cfg.server_epochs = j["server_epochs"].get<int>();
        if (j.contains("num_negatives")) cfg.num_negatives = j["num_negatives"].get<int>();
        if (j.contains("shared_capacity")) cfg.shared_capacity = j["shared_capacity"].get<int>();
        if (j.contains("batch_cap")) cfg.batch_cap = j["batch_cap"].get<int>();
        if (j.contains("soft_loss"))
            cfg.soft_loss = soft_loss_from_name(j["soft_loss"].get<std::string>());
        if (j.contains("similarity_sharing"))
            cfg.similarity_sharing = j["similarity_sharing"].get<bool>();
        if (j.contains("client_arch"))
            cfg.client_arch = arch_from_name(j["client_arch"].get<std::string>());
        if (j.contains("client_dim")) cfg.client_dim = j["client_dim"].get<int>();
        if (j.contains("client_layers")) cfg.client_layers = j["client_layers"].get<int>();
        if (j.contains("server_arch"))
            cfg.server_arch = arch_from_name(j["server_arch"].get<std::string>());
        if (j.contains("server_dim")) cfg.server_dim = j["server_dim"].get<int>();
        if (j.contains("server_layers")) cfg.server_layers = j["server_layers"].get<int>();
        if (j.contains("max_seq_len")) cfg.max_seq_len = j["max_seq_len"].get<int>();
        if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<int>();
        if (j.contains("eval_k")) cfg.eval_k = j["eval_k"].get<int>();
        if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ProtocolConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json_text(const ProtocolConfig& cfg) {
    json j;
    j["mode"] = mode_name(cfg.mode);
    j["seed"] = cfg.seed;
    j["global_rounds"] = cfg.global_rounds;
    j["subround_size"] = cfg.subround_size;
    j["beta"] = cfg.beta;
    j["epsilon"] = cfg.epsilon;
    j["lambda_pc"] = cfg.lambda_pc;
    j["lambda_is"] = cfg.lambda_is;
    j["group_size"] = cfg.group_size;
    j["temperature"] = cfg.temperature;
    j["lr_client"] = cfg.lr_client;
    j["lr_server"] = cfg.lr_server;
    j["client_epochs"] = cfg.client_epochs;
    j["server_epochs"] = cfg.server_epochs;
    j["num_negatives"] = cfg.num_negatives;
    j["shared_capacity"] = cfg.shared_capacity;
    j["batch_cap"] = cfg.batch_cap;
    j["soft_loss"] = soft_loss_name(cfg.soft_loss);
    j["similarity_sharing"] = cfg.similarity_sharing;
    j["client_arch"] = arch_name(cfg.client_arch);
    j["client_dim"] = cfg.client_dim;
    j["client_layers"] = cfg.client_layers;
    j["server_arch"] = arch_name(cfg.server_arch);
    j["server_dim"] = cfg.server_dim;
    j["server_layers"] = cfg.server_layers;
    j["max_seq_len"] = cfg.max_seq_len;
    j["eval_every"] = cfg.eval_every;
    j["eval_k"] = cfg.eval_k;
    j["threads"] = cfg.threads;
    return j.dump(2);
}

// ---- ledger ----

std::uint64_t CommLedger::total(bool upstream) const {
    std::uint64_t n = 0;
    for (const auto& e : entries)
        if (e.upstream == upstream) n += e.bytes;
    return n;
}

std::uint64_t CommLedger::round_total(int round, bool upstream) const {
    std::uint64_t n = 0;
    for (const auto& e : entries)
        if (e.round == round && e.upstream == upstream) n += e.bytes;
    return n;
}

std::uint64_t CommLedger::client_total(UserId user) const {
    std::uint64_t n = 0;
    for (const auto& e : entries)
        if (e.user == user) n += e.bytes;
    return n;
}

std::size_t CommLedger::message_count(bool upstream) const {
    std::size_t n = 0;
    for (const auto& e : entries)
        if (e.upstream == upstream) ++n;
    return n;
}

CommSummary comm_summary(const CommLedger& ledger) {
    CommSummary s;
    s.total_up = ledger.total(true);
    s.total_down = ledger.total(false);
    std::set<std::pair<int, UserId>> up_cr, down_cr;
    for (const auto& e : ledger.entries)
        (e.upstream ? up_cr : down_cr).insert({e.round, e.user});
    if (!up_cr.empty())
        s.avg_up_bytes_per_client_round = static_cast<double>(s.total_up) / up_cr.size();
    if (!down_cr.empty())
        s.avg_down_bytes_per_client_round = static_cast<double>(s.total_down) / down_cr.size();
    return s;
}

// ---- reports ----

std::string round_report_to_json(const RoundReport& report) {
    json j;
    j["round"] = report.round;
    j["subrounds"] = report.subrounds;
    j["mean_client_loss"] = report.mean_client_loss;
    j["server_rec"] = report.server_rec;
    j["server_pc"] = report.server_pc;
    j["server_is"] = report.server_is;
    j["up_bytes"] = report.up_bytes;
    j["down_bytes"] = report.down_bytes;
    if (report.eval) {
        j["eval"] = {{"k", report.eval->k},
                     {"hr", report.eval->hr},
                     {"ndcg", report.eval->ndcg},
                     {"users", report.eval->num_users},
                     {"mode", report.eval->mode}};
    } else {
        j["eval"] = nullptr;
    }
    return j.dump();
}

void write_reports_ndjson(const std::string& path, const std::vector<RoundReport>& reports) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& r : reports) out << round_report_to_json(r) << "\n";
}

void write_comm_csv(const std::string& path, const CommLedger& ledger,
                    const std::vector<RoundReport>& reports, Mode mode) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "mode,round,participants,up_messages,up_bytes,down_messages,down_bytes\n";
    for (const auto& r : reports) {
        std::size_t participants = 0, up_msgs = 0, down_msgs = 0;
        for (const auto& s : r.subrounds) participants += s.size();
        for (const auto& e : ledger.entries)
            if (e.round == r.round) ++(e.upstream ? up_msgs : down_msgs);
        out << mode_name(mode) << ',' << r.round << ',' << participants << ',' << up_msgs << ','
            << ledger.round_total(r.round, true) << ',' << down_msgs << ','
            << ledger.round_total(r.round, false) << "\n";
    }
    CommSummary s = comm_summary(ledger);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,all,,%zu,%llu,%zu,%llu\n", mode_name(mode).c_str(),
                  ledger.message_count(true), static_cast<unsigned long long>(s.total_up),
                  ledger.message_count(false), static_cast<unsigned long long>(s.total_down));
    out << buf;
}

// ---- orchestration ----

namespace {

std::vector<std::vector<UserId>> shuffled_subrounds(int num_users, int subround_size,
                                                    std::uint64_t seed, int round) {
    std::vector<UserId> order(static_cast<std::size_t>(num_users));
    for (int i = 0; i < num_users; ++i) order[static_cast<std::size_t>(i)] = i + 1;
    RandomStream rng(derive_seed(seed, RngPurpose::shuffle, {static_cast<std::uint64_t>(round)}));
    rng.shuffle(order);
    std::vector<std::vector<UserId>> subrounds;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(subround_size)) {
        std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(subround_size));
        subrounds.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return subrounds;
}

// Client work items are independent; run them on `threads` workers. Results
// land in caller-indexed slots so scheduling cannot affect the outcome.
void for_each_index(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const int workers = std::min<int>(threads, static_cast<int>(count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = static_cast<std::size_t>(w); i < count;
                 i += static_cast<std::size_t>(workers))
                fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

std::vector<ClientState> make_clients(const Corpus& corpus, const ModelConfig& model_cfg,
                                      std::uint64_t seed) {
    std::vector<ClientState> clients;
    clients.reserve(corpus.sequences.size());
    for (const auto& seq : corpus.sequences) {
        clients.emplace_back(seq.user,
                             make_model(model_cfg, derive_seed(seed, RngPurpose::model_init,
                                                               {static_cast<std::uint64_t>(seq.user)})),
                             seq, corpus.num_items);
    }
    return clients;
}

}  // namespace

RunResult run_ptf(const Corpus& corpus, const ProtocolConfig& cfg) {
    cfg.validate();
    if (corpus.sequences.empty()) throw ProtocolError("run_ptf: empty corpus");
    if (cfg.beta == 0.0)
        std::cerr << "warning: beta = 0 disables upload perturbation (privacy off)\n";

    RunResult rr;
    rr.server.model = make_model(cfg.server_model(corpus.num_items),
                                 derive_seed(cfg.seed, RngPurpose::model_init, {0}));
    rr.server.temperature = cfg.temperature;
    auto clients = make_clients(corpus, cfg.client_model(corpus.num_items), cfg.seed);
    const int num_users = corpus.num_users;

    for (int round = 0; round < cfg.global_rounds; ++round) {
        RoundReport report;
        report.round = round;
        report.subrounds = shuffled_subrounds(num_users, cfg.subround_size, cfg.seed, round);

        double loss_sum = 0.0;
        double rec_w = 0.0, pc_w = 0.0, is_w = 0.0;
        std::size_t uploads_total = 0;

        for (std::size_t sub = 0; sub < report.subrounds.size(); ++sub) {
            const auto& cohort = report.subrounds[sub];
            std::vector<double> losses(cohort.size(), 0.0);
            std::vector<UploadMessage> uploads(cohort.size());

            for_each_index(cohort.size(), cfg.threads, [&](std::size_t i) {
                ClientState& c = clients[static_cast<std::size_t>(cohort[i] - 1)];
                reseed_client(c, cfg.seed, round);
                losses[i] = client_train(c, cfg.client_epochs, cfg.lr_client, cfg.num_negatives,
                                         cfg.soft_loss);
                uploads[i] = build_upload(c, round, cfg.beta, cfg.epsilon).message;
            });
            for (double l : losses) loss_sum += l;

            std::sort(uploads.begin(), uploads.end(),
                      [](const auto& a, const auto& b) { return a.user < b.user; });
            for (const auto& up : uploads) {
                auto bytes = encode_upload(up);
                rr.ledger.entries.push_back(
                    {round, static_cast<int>(sub), up.user, true, bytes.size()});
                rr.uploads.push_back(up);
                ingest_upload(rr.server, up);
            }

            rr.server.rng = RandomStream(derive_seed(
                cfg.seed, RngPurpose::server_round,
                {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(sub)}));
            build_similar_groups(rr.server, uploads, cfg.group_size);
            auto stats = server_train(rr.server, uploads, cfg.server_epochs, cfg.batch_cap,
                                      cfg.lambda_pc, cfg.lambda_is, cfg.lr_server,
                                      cfg.num_negatives);
            rec_w += stats.rec_mean * stats.uploads;
            pc_w += stats.pc_mean * stats.uploads;
            is_w += stats.is_mean * stats.uploads;
            uploads_total += static_cast<std::size_t>(stats.uploads);

            for (const auto& up : uploads) {
                DownloadMessage dm = build_download(rr.server, up.user, uploads, round,
                                                    cfg.num_negatives, cfg.similarity_sharing);
                auto bytes = encode_download(dm);
                rr.ledger.entries.push_back(
                    {round, static_cast<int>(sub), up.user, false, bytes.size()});
                rr.downloads.push_back(dm);
                receive_download(clients[static_cast<std::size_t>(up.user - 1)], dm,
                                 static_cast<std::size_t>(cfg.shared_capacity));
            }
        }

        report.mean_client_loss = num_users > 0 ? loss_sum / num_users : 0.0;
        if (uploads_total > 0) {
            report.server_rec = rec_w / static_cast<double>(uploads_total);
            report.server_pc = pc_w / static_cast<double>(uploads_total);
            report.server_is = is_w / static_cast<double>(uploads_total);
        }
        report.up_bytes = rr.ledger.round_total(round, true);
        report.down_bytes = rr.ledger.round_total(round, false);

        const bool last = round == cfg.global_rounds - 1;
        if (last || (cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0)) {
            report.eval = evaluate(*rr.server.model, corpus, cfg.eval_k, EvalSplit::test, "ptf");
            rr.metrics.push_back({"ptf", round, *report.eval});
        }
        rr.reports.push_back(std::move(report));
    }

    if (cfg.global_rounds > 0) {
        rr.metrics.push_back({"ptf-val", cfg.global_rounds - 1,
                              evaluate(*rr.server.model, corpus, cfg.eval_k, EvalSplit::val,
                                       "ptf-val")});
        // Privacy-faithful readout: the server is queried with a perturbed
        // sequence, exactly as a deployed client would at inference time.
        std::map<UserId, std::vector<ItemId>> contexts;
        for (auto& c : clients) {
            reseed_client(c, cfg.seed, cfg.global_rounds);
            auto up = build_upload(c, cfg.global_rounds, cfg.beta, cfg.epsilon);
            contexts[c.user] = up.message.items;
        }
        rr.metrics.push_back({"ptf-private", cfg.global_rounds - 1,
                              evaluate_with_contexts(*rr.server.model, corpus, contexts,
                                                     cfg.eval_k, EvalSplit::test, "ptf-private")});
    }
    return rr;
}

RunResult run_fedavg_baseline(const Corpus& corpus, const ProtocolConfig& cfg) {
    cfg.validate();
    if (corpus.sequences.empty()) throw ProtocolError("run_fedavg_baseline: empty corpus");

    RunResult rr;
    // Homogeneous setting: every client runs the server-preset model.
    const ModelConfig model_cfg = cfg.server_model(corpus.num_items);
    rr.fedavg_model = make_model(model_cfg, derive_seed(cfg.seed, RngPurpose::model_init, {0}));
    auto clients = make_clients(corpus, model_cfg, cfg.seed);
    const int num_users = corpus.num_users;

    for (int round = 0; round < cfg.global_rounds; ++round) {
        RoundReport report;
        report.round = round;
        report.subrounds = shuffled_subrounds(num_users, cfg.subround_size, cfg.seed, round);
        double loss_sum = 0.0;

        for (std::size_t sub = 0; sub < report.subrounds.size(); ++sub) {
            const auto& cohort = report.subrounds[sub];
            const std::uint64_t ckpt_bytes = encode_checkpoint(*rr.fedavg_model).size();

            // Broadcast current global parameters.
            for (UserId user : cohort) {
                ClientState& c = clients[static_cast<std::size_t>(user - 1)];
                auto src = rr.fedavg_model->parameters();
                auto dst = c.model->parameters();
                for (std::size_t p = 0; p < src.size(); ++p) dst[p]->value = src[p]->value;
                rr.ledger.entries.push_back({round, static_cast<int>(sub), user, false, ckpt_bytes});
            }

            std::vector<double> losses(cohort.size(), 0.0);
            for_each_index(cohort.size(), cfg.threads, [&](std::size_t i) {
                ClientState& c = clients[static_cast<std::size_t>(cohort[i] - 1)];
                reseed_client(c, cfg.seed, round);
                losses[i] = client_train(c, cfg.client_epochs, cfg.lr_client, cfg.num_negatives,
                                         cfg.soft_loss);
            });
            for (double l : losses) loss_sum += l;

            // Upload full parameters; aggregate with a uniform average.
            std::vector<UserId> sorted(cohort.begin(), cohort.end());
            std::sort(sorted.begin(), sorted.end());
            auto global_params = rr.fedavg_model->parameters();
            for (std::size_t p = 0; p < global_params.size(); ++p)
                std::fill(global_params[p]->value.data.begin(),
                          global_params[p]->value.data.end(), 0.0);
            for (UserId user : sorted) {
                ClientState& c = clients[static_cast<std::size_t>(user - 1)];
                const std::uint64_t up_bytes = encode_checkpoint(*c.model).size();
                rr.ledger.entries.push_back({round, static_cast<int>(sub), user, true, up_bytes});
                auto src = c.model->parameters();
                for (std::size_t p = 0; p < src.size(); ++p)
                    for (std::size_t i = 0; i < src[p]->value.data.size(); ++i)
                        global_params[p]->value.data[i] += src[p]->value.data[i];
            }
            const double inv = 1.0 / static_cast<double>(sorted.size());
            for (std::size_t p = 0; p < global_params.size(); ++p)
                for (double& v : global_params[p]->value.data) v *= inv;
        }

        report.mean_client_loss = num_users > 0 ? loss_sum / num_users : 0.0;
        report.up_bytes = rr.ledger.round_total(round, true);
        report.down_bytes = rr.ledger.round_total(round, false);
        const bool last = round == cfg.global_rounds - 1;
        if (last || (cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0)) {
            report.eval =
                evaluate(*rr.fedavg_model, corpus, cfg.eval_k, EvalSplit::test, "fedavg");
            rr.metrics.push_back({"fedavg", round, *report.eval});
        }
        rr.reports.push_back(std::move(report));
    }
    if (cfg.global_rounds > 0)
        rr.metrics.push_back({"fedavg-val", cfg.global_rounds - 1,
                              evaluate(*rr.fedavg_model, corpus, cfg.eval_k, EvalSplit::val,
                                       "fedavg-val")});
    return rr;
}

LocalOnlyResult local_only_baseline(const Corpus& corpus, const ProtocolConfig& cfg) {
    cfg.validate();
    if (corpus.sequences.empty()) throw ProtocolError("local_only_baseline: empty corpus");

    auto clients = make_clients(corpus, cfg.client_model(corpus.num_items), cfg.seed);
    for_each_index(clients.size(), cfg.threads, [&](std::size_t i) {
        for (int round = 0; round < cfg.global_rounds; ++round) {
            reseed_client(clients[i], cfg.seed, round);
            if (cfg.client_epochs > 0)
                client_train(clients[i], cfg.client_epochs, cfg.lr_client, cfg.num_negatives,
                             cfg.soft_loss);
        }
    });

    LocalOnlyResult res;
    for (EvalSplit split : {EvalSplit::val, EvalSplit::test}) {
        EvalResult agg;
        agg.k = cfg.eval_k;
        agg.mode = split == EvalSplit::val ? "local-val" : "local";
        double hr_sum = 0.0, ndcg_sum = 0.0;
        for (auto& c : clients) {
            const auto& seq = c.private_data;
            const ItemId target = split == EvalSplit::val ? seq.val_item : seq.test_item;
            std::vector<ItemId> context = seq.items;
            if (split == EvalSplit::test) context.push_back(seq.val_item);
            std::set<ItemId> exclude(seq.items.begin(), seq.items.end());
            if (split == EvalSplit::test) exclude.insert(seq.val_item);
            exclude.erase(target);

            Tape tape;
            Var enc = c.model->encode_from_start(tape, context);
            Var scores =
                c.model->score_all(tape, row_at(enc, static_cast<int>(context.size())));
            const int rank = rank_of_target(tape.value(scores).data, target, exclude);
            if (rank <= cfg.eval_k) {
                hr_sum += 1.0;
                ndcg_sum += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
            }
            ++agg.num_users;
        }
        if (agg.num_users > 0) {
            agg.hr = hr_sum / agg.num_users;
            agg.ndcg = ndcg_sum / agg.num_users;
        }
        (split == EvalSplit::val ? res.val : res.test) = agg;
        res.metrics.push_back({agg.mode, cfg.global_rounds - 1, agg});
    }
    return res;
}

}  // namespace ptffsr
