#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptffsr/client.hpp"
#include "ptffsr/data.hpp"
#include "ptffsr/eval.hpp"
#include "ptffsr/server.hpp"

namespace ptffsr {

enum class Mode { ptf, fedavg, local };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

struct ProtocolConfig {
    Mode mode = Mode::ptf;
    std::uint64_t seed = 1;
    int global_rounds = 20;
    int subround_size = 64;

    double beta = 0.5;
    double epsilon = 1.0;
    double lambda_pc = 0.01;
    double lambda_is = 0.01;
    int group_size = 5;
    double temperature = 1.0;

    double lr_client = 0.05;
    double lr_server = 0.01;
    int client_epochs = 5;
    int server_epochs = 2;
    int num_negatives = 1;
    int shared_capacity = 1;
    int batch_cap = 1024;
    SoftLabelLossKind soft_loss = SoftLabelLossKind::bce;
    bool similarity_sharing = true;  // false: uniform (-SK) knowledge sharing

    Arch client_arch = Arch::sasrec;
    int client_dim = 8;
    int client_layers = 1;
    Arch server_arch = Arch::sasrec;
    int server_dim = 32;
    int server_layers = 2;
    int max_seq_len = 20;

    int eval_every = 0;  // 0: evaluate only after the final round
    int eval_k = 20;
    int threads = 1;

    void validate() const;  // throws ConfigError before round 0
    ModelConfig client_model(int num_items) const;
    ModelConfig server_model(int num_items) const;
};

// JSON config file: flat object, all keys optional, unknown keys rejected.
ProtocolConfig config_from_json_text(const std::string& text);
ProtocolConfig load_config(const std::string& path);
std::string config_to_json_text(const ProtocolConfig& cfg);

// Byte accounting. Every entry records the length of a message encoding that
// was actually produced; ptf mode never estimates.
struct CommLedger {
    struct Entry {
        int round = 0;
        int subround = 0;
        UserId user = 0;
        bool upstream = false;  // client -> server
        std::uint64_t bytes = 0;
    };
    std::vector<Entry> entries;

    std::uint64_t total(bool upstream) const;
    std::uint64_t round_total(int round, bool upstream) const;
    std::uint64_t client_total(UserId user) const;
    std::size_t message_count(bool upstream) const;
};

struct CommSummary {
    double avg_up_bytes_per_client_round = 0.0;
    double avg_down_bytes_per_client_round = 0.0;
    std::uint64_t total_up = 0;
    std::uint64_t total_down = 0;
};

// Per-client per-round averages by direction (client-round = one user's
// participation in one global round).
CommSummary comm_summary(const CommLedger& ledger);

struct RoundReport {
    int round = 0;
    std::vector<std::vector<UserId>> subrounds;  // participation audit trail
    double mean_client_loss = 0.0;
    double server_rec = 0.0;
    double server_pc = 0.0;
    double server_is = 0.0;
    std::uint64_t up_bytes = 0;
    std::uint64_t down_bytes = 0;
    std::optional<EvalResult> eval;  // test split, when scheduled
};

std::string round_report_to_json(const RoundReport& report);
void write_reports_ndjson(const std::string& path, const std::vector<RoundReport>& reports);
void write_comm_csv(const std::string& path, const CommLedger& ledger,
                    const std::vector<RoundReport>& reports, Mode mode);

struct RunResult {
    std::vector<RoundReport> reports;
    CommLedger ledger;
    // Retained message log; re-encoding it must reproduce the ledger.
    std::vector<UploadMessage> uploads;
    std::vector<DownloadMessage> downloads;
    ServerState server;                     // ptf mode
    std::unique_ptr<SeqModel> fedavg_model; // fedavg mode
    std::vector<MetricsRow> metrics;
};

// PTF round loop: shuffle the user queue with a round-seeded RNG, traverse
// it in subrounds, each selected client trains locally then uploads a
// perturbed sequence; the server ingests the subround (sorted by user id),
// trains with the contrastive objective and sends per-uploader downloads.
RunResult run_ptf(const Corpus& corpus, const ProtocolConfig& cfg);

// Parameter-transmission baseline: the server-preset model on every client,
// broadcast / local Eq.-style training / uniform parameter averaging per
// subround. Bytes are actual checkpoint encodings per direction per client.
RunResult run_fedavg_baseline(const Corpus& corpus, const ProtocolConfig& cfg);

struct LocalOnlyResult {
    EvalResult val;
    EvalResult test;
    std::vector<MetricsRow> metrics;
};

// No-federation control: every client trains alone for the same number of
// rounds and epochs; metrics average each user's own model on its own target.
LocalOnlyResult local_only_baseline(const Corpus& corpus, const ProtocolConfig& cfg);

}  // namespace ptffsr
