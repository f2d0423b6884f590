#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ptffsr/rng.hpp"
#include "ptffsr/tensor.hpp"
#include "ptffsr/types.hpp"

namespace ptffsr {

enum class Arch { gru4rec, sasrec };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct ModelConfig {
    Arch arch = Arch::sasrec;
    int embed_dim = 8;
    int hidden_dim = 8;
    int num_layers = 1;
    int max_seq_len = 20;
    int num_items = 0;

    // Scoring is the inner product of the step latent with the item
    // embedding table, so hidden_dim must equal embed_dim.
    void validate() const;

    // Small on-device model: d=8, one block.
    static ModelConfig client_preset(Arch a, int num_items, int max_seq_len = 20);
    // Confidential server model: d=32, two blocks.
    static ModelConfig server_preset(Arch a, int num_items, int max_seq_len = 20);
};

// Common interface of the two ID-based sequence encoders. Row 0 of the item
// embedding table is padding (never gathered, never updated); row
// num_items+1 is a learned start-of-sequence token used to condition
// predictions that have no prefix yet.
class SeqModel {
  public:
    SeqModel(ModelConfig cfg, std::uint64_t init_seed);
    virtual ~SeqModel() = default;

    const ModelConfig& config() const { return cfg_; }
    ItemId start_id() const { return static_cast<ItemId>(cfg_.num_items + 1); }

    // Causal per-step latents for items in [1, num_items]; output
    // [len x hidden]: row t depends only on seq[0..t].
    Var encode(Tape& tape, std::span<const ItemId> seq);

    // Start token followed by seq; output [len+1 x hidden]. Row t is the
    // state after consuming t items, so row 0 conditions the first
    // prediction of a sequence.
    Var encode_from_start(Tape& tape, std::span<const ItemId> seq);

    // Inner-product scores of e_t ([1 x hidden]) against all item
    // embeddings; [1 x num_items], column j-1 is item j. Padding and the
    // start token are excluded.
    Var score_all(Tape& tape, Var e_t);

    // Scores restricted to a candidate list; [1 x items.size()].
    Var score_items(Tape& tape, Var e_t, std::span<const ItemId> items);

    std::span<Param* const> parameters() { return params_; }
    std::span<const Param* const> parameters() const {
        return {params_.data(), params_.size()};
    }
    std::size_t param_count() const;
    void zero_grad();
    void sgd_step(double lr);

    Param& item_embeddings() { return emb_; }
    const Param& item_embeddings() const { return emb_; }

  protected:
    // ids may include the start token; bounds already validated.
    virtual Var encode_ids(Tape& tape, std::span<const ItemId> ids) = 0;

    Param* add_param(Tensor init);
    Param* add_matrix(int rows, int cols, RandomStream& rng);

    ModelConfig cfg_;
    Param emb_;

  private:
    std::vector<Param*> params_;
    std::vector<std::unique_ptr<Param>> owned_;
    void check_ids(std::span<const ItemId> seq, bool allow_empty) const;
};

std::unique_ptr<SeqModel> make_model(const ModelConfig& cfg, std::uint64_t init_seed);

// Closed-form parameter count for a config; models assert against it.
std::size_t expected_param_count(const ModelConfig& cfg);

// ---- training objectives ----

// Sampled-softmax-free sequence loss: -sum_t [ log s(pos_t) +
// sum_k log(1 - s(neg_tk)) ] with s the logistic function, computed through
// log-sigmoid for saturation safety. pos_scores is [1 x T], neg_scores is
// [T x k] (row t holds step t's negatives).
Var rec_loss(Var pos_scores, Var neg_scores);

enum class SoftLabelLossKind { bce, mse };

// Distillation loss against server-provided raw scores. bce: binary cross
// entropy between s(pred) and s(label) per candidate, summed — minimized
// exactly when pred matches labels, and degrades to the hard-label loss as
// labels saturate. mse: squared error on raw scores.
Var soft_label_loss(Var pred_scores, std::span<const double> soft_labels,
                    SoftLabelLossKind kind = SoftLabelLossKind::bce);

}  // namespace ptffsr
