#include "ptffsr/models.hpp"

#include <cassert>
#include <cmath>

#include "ptffsr/errors.hpp"

namespace ptffsr {

std::string arch_name(Arch a) { return a == Arch::gru4rec ? "gru4rec" : "sasrec"; }

Arch arch_from_name(const std::string& s) {
    if (s == "gru4rec") return Arch::gru4rec;
    if (s == "sasrec") return Arch::sasrec;
    throw ConfigError("unknown model arch: " + s);
}

void ModelConfig::validate() const {
    if (embed_dim <= 0 || hidden_dim <= 0 || num_layers <= 0 || max_seq_len <= 0)
        throw ConfigError("model dims must be positive");
    if (num_items <= 0) throw ConfigError("num_items must be positive");
    if (hidden_dim != embed_dim)
        throw ConfigError("hidden_dim must equal embed_dim (inner-product scoring)");
}

ModelConfig ModelConfig::client_preset(Arch a, int num_items, int max_seq_len) {
    return ModelConfig{a, 8, 8, 1, max_seq_len, num_items};
}

ModelConfig ModelConfig::server_preset(Arch a, int num_items, int max_seq_len) {
    return ModelConfig{a, 32, 32, 2, max_seq_len, num_items};
}

namespace {

Tensor uniform_init(int rows, int cols, RandomStream& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = rng.next_double(-0.1, 0.1);
    return t;
}

}  // namespace

SeqModel::SeqModel(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg), emb_(Tensor::zeros({cfg.num_items + 2, cfg.embed_dim})) {
    cfg_.validate();
    RandomStream rng(init_seed);
    emb_.value = uniform_init(cfg_.num_items + 2, cfg_.embed_dim, rng);
    params_.push_back(&emb_);
}

Param* SeqModel::add_param(Tensor init) {
    owned_.push_back(std::make_unique<Param>(std::move(init)));
    params_.push_back(owned_.back().get());
    return owned_.back().get();
}

Param* SeqModel::add_matrix(int rows, int cols, RandomStream& rng) {
    return add_param(uniform_init(rows, cols, rng));
}

std::size_t SeqModel::param_count() const {
    std::size_t n = 0;
    for (const Param* p : params_) n += p->value.size();
    return n;
}

void SeqModel::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

void SeqModel::sgd_step(double lr) {
    for (Param* p : params_)
        for (std::size_t i = 0; i < p->value.data.size(); ++i)
            p->value.data[i] -= lr * p->grad.data[i];
}

void SeqModel::check_ids(std::span<const ItemId> seq, bool allow_empty) const {
    if (seq.empty() && !allow_empty) throw InputError("encode: empty sequence");
    if (static_cast<int>(seq.size()) > cfg_.max_seq_len)
        throw InputError("encode: sequence longer than max_seq_len");
    for (ItemId id : seq)
        if (id < 1 || id > cfg_.num_items) throw InputError("encode: item id out of range");
}

Var SeqModel::encode(Tape& tape, std::span<const ItemId> seq) {
    check_ids(seq, false);
    return encode_ids(tape, seq);
}

Var SeqModel::encode_from_start(Tape& tape, std::span<const ItemId> seq) {
    check_ids(seq, true);
    std::vector<ItemId> ids;
    ids.reserve(seq.size() + 1);
    ids.push_back(start_id());
    ids.insert(ids.end(), seq.begin(), seq.end());
    return encode_ids(tape, ids);
}

Var SeqModel::score_all(Tape& tape, Var e_t) {
    Var table = tape.param(emb_);
    Var items = slice_rows(table, 1, cfg_.num_items + 1);
    return matmul(e_t, transpose(items));
}

Var SeqModel::score_items(Tape& tape, Var e_t, std::span<const ItemId> items) {
    if (items.empty()) throw InputError("score_items: empty candidate list");
    std::vector<std::int32_t> rows(items.begin(), items.end());
    for (std::int32_t r : rows)
        if (r < 1 || r > cfg_.num_items) throw InputError("score_items: item id out of range");
    Var table = tape.param(emb_);
    return matmul(e_t, transpose(gather_rows(table, rows)));
}

// ---- GRU4Rec ----

namespace {

class Gru4Rec final : public SeqModel {
  public:
    Gru4Rec(ModelConfig cfg, std::uint64_t seed) : SeqModel(cfg, seed) {
        RandomStream rng(splitmix64(seed ^ 0x67727534u));  // distinct stream from embeddings
        const int d = cfg_.embed_dim;
        layers_.resize(static_cast<std::size_t>(cfg_.num_layers));
        for (auto& l : layers_) {
            l.wz = add_matrix(d, d, rng);
            l.uz = add_matrix(d, d, rng);
            l.bz = add_matrix(1, d, rng);
            l.wr = add_matrix(d, d, rng);
            l.ur = add_matrix(d, d, rng);
            l.br = add_matrix(1, d, rng);
            l.wh = add_matrix(d, d, rng);
            l.uh = add_matrix(d, d, rng);
            l.bh = add_matrix(1, d, rng);
        }
        assert(param_count() == expected_param_count(cfg_));
    }

  protected:
    Var encode_ids(Tape& tape, std::span<const ItemId> ids) override {
        const int d = cfg_.embed_dim;
        std::vector<std::int32_t> rows(ids.begin(), ids.end());
        Var x_all = gather_rows(tape.param(emb_), rows);
        Var ones = tape.constant(Tensor::full({1, d}, 1.0));
        Var zero = tape.constant(Tensor::zeros({1, d}));

        std::vector<Var> hidden(layers_.size(), zero);
        std::vector<Var> outputs;
        outputs.reserve(ids.size());
        for (std::size_t t = 0; t < ids.size(); ++t) {
            Var x = row_at(x_all, static_cast<int>(t));
            for (std::size_t li = 0; li < layers_.size(); ++li) {
                const Layer& l = layers_[li];
                Var h = hidden[li];
                Var z = sigmoid(add(add(matmul(x, tape.param(*l.wz)), matmul(h, tape.param(*l.uz))),
                                    tape.param(*l.bz)));
                Var r = sigmoid(add(add(matmul(x, tape.param(*l.wr)), matmul(h, tape.param(*l.ur))),
                                    tape.param(*l.br)));
                Var cand = tanh_op(
                    add(add(matmul(x, tape.param(*l.wh)), matmul(mul(r, h), tape.param(*l.uh))),
                        tape.param(*l.bh)));
                Var hnew = add(mul(sub(ones, z), h), mul(z, cand));
                hidden[li] = hnew;
                x = hnew;  // next layer consumes this layer's state
            }
            outputs.push_back(hidden.back());
        }
        return stack_rows(outputs);
    }

  private:
    struct Layer {
        Param *wz, *uz, *bz, *wr, *ur, *br, *wh, *uh, *bh;
    };
    std::vector<Layer> layers_;
};

// ---- SASRec ----

class SasRec final : public SeqModel {
  public:
    SasRec(ModelConfig cfg, std::uint64_t seed) : SeqModel(cfg, seed) {
        RandomStream rng(splitmix64(seed ^ 0x73617332u));
        const int d = cfg_.embed_dim;
        // One extra position for the start token.
        pos_ = add_matrix(cfg_.max_seq_len + 1, d, rng);
        blocks_.resize(static_cast<std::size_t>(cfg_.num_layers));
        for (auto& b : blocks_) {
            b.ln1_g = add_param(Tensor::full({1, d}, 1.0));
            b.ln1_b = add_param(Tensor::zeros({1, d}));
            b.wq = add_matrix(d, d, rng);
            b.wk = add_matrix(d, d, rng);
            b.wv = add_matrix(d, d, rng);
            b.wo = add_matrix(d, d, rng);
            b.ln2_g = add_param(Tensor::full({1, d}, 1.0));
            b.ln2_b = add_param(Tensor::zeros({1, d}));
            b.w1 = add_matrix(d, d, rng);
            b.b1 = add_matrix(1, d, rng);
            b.w2 = add_matrix(d, d, rng);
            b.b2 = add_matrix(1, d, rng);
        }
        lnf_g_ = add_param(Tensor::full({1, d}, 1.0));
        lnf_b_ = add_param(Tensor::zeros({1, d}));
        assert(param_count() == expected_param_count(cfg_));
    }

  protected:
    Var encode_ids(Tape& tape, std::span<const ItemId> ids) override {
        const int n = static_cast<int>(ids.size());
        const int d = cfg_.embed_dim;
        std::vector<std::int32_t> rows(ids.begin(), ids.end());
        std::vector<std::int32_t> positions(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;

        Var x = add(gather_rows(tape.param(emb_), rows),
                    gather_rows(tape.param(*pos_), positions));

        // Additive causal mask: position i may attend to positions <= i.
        Tensor mask = Tensor::zeros({n, n});
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) mask.at(i, j) = -1e9;
        Var mask_v = tape.constant(std::move(mask));
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

        for (const Block& b : blocks_) {
            Var a = layer_norm_rows(x, tape.param(*b.ln1_g), tape.param(*b.ln1_b));
            Var q = matmul(a, tape.param(*b.wq));
            Var k = matmul(a, tape.param(*b.wk));
            Var v = matmul(a, tape.param(*b.wv));
            Var att = softmax_rows(add(scale(matmul(q, transpose(k)), inv_sqrt_d), mask_v));
            Var h = matmul(matmul(att, v), tape.param(*b.wo));
            x = add(x, h);

            Var f = layer_norm_rows(x, tape.param(*b.ln2_g), tape.param(*b.ln2_b));
            f = relu(add_row_vec(matmul(f, tape.param(*b.w1)), tape.param(*b.b1)));
            f = add_row_vec(matmul(f, tape.param(*b.w2)), tape.param(*b.b2));
            x = add(x, f);
        }
        return layer_norm_rows(x, tape.param(*lnf_g_), tape.param(*lnf_b_));
    }

  private:
    struct Block {
        Param *ln1_g, *ln1_b, *wq, *wk, *wv, *wo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    };
    Param* pos_ = nullptr;
    std::vector<Block> blocks_;
    Param *lnf_g_ = nullptr, *lnf_b_ = nullptr;
};

}  // namespace

std::unique_ptr<SeqModel> make_model(const ModelConfig& cfg, std::uint64_t init_seed) {
    cfg.validate();
    if (cfg.arch == Arch::gru4rec) return std::make_unique<Gru4Rec>(cfg, init_seed);
    return std::make_unique<SasRec>(cfg, init_seed);
}

std::size_t expected_param_count(const ModelConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t layers = static_cast<std::size_t>(cfg.num_layers);
    std::size_t n = static_cast<std::size_t>(cfg.num_items + 2) * d;  // pad + items + start
    if (cfg.arch == Arch::gru4rec) {
        n += layers * (6 * d * d + 3 * d);
    } else {
        n += static_cast<std::size_t>(cfg.max_seq_len + 1) * d;  // positions incl. start slot
        n += layers * (6 * d * d + 6 * d);
        n += 2 * d;  // final norm
    }
    return n;
}

// ---- losses ----

Var rec_loss(Var pos_scores, Var neg_scores) {
    Tape* t = pos_scores.tape;
    const int steps = static_cast<int>(t->value(pos_scores).size());
    if (steps == 0) throw InputError("rec_loss: empty sequence");
    if (t->value(neg_scores).rows() != steps)
        throw InputError("rec_loss: need one negative-score row per positive position");
    Var pos_term = sum_all(log_sigmoid(pos_scores));
    Var neg_term = sum_all(log_sigmoid(scale(neg_scores, -1.0)));
    return scale(add(pos_term, neg_term), -1.0);
}

Var soft_label_loss(Var pred_scores, std::span<const double> soft_labels,
                    SoftLabelLossKind kind) {
    Tape* t = pred_scores.tape;
    // Copy the shape: pushing nodes below may reallocate the tape arena.
    const std::vector<int> shape = t->value(pred_scores).shape;
    if (t->value(pred_scores).size() != soft_labels.size())
        throw InputError("soft_label_loss: prediction/label length mismatch");
    if (soft_labels.empty()) throw InputError("soft_label_loss: empty candidate list");
    if (kind == SoftLabelLossKind::mse) {
        Var labels = t->constant(
            Tensor(shape, std::vector<double>(soft_labels.begin(), soft_labels.end())));
        Var d = sub(pred_scores, labels);
        return sum_all(mul(d, d));
    }
    std::vector<double> w(soft_labels.size()), wc(soft_labels.size());
    for (std::size_t i = 0; i < soft_labels.size(); ++i) {
        w[i] = kernel::sigmoid(soft_labels[i]);
        wc[i] = 1.0 - w[i];
    }
    Var w_pos = t->constant(Tensor(shape, std::move(w)));
    Var w_neg = t->constant(Tensor(shape, std::move(wc)));
    Var ll = add(mul(w_pos, log_sigmoid(pred_scores)),
                 mul(w_neg, log_sigmoid(scale(pred_scores, -1.0))));
    return scale(sum_all(ll), -1.0);
}

}  // namespace ptffsr
