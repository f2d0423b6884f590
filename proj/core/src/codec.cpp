#include "ptffsr/codec.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ptffsr/errors.hpp"

namespace ptffsr {

namespace {

constexpr std::uint8_t kCheckpointMagic[4] = {'P', 'T', 'F', 'M'};
constexpr std::uint8_t kCorpusMagic[4] = {'P', 'T', 'F', 'C'};

void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_i32(std::vector<std::uint8_t>& b, std::int32_t v) {
    put_u32(b, static_cast<std::uint32_t>(v));
}

void put_f64(std::vector<std::uint8_t>& b, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

void put_string(std::vector<std::uint8_t>& b, const std::string& s) {
    if (s.size() > 0xffff) throw InputError("string too long for codec");
    put_u16(b, static_cast<std::uint16_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw IoError("truncated message");
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return std::bit_cast<double>(v);
    }
    std::string str() {
        std::uint16_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    void done() const {
        if (pos != bytes.size()) throw IoError("trailing bytes after message");
    }
};

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

std::vector<std::uint8_t> encode_upload(const UploadMessage& msg) {
    if (msg.items.size() > 0xffff) throw InputError("upload sequence too long");
    std::vector<std::uint8_t> b;
    b.reserve(upload_encoded_size(msg.items.size()));
    put_u8(b, kUploadMagic);
    put_u8(b, kWireVersion);
    put_u32(b, static_cast<std::uint32_t>(msg.user));
    put_u32(b, static_cast<std::uint32_t>(msg.round));
    put_u16(b, static_cast<std::uint16_t>(msg.items.size()));
    for (ItemId id : msg.items) put_u32(b, static_cast<std::uint32_t>(id));
    return b;
}

UploadMessage decode_upload(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    if (r.u8() != kUploadMagic) throw IoError("not an upload message");
    if (r.u8() != kWireVersion) throw IoError("unsupported upload version");
    UploadMessage msg;
    msg.user = static_cast<UserId>(r.u32());
    msg.round = r.i32();
    std::uint16_t n = r.u16();
    msg.items.reserve(n);
    for (int i = 0; i < n; ++i) msg.items.push_back(static_cast<ItemId>(r.u32()));
    r.done();
    return msg;
}

std::vector<std::uint8_t> encode_download(const DownloadMessage& msg) {
    if (msg.payload.steps.size() > 0xffff) throw InputError("download sequence too long");
    std::vector<std::uint8_t> b;
    put_u8(b, kDownloadMagic);
    put_u8(b, kWireVersion);
    put_u32(b, static_cast<std::uint32_t>(msg.user));
    put_u32(b, static_cast<std::uint32_t>(msg.round));
    put_u16(b, static_cast<std::uint16_t>(msg.payload.steps.size()));
    for (const auto& step : msg.payload.steps) {
        if (step.empty() || step.size() > 0xff)
            throw InputError("download step candidate count out of range");
        put_u8(b, static_cast<std::uint8_t>(step.size()));
        for (const auto& c : step) {
            put_u32(b, static_cast<std::uint32_t>(c.item));
            put_f64(b, c.score);
        }
    }
    return b;
}

DownloadMessage decode_download(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    if (r.u8() != kDownloadMagic) throw IoError("not a download message");
    if (r.u8() != kWireVersion) throw IoError("unsupported download version");
    DownloadMessage msg;
    msg.user = static_cast<UserId>(r.u32());
    msg.round = r.i32();
    std::uint16_t steps = r.u16();
    msg.payload.steps.resize(steps);
    for (int t = 0; t < steps; ++t) {
        std::uint8_t count = r.u8();
        auto& step = msg.payload.steps[static_cast<std::size_t>(t)];
        step.reserve(count);
        for (int i = 0; i < count; ++i) {
            SoftLabeledSequence::Candidate c;
            c.item = static_cast<ItemId>(r.u32());
            c.score = r.f64();
            step.push_back(c);
        }
    }
    r.done();
    return msg;
}

std::vector<std::uint8_t> encode_checkpoint(const SeqModel& model) {
    const ModelConfig& cfg = model.config();
    std::vector<std::uint8_t> b;
    b.insert(b.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u8(b, kWireVersion);
    put_u8(b, cfg.arch == Arch::gru4rec ? 0 : 1);
    put_i32(b, cfg.embed_dim);
    put_i32(b, cfg.hidden_dim);
    put_i32(b, cfg.num_layers);
    put_i32(b, cfg.max_seq_len);
    put_i32(b, cfg.num_items);
    for (const Param* p : model.parameters())
        for (double v : p->value.data) put_f64(b, v);
    return b;
}

std::unique_ptr<SeqModel> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    for (std::uint8_t m : kCheckpointMagic)
        if (r.u8() != m) throw IoError("not a model checkpoint");
    if (r.u8() != kWireVersion) throw IoError("unsupported checkpoint version");
    std::uint8_t arch = r.u8();
    if (arch > 1) throw IoError("unknown arch tag in checkpoint");
    ModelConfig cfg;
    cfg.arch = arch == 0 ? Arch::gru4rec : Arch::sasrec;
    cfg.embed_dim = r.i32();
    cfg.hidden_dim = r.i32();
    cfg.num_layers = r.i32();
    cfg.max_seq_len = r.i32();
    cfg.num_items = r.i32();
    auto model = make_model(cfg, 0);
    for (Param* p : model->parameters())
        for (double& v : p->value.data) v = r.f64();
    r.done();
    return model;
}

void save_checkpoint(const std::string& path, const SeqModel& model) {
    write_file(path, encode_checkpoint(model));
}

std::unique_ptr<SeqModel> load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file(path));
}

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus) {
    std::vector<std::uint8_t> b;
    b.insert(b.end(), std::begin(kCorpusMagic), std::end(kCorpusMagic));
    put_u8(b, kWireVersion);
    put_u32(b, static_cast<std::uint32_t>(corpus.num_users));
    put_u32(b, static_cast<std::uint32_t>(corpus.num_items));
    for (const auto& name : corpus.user_names) put_string(b, name);
    for (const auto& name : corpus.item_names) put_string(b, name);
    for (const auto& seq : corpus.sequences) {
        if (seq.items.size() > 0xffff) throw InputError("sequence too long for codec");
        put_u32(b, static_cast<std::uint32_t>(seq.user));
        put_u16(b, static_cast<std::uint16_t>(seq.items.size()));
        for (ItemId id : seq.items) put_u32(b, static_cast<std::uint32_t>(id));
        put_u32(b, static_cast<std::uint32_t>(seq.val_item));
        put_u32(b, static_cast<std::uint32_t>(seq.test_item));
    }
    return b;
}

Corpus decode_corpus(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    for (std::uint8_t m : kCorpusMagic)
        if (r.u8() != m) throw IoError("not a corpus cache");
    if (r.u8() != kWireVersion) throw IoError("unsupported corpus version");
    Corpus corpus;
    corpus.num_users = static_cast<int>(r.u32());
    corpus.num_items = static_cast<int>(r.u32());
    for (int i = 0; i < corpus.num_users; ++i) {
        corpus.user_names.push_back(r.str());
        corpus.user_ids.emplace(corpus.user_names.back(), static_cast<UserId>(i + 1));
    }
    for (int i = 0; i < corpus.num_items; ++i) {
        corpus.item_names.push_back(r.str());
        corpus.item_ids.emplace(corpus.item_names.back(), static_cast<ItemId>(i + 1));
    }
    for (int i = 0; i < corpus.num_users; ++i) {
        InteractionSequence seq;
        seq.user = static_cast<UserId>(r.u32());
        std::uint16_t n = r.u16();
        seq.items.reserve(n);
        for (int j = 0; j < n; ++j) seq.items.push_back(static_cast<ItemId>(r.u32()));
        seq.val_item = static_cast<ItemId>(r.u32());
        seq.test_item = static_cast<ItemId>(r.u32());
        seq.trained_items.insert(seq.items.begin(), seq.items.end());
        seq.interacted = seq.trained_items;
        seq.interacted.insert(seq.val_item);
        seq.interacted.insert(seq.test_item);
        corpus.sequences.push_back(std::move(seq));
    }
    r.done();
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    write_file(path, encode_corpus(corpus));
}

Corpus load_corpus(const std::string& path) { return decode_corpus(read_file(path)); }

}  // namespace ptffsr
