#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>

#include "ptffsr/codec.hpp"
#include "ptffsr/errors.hpp"

using namespace ptffsr;

TEST_CASE("upload encoding is bit-exact: 12 + 4T bytes, little-endian fields") {
    UploadMessage msg;
    msg.user = 0x0102;
    msg.round = 7;
    msg.items = {1, 2, 0x01000000};
    auto bytes = encode_upload(msg);
    REQUIRE(bytes.size() == upload_encoded_size(3));
    REQUIRE(bytes.size() == 24);
    CHECK(bytes[0] == 0x50);
    CHECK(bytes[1] == 1);
    CHECK(bytes[2] == 0x02);  // user low byte first
    CHECK(bytes[3] == 0x01);
    CHECK(bytes[6] == 7);  // round
    CHECK(bytes[10] == 3); // length
    CHECK(bytes[12] == 1); // first item id
    CHECK(bytes[19] == 0); // last item id spans 4 bytes LE
    CHECK(bytes[23] == 0x01);
    CHECK(decode_upload(bytes) == msg);
}

TEST_CASE("upload size formula holds for the paper-default sequence length") {
    UploadMessage msg;
    msg.user = 1;
    msg.round = 0;
    msg.items.assign(20, 5);
    CHECK(encode_upload(msg).size() == 92);
}

TEST_CASE("download messages round-trip and match the size formula") {
    DownloadMessage msg;
    msg.user = 42;
    msg.round = 3;
    msg.payload.steps = {{{7, 1.25}, {9, -0.5}}, {{2, 0.0}, {3, 1e-9}, {4, -3.75}}};
    auto bytes = encode_download(msg);
    std::size_t expected = 12;
    for (const auto& s : msg.payload.steps) expected += 1 + 12 * s.size();
    CHECK(bytes.size() == expected);
    CHECK(decode_download(bytes) == msg);
}

TEST_CASE("decoders reject bad magic, version, and truncation") {
    UploadMessage msg;
    msg.user = 1;
    msg.round = 1;
    msg.items = {1, 2};
    auto bytes = encode_upload(msg);
    auto bad_magic = bytes;
    bad_magic[0] = 0x51;
    CHECK_THROWS_AS(decode_upload(bad_magic), IoError);
    auto bad_version = bytes;
    bad_version[1] = 9;
    CHECK_THROWS_AS(decode_upload(bad_version), IoError);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_upload(truncated), IoError);
    auto padded = bytes;
    padded.push_back(0);
    CHECK_THROWS_AS(decode_upload(padded), IoError);
}

TEST_CASE("checkpoints restore config and bit-exact parameters") {
    for (Arch arch : {Arch::gru4rec, Arch::sasrec}) {
        auto model = make_model(ModelConfig::client_preset(arch, 12), 31337);
        auto bytes = encode_checkpoint(*model);
        // fixed header: magic(4) + version + arch + 5 * i32
        CHECK(bytes.size() == 26 + 8 * model->param_count());
        auto restored = decode_checkpoint(bytes);
        CHECK(restored->config().arch == arch);
        CHECK(restored->config().embed_dim == 8);
        CHECK(restored->config().num_items == 12);
        for (std::size_t p = 0; p < model->parameters().size(); ++p)
            CHECK(restored->parameters()[p]->value.data == model->parameters()[p]->value.data);
        CHECK(encode_checkpoint(*restored) == bytes);
    }
}

TEST_CASE("checkpoint files round-trip through disk") {
    auto model = make_model(ModelConfig::server_preset(Arch::sasrec, 9), 5);
    auto path = std::filesystem::temp_directory_path() /
                ("ptffsr_ckpt_" + std::to_string(::getpid()) + ".bin");
    save_checkpoint(path.string(), *model);
    auto restored = load_checkpoint(path.string());
    CHECK(encode_checkpoint(*restored) == encode_checkpoint(*model));
    std::filesystem::remove(path);
}

TEST_CASE("corpus caches round-trip exactly") {
    Corpus corpus = synth_corpus(15, 25, 1, 7);
    auto bytes = encode_corpus(corpus);
    Corpus restored = decode_corpus(bytes);
    CHECK(restored == corpus);
    CHECK(encode_corpus(restored) == bytes);
}

TEST_CASE("corpus decode rejects foreign bytes") {
    auto model = make_model(ModelConfig::client_preset(Arch::sasrec, 4), 1);
    CHECK_THROWS_AS(decode_corpus(encode_checkpoint(*model)), IoError);
}
