#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ptffsr/data.hpp"
#include "ptffsr/messages.hpp"
#include "ptffsr/models.hpp"

namespace ptffsr {

// Bit-exact little-endian wire formats. Communication accounting counts the
// byte strings these functions actually produce, never estimates.
//
//   upload    : 0x50, ver, user u32, round u32, len u16, items u32 each
//   download  : 0x51, ver, user u32, round u32, steps u16,
//               per step: candidate count u8, then (item u32, score f64) pairs
//   checkpoint: "PTFM", ver, arch u8, five config i32, params f64 in
//               declaration order
//   corpus    : "PTFC", ver, counts, name tables, length-prefixed sequences

constexpr std::uint8_t kUploadMagic = 0x50;
constexpr std::uint8_t kDownloadMagic = 0x51;
constexpr std::uint8_t kWireVersion = 1;

std::vector<std::uint8_t> encode_upload(const UploadMessage& msg);
UploadMessage decode_upload(std::span<const std::uint8_t> bytes);
constexpr std::size_t upload_encoded_size(std::size_t seq_len) { return 12 + 4 * seq_len; }

std::vector<std::uint8_t> encode_download(const DownloadMessage& msg);
DownloadMessage decode_download(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_checkpoint(const SeqModel& model);
std::unique_ptr<SeqModel> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const SeqModel& model);
std::unique_ptr<SeqModel> load_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus);
Corpus decode_corpus(std::span<const std::uint8_t> bytes);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace ptffsr
