#pragma once

#include <cstdint>
#include <vector>

#include "ptffsr/types.hpp"

namespace ptffsr {

// Server-produced sequence with per-step candidate sets and raw score soft
// labels. Candidate 0 of every step is the sequence's own item at that step;
// the rest are sampled negatives.
struct SoftLabeledSequence {
    struct Candidate {
        ItemId item = 0;
        double score = 0.0;
        bool operator==(const Candidate&) const = default;
    };
    std::vector<std::vector<Candidate>> steps;

    std::vector<ItemId> base_items() const {
        std::vector<ItemId> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.front().item);
        return out;
    }

    bool operator==(const SoftLabeledSequence&) const = default;
};

// Client -> server: the privacy-perturbed training sequence for one round.
// Same length as the client's train sequence; every id is in V'_u.
struct UploadMessage {
    UserId user = 0;
    std::int32_t round = 0;
    std::vector<ItemId> items;

    bool operator==(const UploadMessage&) const = default;
};

// Server -> client: one soft-labeled sequence. The only message type that
// ever leaves the server, so model parameters never do.
struct DownloadMessage {
    UserId user = 0;
    std::int32_t round = 0;
    SoftLabeledSequence payload;

    bool operator==(const DownloadMessage&) const = default;
};

}  // namespace ptffsr
