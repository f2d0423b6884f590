#pragma once

#include <span>
#include <string>
#include <vector>

#include "ptffsr/protocol.hpp"

namespace ptffsr {

enum class AblationAxis { beta, epsilon, lambda_pc, lambda_is, group_size, sharing };

std::string ablation_axis_name(AblationAxis a);
AblationAxis ablation_axis_from_name(const std::string& s);

struct AblationRow {
    std::string axis;
    double value = 0.0;  // for sharing: 1 = similarity (+SK), 0 = uniform (-SK)
    bool is_default_row = false;
    EvalResult test;
};

// One full run per value with the single knob changed, plus the unchanged
// base config as a reference row. Each cell reports the final-round
// test-split metrics of the server model.
std::vector<AblationRow> ablation_grid(const Corpus& corpus, const ProtocolConfig& base,
                                       AblationAxis axis, std::span<const double> values);

// CSV with the swept axis as first column.
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace ptffsr
