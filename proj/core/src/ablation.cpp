#include "ptffsr/ablation.hpp"

#include <cstdio>
#include <fstream>

#include "ptffsr/errors.hpp"

namespace ptffsr {

std::string ablation_axis_name(AblationAxis a) {
    switch (a) {
        case AblationAxis::beta: return "beta";
        case AblationAxis::epsilon: return "epsilon";
        case AblationAxis::lambda_pc: return "lambda_pc";
        case AblationAxis::lambda_is: return "lambda_is";
        case AblationAxis::group_size: return "group_size";
        case AblationAxis::sharing: return "sharing";
    }
    return "beta";
}

AblationAxis ablation_axis_from_name(const std::string& s) {
    if (s == "beta") return AblationAxis::beta;
    if (s == "epsilon") return AblationAxis::epsilon;
    if (s == "lambda_pc") return AblationAxis::lambda_pc;
    if (s == "lambda_is") return AblationAxis::lambda_is;
    if (s == "group_size" || s == "K") return AblationAxis::group_size;
    if (s == "sharing") return AblationAxis::sharing;
    throw ConfigError("unknown ablation axis: " + s);
}

namespace {

ProtocolConfig with_value(const ProtocolConfig& base, AblationAxis axis, double v) {
    ProtocolConfig cfg = base;
    switch (axis) {
        case AblationAxis::beta: cfg.beta = v; break;
        case AblationAxis::epsilon: cfg.epsilon = v; break;
        case AblationAxis::lambda_pc: cfg.lambda_pc = v; break;
        case AblationAxis::lambda_is: cfg.lambda_is = v; break;
        case AblationAxis::group_size: cfg.group_size = static_cast<int>(v); break;
        case AblationAxis::sharing: cfg.similarity_sharing = v != 0.0; break;
    }
    return cfg;
}

}  // namespace

std::vector<AblationRow> ablation_grid(const Corpus& corpus, const ProtocolConfig& base,
                                       AblationAxis axis, std::span<const double> values) {
    std::vector<AblationRow> rows;
    const std::string axis_str = ablation_axis_name(axis);
    for (double v : values) {
        ProtocolConfig cfg = with_value(base, axis, v);
        RunResult rr = run_ptf(corpus, cfg);
        AblationRow row;
        row.axis = axis_str;
        row.value = v;
        row.test = evaluate(*rr.server.model, corpus, cfg.eval_k, EvalSplit::test, "ptf");
        rows.push_back(std::move(row));
    }
    {
        RunResult rr = run_ptf(corpus, base);
        AblationRow row;
        row.axis = axis_str;
        switch (axis) {
            case AblationAxis::beta: row.value = base.beta; break;
            case AblationAxis::epsilon: row.value = base.epsilon; break;
            case AblationAxis::lambda_pc: row.value = base.lambda_pc; break;
            case AblationAxis::lambda_is: row.value = base.lambda_is; break;
            case AblationAxis::group_size: row.value = base.group_size; break;
            case AblationAxis::sharing: row.value = base.similarity_sharing ? 1.0 : 0.0; break;
        }
        row.is_default_row = true;
        row.test = evaluate(*rr.server.model, corpus, base.eval_k, EvalSplit::test, "ptf");
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    if (rows.empty()) throw InputError("no ablation rows to write");
    out << rows.front().axis << ",is_default,k,hr,ndcg,users\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%g,%d,%d,%.6f,%.6f,%d\n", r.value,
                      r.is_default_row ? 1 : 0, r.test.k, r.test.hr, r.test.ndcg,
                      r.test.num_users);
        out << buf;
    }
}

}  // namespace ptffsr
