#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "smec/error.hpp"
#include "smec/evaluation.hpp"
#include "smec/grad.hpp"
#include "smec/trainer.hpp"

namespace smec {

/// Shortest round-trip decimal form, so CSVs are byte-stable.
inline std::string format_number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("format_number: conversion failed");
    return std::string(buf, end);
}

inline std::string format_number(std::size_t v) { return std::to_string(v); }

/// RFC-4180 field quoting.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add(std::vector<std::string> row) {
        if (row.size() != header_.size()) throw std::invalid_argument("CsvTable: row width mismatch");
        rows_.push_back(std::move(row));
    }

    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (i) out += ',';
                out += csv_field(r[i]);
            }
            out += "\r\n";
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

    void save(const std::string& path) const { write_file(path, str()); }

    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// One row per step: losses, variance and one column per parameter group.
inline CsvTable stage_report_table(const StageReport& rep) {
    std::vector<std::string> header{"step", "epoch", "train_loss", "val_loss", "grad_variance"};
    if (!rep.series.empty()) {
        for (const auto& [label, mean] : rep.series.front().grad.group_means) header.push_back("mean_abs_grad " + label);
    }
    CsvTable t(header);
    for (const auto& s : rep.series) {
        std::vector<std::string> row{format_number(s.step), format_number(s.epoch), format_number(s.train_loss),
                                     format_number(s.val_loss), format_number(s.grad.total_variance)};
        for (const auto& [label, mean] : s.grad.group_means) row.push_back(format_number(mean));
        t.add(std::move(row));
    }
    return t;
}

/// Long format: step, group_label, mean_abs_grad, total_variance.
inline CsvTable gradient_table(const std::vector<StageReport>& reports) {
    CsvTable t({"step", "group_label", "mean_abs_grad", "total_variance"});
    std::size_t offset = 0;
    for (const auto& rep : reports) {
        for (const auto& s : rep.series) {
            for (const auto& [label, mean] : s.grad.group_means) {
                t.add({format_number(offset + s.step), label, format_number(mean), format_number(s.grad.total_variance)});
            }
        }
        offset += rep.steps;
    }
    return t;
}

/// Per-epoch validation loss of consecutive reports.
inline CsvTable val_loss_table(const std::vector<StageReport>& reports) {
    CsvTable t({"epoch", "stage_out_dim", "val_loss"});
    std::size_t epoch = 0;
    for (const auto& rep : reports) {
        for (double v : rep.val_series) t.add({format_number(++epoch), format_number(rep.out_dim), format_number(v)});
    }
    return t;
}

inline CsvTable retrieval_table(const RetrievalReport& rep) {
    CsvTable t({"query_id", "ndcg@10", "zero_relevant"});
    for (const auto& q : rep.per_query) t.add({q.query_id, format_number(q.ndcg), q.zero_relevant ? "1" : "0"});
    t.add({"mean", format_number(rep.mean), format_number(rep.zero_relevant)});
    return t;
}

inline CsvTable scaling_table(const ScalingResult& res) {
    CsvTable t({"dim", "mean_projection_norm", "mean_grad"});
    for (const auto& r : res.rows) t.add({format_number(r.dim), format_number(r.mean_projection_norm), format_number(r.mean_grad)});
    return t;
}

inline CsvTable scaling_ratio_table(const ScalingResult& res) {
    CsvTable t({"dim_a", "dim_b", "measured", "predicted", "relative_error"});
    for (const auto& r : res.ratios) {
        t.add({format_number(r.dim_a), format_number(r.dim_b), format_number(r.measured), format_number(r.predicted),
               format_number(r.relative_error())});
    }
    return t;
}

inline CsvTable ablation_table(const std::vector<AblationRow>& rows) {
    std::vector<std::string> header{"method"};
    if (!rows.empty()) {
        for (auto it = rows.front().ndcg.rbegin(); it != rows.front().ndcg.rend(); ++it) header.push_back("ndcg@10 d=" + std::to_string(it->first));
    }
    CsvTable t(header);
    for (const auto& r : rows) {
        std::vector<std::string> row{r.name};
        for (auto it = r.ndcg.rbegin(); it != r.ndcg.rend(); ++it) row.push_back(format_number(it->second));
        t.add(std::move(row));
    }
    return t;
}

inline std::string ware_json(const WareReport& rep) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json values = nlohmann::ordered_json::object();
    for (std::size_t d = 0; d < rep.values.size(); ++d) values[std::to_string(d)] = rep.values[d];
    j["ware"] = values;
    j["ranking"] = rep.ranking;
    j["excluded_pairs"] = rep.excluded;
    return j.dump(2) + "\n";
}

}  // namespace smec
