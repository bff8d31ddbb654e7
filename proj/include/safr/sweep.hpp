#pragma once

#include "safr/eval.hpp"
#include "safr/train.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace safr {

/// One grid cell. `baseline` trains the plain transformer without the word mask.
struct SweepCell {
    bool baseline = false;
    double lambda_imp = 0.0;
    double lambda_inter = 0.0;

    [[nodiscard]] std::string label() const {
        if (baseline) return "baseline";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%g:%g", lambda_imp, lambda_inter);
        return buf;
    }

    friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

/// Parses "baseline" or "imp:inter".
[[nodiscard]] inline SweepCell parse_cell(const std::string& text) {
    if (text == "baseline") return {true, 0.0, 0.0};
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw InvalidInput("sweep cell '" + text + "' must be 'baseline' or 'imp:inter'");
    SweepCell c;
    try {
        std::size_t used = 0;
        const auto a = text.substr(0, colon);
        const auto b = text.substr(colon + 1);
        c.lambda_imp = std::stod(a, &used);
        if (used != a.size()) throw std::invalid_argument(a);
        c.lambda_inter = std::stod(b, &used);
        if (used != b.size()) throw std::invalid_argument(b);
    } catch (const std::logic_error&) {
        throw InvalidInput("sweep cell '" + text + "' has a non-numeric weight");
    }
    if (c.lambda_imp < 0.0 || c.lambda_inter < 0.0) throw InvalidInput("sweep cell '" + text + "' has a negative weight");
    return c;
}

inline const std::vector<double> kLambdaGrid = {0.0, 0.01, 0.1, 1.0, 100.0};

/// "ablation": the baseline plus the standard ablation cells.
/// "cartesian": every pair from the per-axis grid.
[[nodiscard]] inline std::vector<SweepCell> preset_grid(const std::string& name) {
    if (name == "ablation") {
        return {{true, 0, 0},      {false, 0, 0},       {false, 0, 0.01},  {false, 0, 1},   {false, 0, 100},
                {false, 0.01, 0},  {false, 0.01, 0.01}, {false, 0.1, 0.1}, {false, 0.1, 1}, {false, 1, 0},
                {false, 1, 0.1},   {false, 1, 1},       {false, 100, 0},   {false, 100, 100}};
    }
    if (name == "cartesian") {
        std::vector<SweepCell> out;
        for (double a : kLambdaGrid) {
            for (double b : kLambdaGrid) out.push_back({false, a, b});
        }
        return out;
    }
    throw InvalidInput("unknown sweep preset '" + name + "' (expected ablation or cartesian)");
}

struct SweepRow {
    SweepCell cell;
    bool ok = false;
    std::string error;
    double dev_accuracy = 0.0;
    SrsReport report;
};

struct SweepOptions {
    double k = 30.0;
    LayerTag layer = LayerTag::fc1;
    std::vector<std::uint64_t> random_seeds = kDefaultRandomSeeds;
    std::string eval_split = "test";
};

/// Trains and evaluates each cell in grid order. A cell that fails is recorded
/// with its error and the sweep moves on.
inline std::vector<SweepRow> run_sweep(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const Dataset& ds,
                                       const std::vector<SweepCell>& cells, const SweepOptions& opt = {},
                                       const std::function<void(const SweepRow&)>& on_row = {}) {
    if (cells.empty()) throw InvalidInput("sweep: empty grid");
    const auto& split = ds.split(opt.eval_split);
    std::vector<SweepRow> rows;
    for (const auto& cell : cells) {
        SweepRow row;
        row.cell = cell;
        try {
            auto mc = model_cfg;
            mc.use_vmask = !cell.baseline;
            auto tc = train_cfg;
            tc.lambda_imp = cell.lambda_imp;
            tc.lambda_inter = cell.lambda_inter;
            const auto result = train(mc, tc, ds);
            const auto model = result.checkpoint.model();
            row.dev_accuracy = result.checkpoint.dev_accuracy;
            row.report = srs(model, split, opt.k, opt.layer, opt.random_seeds);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(row);
        if (on_row) on_row(rows.back());
    }
    return rows;
}

inline void write_sweep_tsv(std::ostream& out, const std::vector<SweepRow>& rows, const std::string& dataset) {
    out << "dataset\tmodel\tlambda_imp\tlambda_inter\tacc_s\tacc_r\tacc_k\tsrs\tstatus\n";
    char buf[256];
    for (const auto& r : rows) {
        out << dataset << '\t' << (r.cell.baseline ? "baseline" : "vmask");
        std::snprintf(buf, sizeof buf, "\t%g\t%g", r.cell.lambda_imp, r.cell.lambda_inter);
        out << buf;
        if (r.ok) {
            std::snprintf(buf, sizeof buf, "\t%.2f\t%.2f\t%.2f\t%.2f\tok\n", r.report.acc_original, r.report.acc_random, r.report.acc_capacity,
                          r.report.srs);
            out << buf;
        } else {
            std::string msg = r.error;
            for (auto& ch : msg) {
                if (ch == '\t' || ch == '\n') ch = ' ';
            }
            out << "\tnan\tnan\tnan\tnan\tfailed: " << msg << "\n";
        }
    }
}

inline void write_sweep_tsv(const std::string& path, const std::vector<SweepRow>& rows, const std::string& dataset) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_sweep_tsv(out, rows, dataset);
}

} // namespace safr
