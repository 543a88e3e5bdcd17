#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dite/config.hpp"
#include "dite/network.hpp"

namespace dite {

// Static parameter / FLOP analysis over a built model. FLOPs use the
// multiply-add convention (1 FLOP = 1 MAC). Convolution, matrix-multiply and
// pooling work is tallied as `macs`; normalization, activations, elementwise
// arithmetic and resampling are tallied separately as `aux` at one op per
// element. Reported totals carry both, and `table_flops()` (macs + aux) is
// the figure compared against published complexity tables.

struct LayerNode {
    std::string name;  // scope path, e.g. stage2.m0.b1.branch0.dsc
    std::string kind;  // dominant op kind within the scope
    Shape out_shape{0, 0, 0, 0};
    std::int64_t params = 0;
    double macs = 0;
    double aux = 0;
};

struct GroupTotal {
    std::string name;
    std::int64_t params = 0;
    double macs = 0;
    double aux = 0;
};

struct ComplexityReport {
    std::string config_id;
    int input_h = 0, input_w = 0;
    std::vector<LayerNode> nodes;
    std::vector<GroupTotal> groups;  // depth-1 and depth-2 scope rollups
    std::int64_t total_params = 0;
    std::int64_t head_params = 0;
    double mac_flops = 0;
    double aux_flops = 0;
    double head_mac_flops = 0;

    double total_flops() const { return mac_flops + aux_flops; }
    // Headline figure for table comparisons (norm/activation work included).
    double table_flops() const { return total_flops(); }
    double table_mflops() const { return table_flops() / 1e6; }
    double params_m() const { return static_cast<double>(total_params) / 1e6; }

    std::string to_json() const;
    std::string to_csv() const;
};

ComplexityReport analyze(Model<float>& model, int input_h, int input_w);

// Structured per-layer description of the built graph (kind, shapes, params);
// one entry per analyzer node, stable ordering.
std::string export_summary_json(Model<float>& model);

// ---------------------------------------------------------------------------
// hyper-parameter sweep
// ---------------------------------------------------------------------------

struct SweepCell {
    std::vector<int> g, n;
    std::int64_t params = 0;
    double mac_flops = 0;
    double table_flops = 0;
    std::string error;  // non-empty when the cell configuration is invalid

    bool ok() const { return error.empty(); }
};

struct SweepResult {
    int input_h = 0, input_w = 0;
    std::size_t cols = 0;  // cells are row-major over (g_rows x n_cols)
    std::vector<SweepCell> cells;
    bool params_monotone = true;  // params nondecreasing under componentwise (G,N) growth

    std::string to_json() const;
    std::string to_csv() const;
};

// One analyze() per (G row, N column) cell; invalid cells are reported
// per-cell and the sweep continues.
SweepResult sweep_hyperparams(const ModelConfig& base,
                              const std::vector<std::vector<int>>& g_rows,
                              const std::vector<std::vector<int>>& n_cols, int input_h,
                              int input_w);

// The published 16-cell ablation grid layout.
std::vector<std::vector<int>> sweep_default_g_rows();
std::vector<std::vector<int>> sweep_default_n_cols();

// ---------------------------------------------------------------------------
// expectation files
// ---------------------------------------------------------------------------

// CSV rows: config_id,input_h,input_w,params_m,mflops,tol_params,tol_flops
// config_id is "dite18", "dite30", or "dite18:G=a,b,c,d:N=a,b,c,d".
struct Expectation {
    std::string config_id;
    int input_h = 0, input_w = 0;
    double params_m = 0;
    double mflops = 0;
    double tol_params = 0.05;
    double tol_flops = 0.02;
};

struct VerifyEntry {
    Expectation expected;
    double got_params_m = 0;
    double got_mflops = 0;
    double params_rel_err = 0;
    double flops_rel_err = 0;
    bool pass = false;
    std::string note;
};

struct VerifyResult {
    std::vector<VerifyEntry> entries;
    std::vector<std::string> skipped;  // unparseable / unbuildable rows, listed but not fatal
    bool all_pass = true;

    std::string to_json() const;
};

std::vector<Expectation> load_expectations(const std::string& csv_path);
ModelConfig config_from_id(const std::string& config_id);
VerifyResult verify_against_expectations(const std::string& csv_path);

}  // namespace dite
