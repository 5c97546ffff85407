#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cft/model.hpp"
#include "cft/windows.hpp"

namespace cft {

// Closed-form mul-add count of one cross-attention layer under batch
// operation (every window padded to the largest). channels is the number of
// channels multiplied per query-key pair, i.e. the score projection width
// plus the value projection width.
uint64_t analytic_cost(SchemeKind kind, int64_t feat_h, int64_t feat_w, int64_t grid_h, int64_t grid_w,
                       int64_t channels);

// Same count without padding: sums the true window sizes of a built scheme.
uint64_t analytic_cost_exact(const WindowScheme& scheme, int64_t feat_h, int64_t feat_w, int64_t channels);

// Continuum area (in cells) of the largest polar sector.
double polar_largest_sector_area(int64_t grid_h, int64_t grid_w);

struct CostReport {
    SchemeKind kind = SchemeKind::kGlobal;
    uint64_t analytic_muladds = 0;        // padded closed form, per layer
    uint64_t analytic_exact_muladds = 0;  // no-padding closed form, per layer
    uint64_t measured_muladds = 0;        // instrumented padded run, per layer
    uint64_t measured_exact_muladds = 0;  // instrumented exact run, per layer
    double ratio_vs_global = 1.0;         // measured / measured(global)
    double pad_overhead = 0.0;            // measured / measured_exact - 1
};

// Instrumented per-layer score + value-aggregation mul-adds of the model's
// cross-attention, measured in exact and padded modes.
CostReport measured_cost(const CftModel& model, const Tensor& images);

// One forward per scheme kind on identically sized models; fills every
// CostReport field including the ratio against the global scheme.
std::vector<CostReport> cost_table(const ModelConfig& base_cfg, uint64_t seed);

std::string cost_table_csv(const std::vector<CostReport>& reports);

}  // namespace cft
