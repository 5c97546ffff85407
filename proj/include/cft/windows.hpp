#pragma once

#include <array>
#include <string>
#include <vector>

#include "cft/encodings.hpp"

namespace cft {

// Camera views indexed in a fixed order; azimuths measured from +x (forward)
// toward +y (left).
enum View : int { kViewFL = 0, kViewF = 1, kViewFR = 2, kViewBL = 3, kViewB = 4, kViewBR = 5 };
inline constexpr int kNumViews = 6;
inline constexpr std::array<double, 6> kViewAzimuthDeg = {60.0, 0.0, -60.0, 120.0, 180.0, -120.0};
const char* view_name(int v);

enum class SchemeKind { kGlobal, kRec2x2, kRec2x3, kPolarA, kPolarB };
const char* scheme_name(SchemeKind k);
SchemeKind scheme_from_name(const std::string& name);
const std::vector<SchemeKind>& all_scheme_kinds();

// Partition of the BEV grid into windows plus the view group that feeds each
// window's keys. Windows of unequal size are zero padded to pad_to cells for
// batch operation; padded rows are masked out of the outputs.
struct WindowScheme {
    SchemeKind kind = SchemeKind::kGlobal;
    int64_t grid_h = 0;
    int64_t grid_w = 0;
    int64_t views = 0;
    std::vector<int> assignment;                    // window id per BEV cell, row-major
    std::vector<std::vector<int64_t>> window_cells;  // ordered cell indices per window
    std::vector<std::vector<int>> groups;            // ordered view indices per window
    int64_t pad_to = 0;                              // max window cell count

    int64_t window_count() const { return static_cast<int64_t>(window_cells.size()); }
    int64_t group_size() const { return static_cast<int64_t>(groups.empty() ? 0 : groups[0].size()); }
};

WindowScheme build_scheme(SchemeKind kind, const BevConfig& cfg, int64_t views);

// For each scheme kind the number of views in one group (Global, Rec2x2,
// Rec2x3, PolarA, PolarB -> 6, 3, 3, 1, 2).
int64_t scheme_group_views(SchemeKind kind);

}  // namespace cft
