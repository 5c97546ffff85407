#include "cft/windows.hpp"

#include <cmath>

namespace cft {

const char* view_name(int v) {
    static const char* names[] = {"FL", "F", "FR", "BL", "B", "BR"};
    if (v < 0 || v >= kNumViews) return "?";
    return names[v];
}

const char* scheme_name(SchemeKind k) {
    switch (k) {
        case SchemeKind::kGlobal:
            return "global";
        case SchemeKind::kRec2x2:
            return "rec2x2";
        case SchemeKind::kRec2x3:
            return "rec2x3";
        case SchemeKind::kPolarA:
            return "polar_a";
        case SchemeKind::kPolarB:
            return "polar_b";
    }
    return "?";
}

SchemeKind scheme_from_name(const std::string& name) {
    for (SchemeKind k : all_scheme_kinds())
        if (name == scheme_name(k)) return k;
    throw TensorError("unknown window scheme: " + name);
}

const std::vector<SchemeKind>& all_scheme_kinds() {
    static const std::vector<SchemeKind> kinds = {SchemeKind::kGlobal, SchemeKind::kRec2x2, SchemeKind::kRec2x3,
                                                  SchemeKind::kPolarA, SchemeKind::kPolarB};
    return kinds;
}

int64_t scheme_group_views(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::kGlobal:
            return 6;
        case SchemeKind::kRec2x2:
            return 3;
        case SchemeKind::kRec2x3:
            return 3;
        case SchemeKind::kPolarA:
            return 1;
        case SchemeKind::kPolarB:
            return 2;
    }
    return 0;
}

namespace {

// view whose azimuth is next going clockwise (seen from above, x forward)
constexpr std::array<int, 6> kNextClockwise = {kViewF, kViewFR, kViewBR, kViewFL, kViewBL, kViewB};

void finalize(WindowScheme& scheme) {
    scheme.window_cells.assign(static_cast<size_t>(scheme.groups.size()), {});
    for (size_t cell = 0; cell < scheme.assignment.size(); ++cell) {
        const int wid = scheme.assignment[cell];
        scheme.window_cells[static_cast<size_t>(wid)].push_back(static_cast<int64_t>(cell));
    }
    scheme.pad_to = 0;
    for (const auto& cells : scheme.window_cells) {
        if (cells.empty()) throw TensorError("window scheme produced an empty window");
        scheme.pad_to = std::max(scheme.pad_to, static_cast<int64_t>(cells.size()));
    }
}

}  // namespace

WindowScheme build_scheme(SchemeKind kind, const BevConfig& cfg, int64_t views) {
    cfg.validate();
    WindowScheme scheme;
    scheme.kind = kind;
    scheme.grid_h = cfg.grid_h;
    scheme.grid_w = cfg.grid_w;
    scheme.views = views;
    const int64_t H = cfg.grid_h, W = cfg.grid_w;
    scheme.assignment.resize(static_cast<size_t>(H * W));

    switch (kind) {
        case SchemeKind::kGlobal: {
            if (views <= 0) throw TensorError("build_scheme: need at least one view");
            std::fill(scheme.assignment.begin(), scheme.assignment.end(), 0);
            std::vector<int> all;
            for (int v = 0; v < views; ++v) all.push_back(v);
            scheme.groups = {all};
            break;
        }
        case SchemeKind::kRec2x2: {
            if (views != kNumViews) throw TensorError("rec2x2 routing needs exactly 6 views");
            if (H % 2 != 0 || W % 2 != 0) throw TensorError("rec2x2 needs even grid extents");
            // window ids: 0 FL (front-left), 1 FR, 2 BL, 3 BR; front = +x = upper
            // half of h, left = +y = upper half of w
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const bool front = h >= H / 2;
                    const bool left = w >= W / 2;
                    int wid = front ? (left ? 0 : 1) : (left ? 2 : 3);
                    scheme.assignment[static_cast<size_t>(h * W + w)] = wid;
                }
            scheme.groups = {{kViewFL, kViewF, kViewBL},
                             {kViewF, kViewFR, kViewBR},
                             {kViewFL, kViewBL, kViewB},
                             {kViewFR, kViewB, kViewBR}};
            break;
        }
        case SchemeKind::kRec2x3: {
            if (views != kNumViews) throw TensorError("rec2x3 routing needs exactly 6 views");
            if (H % 2 != 0) throw TensorError("rec2x3 needs an even number of grid rows");
            if (W < 3) throw TensorError("rec2x3 needs at least 3 grid columns");
            const int64_t c0 = (W + 2) / 3;
            const int64_t c1 = (W - c0 + 1) / 2;
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const int row = h >= H / 2 ? 0 : 1;  // 0 = front
                    const int col = w < c0 ? 0 : (w < c0 + c1 ? 1 : 2);
                    scheme.assignment[static_cast<size_t>(h * W + w)] = row * 3 + col;
                }
            // every front window sees the three forward views, back windows the
            // three rearward views
            scheme.groups = {{kViewFL, kViewF, kViewFR}, {kViewFL, kViewF, kViewFR}, {kViewFL, kViewF, kViewFR},
                             {kViewBL, kViewB, kViewBR}, {kViewBL, kViewB, kViewBR}, {kViewBL, kViewB, kViewBR}};
            break;
        }
        case SchemeKind::kPolarA:
        case SchemeKind::kPolarB: {
            if (views != kNumViews) throw TensorError("polar routing needs exactly 6 views");
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    const double theta = std::atan2(cfg.cell_y(w), cfg.cell_x(h)) * 180.0 / M_PI;
                    int best = 0;
                    double best_d = 1e18;
                    for (int v = 0; v < kNumViews; ++v) {
                        double d = std::fabs(std::remainder(theta - kViewAzimuthDeg[static_cast<size_t>(v)], 360.0));
                        if (d < best_d - 1e-12) {
                            best_d = d;
                            best = v;
                        }
                    }
                    scheme.assignment[static_cast<size_t>(h * W + w)] = best;
                }
            scheme.groups.resize(kNumViews);
            for (int v = 0; v < kNumViews; ++v) {
                if (kind == SchemeKind::kPolarA)
                    scheme.groups[static_cast<size_t>(v)] = {v};
                else
                    scheme.groups[static_cast<size_t>(v)] = {v, kNextClockwise[static_cast<size_t>(v)]};
            }
            break;
        }
    }
    finalize(scheme);
    return scheme;
}

}  // namespace cft
