#pragma once

#include "cft/checkpoint.hpp"
#include "cft/tensor.hpp"

namespace cft {

struct Range {
    double min = 0.0;
    double max = 0.0;
    double span() const { return max - min; }
};

// BEV grid geometry and channel widths. Grid row h walks the forward (x)
// axis from x_range.min, column w walks the left (y) axis from y_range.min;
// cell centers sit at half-cell offsets.
struct BevConfig {
    int64_t grid_h = 16;
    int64_t grid_w = 16;
    int64_t pos_channels = 32;      // positional embedding width
    int64_t content_channels = 32;  // content embedding width
    Range x_range{-12.8, 12.8};
    Range y_range{-12.8, 12.8};
    Range z_range{-3.0, 5.0};

    void validate() const;
    double cell_x(int64_t h) const;  // metric center of row h
    double cell_y(int64_t w) const;
    int64_t cells() const { return grid_h * grid_w; }
};

inline constexpr double kSinusoidalTemperature = 1e4;

// Per-pixel image coordinate encodings plus the per-view learned embedding.
// Pixel encodings are fixed; only the view table trains.
struct PositionBundle {
    int64_t views = 0;
    int64_t feat_h = 0;
    int64_t feat_w = 0;
    int64_t channels = 0;  // width of each of the three parts
    Tensor pixel_x;        // [feat_h*feat_w x channels], shared by all views
    Tensor pixel_y;
    Tensor view_embed;  // [views x channels], learned

    // tokens are view-major: view v occupies rows [v*feat_h*feat_w, ...)
    Tensor expand_pixel_x() const;
    Tensor expand_pixel_y() const;
    Tensor expand_view_rows() const;
};

// Learnable BEV positional table initialized from the 2D sinusoidal encoding
// of grid-center metric coordinates (half the channels for x, half for y).
Tensor bev_coordinate_embedding(ParamSet& params, const std::string& name, const BevConfig& cfg);

// Fixed sinusoidal pixel encodings over normalized coordinates and a learned
// per-view table.
PositionBundle image_position_bundle(ParamSet& params, const std::string& name, int64_t views, int64_t feat_h,
                                     int64_t feat_w, int64_t channels, Rng& rng);

}  // namespace cft
