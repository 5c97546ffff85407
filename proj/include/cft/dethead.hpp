#pragma once

#include <vector>

#include "cft/box.hpp"
#include "cft/encodings.hpp"
#include "cft/nn.hpp"
#include "cft/tensor.hpp"

namespace cft {

// Center-based single-stage head configuration. The output map is the BEV
// grid upsampled by 4 in each direction.
struct DetHeadConfig {
    int64_t mid_channels = 16;
    int64_t n_classes = 3;
    int64_t kernel_size = 9;     // fixed Gaussian stamp, peak 1 at the center cell
    double kernel_edge = 0.05;   // value at the stamp's edge midpoint, fixes sigma
    int64_t top_k = 32;
    double score_threshold = 0.05;
    double nms_radius = 1.0;                 // meters, before per-class scaling
    std::vector<double> nms_class_scales{};  // empty = all 1.0

    double nms_scale(int class_id) const {
        if (nms_class_scales.empty()) return 1.0;
        return nms_class_scales.at(static_cast<size_t>(class_id));
    }
    double gaussian_sigma() const;
    static constexpr int64_t kUpsampleFactor = 4;
    static constexpr int64_t kRegChannels = 10;  // dx, dy, z, log lwh, sin/cos yaw, vx, vy
};

struct DetHeadParams {
    Tensor up1_w, up1_b;  // after first 2x upsample
    Tensor up2_w, up2_b;  // after second 2x upsample
    Tensor heat_w, heat_b;
    Tensor reg_w, reg_b;

    DetHeadParams() = default;
    DetHeadParams(ParamSet& params, const std::string& name, int64_t in_channels, const DetHeadConfig& cfg, Rng& rng);
};

struct HeadOutput {
    int64_t out_h = 0;
    int64_t out_w = 0;
    Tensor heatmap;     // [out_h*out_w x n_classes], sigmoid applied
    Tensor regression;  // [out_h*out_w x 10]
};

// Two nearest-neighbor 2x upsampling stages each followed by a learned conv,
// then the heatmap and regression branches.
HeadOutput upsample_and_predict(const Tensor& bev_features, const DetHeadParams& params, const DetHeadConfig& cfg,
                                int64_t grid_h, int64_t grid_w);

struct TargetMaps {
    int64_t out_h = 0;
    int64_t out_w = 0;
    std::vector<double> heatmap;     // [out_h*out_w x n_classes]
    std::vector<double> regression;  // [out_h*out_w x 10]
    std::vector<int64_t> center_cells;  // supervised cells, one per kept box
    int64_t skipped = 0;                // boxes outside the perception range
};

// Stamps each object's fixed-size Gaussian on its class channel with
// elementwise max and writes regression targets at the center cell.
TargetMaps make_targets(const std::vector<DetectionBox>& gt_boxes, const BevConfig& bev, const DetHeadConfig& cfg);

// Penalty-reduced focal loss (alpha = 2, beta = 4), normalized by the number
// of peak cells.
Tensor focal_loss(const Tensor& pred_heatmap, const TargetMaps& targets);

// Mean absolute error over supervised cells and channels; zero when no cell
// is supervised.
Tensor reg_l1_loss(const Tensor& pred_regression, const TargetMaps& targets);

// 3x3 local-max peak picking, top-K by score, regression decoding, then
// class-wise circular NMS with per-class scaled radii. Boxes return sorted by
// descending score.
std::vector<DetectionBox> decode(const HeadOutput& output, const BevConfig& bev, const DetHeadConfig& cfg);

}  // namespace cft
