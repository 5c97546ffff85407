#include "cft/dethead.hpp"

#include <algorithm>
#include <cmath>

namespace cft {

double DetHeadConfig::gaussian_sigma() const {
    // kernel value at the edge midpoint (offset r, 0) equals kernel_edge:
    // exp(-r^2 / (2 sigma^2)) = edge
    const double r = static_cast<double>(kernel_size / 2);
    return std::sqrt(r * r / (2.0 * std::log(1.0 / kernel_edge)));
}

DetHeadParams::DetHeadParams(ParamSet& params, const std::string& name, int64_t in_channels, const DetHeadConfig& cfg,
                             Rng& rng) {
    auto conv_init = [&](const std::string& n, int64_t cin, int64_t cout, double bias_init = 0.0) {
        const double std = std::sqrt(2.0 / static_cast<double>(9 * cin));
        params.add(n + ".w", randn({3, 3, cin, cout}, rng, std));
        params.add(n + ".b", Tensor::full({cout}, bias_init));
    };
    conv_init(name + ".up1", in_channels, cfg.mid_channels);
    conv_init(name + ".up2", cfg.mid_channels, cfg.mid_channels);
    // heatmap bias starts low so the focal loss sees a sparse map from step one
    conv_init(name + ".heat", cfg.mid_channels, cfg.n_classes, -2.19);
    conv_init(name + ".reg", cfg.mid_channels, DetHeadConfig::kRegChannels);
    up1_w = params.get(name + ".up1.w");
    up1_b = params.get(name + ".up1.b");
    up2_w = params.get(name + ".up2.w");
    up2_b = params.get(name + ".up2.b");
    heat_w = params.get(name + ".heat.w");
    heat_b = params.get(name + ".heat.b");
    reg_w = params.get(name + ".reg.w");
    reg_b = params.get(name + ".reg.b");
}

HeadOutput upsample_and_predict(const Tensor& bev_features, const DetHeadParams& params, const DetHeadConfig& cfg,
                                int64_t grid_h, int64_t grid_w) {
    if (bev_features.rank() != 2 || bev_features.dim(0) != grid_h * grid_w)
        throw TensorError("upsample_and_predict: features do not match the BEV grid");
    const int64_t c_in = bev_features.dim(1);
    Tensor x = reshape(bev_features, {1, grid_h, grid_w, c_in});
    x = relu(conv2d(upsample2x(x), params.up1_w, params.up1_b, 1, 1));
    x = relu(conv2d(upsample2x(x), params.up2_w, params.up2_b, 1, 1));
    HeadOutput out;
    out.out_h = grid_h * DetHeadConfig::kUpsampleFactor;
    out.out_w = grid_w * DetHeadConfig::kUpsampleFactor;
    const int64_t cells = out.out_h * out.out_w;
    out.heatmap = reshape(sigmoid(conv2d(x, params.heat_w, params.heat_b, 1, 1)), {cells, cfg.n_classes});
    out.regression = reshape(conv2d(x, params.reg_w, params.reg_b, 1, 1), {cells, DetHeadConfig::kRegChannels});
    return out;
}

TargetMaps make_targets(const std::vector<DetectionBox>& gt_boxes, const BevConfig& bev, const DetHeadConfig& cfg) {
    TargetMaps maps;
    maps.out_h = bev.grid_h * DetHeadConfig::kUpsampleFactor;
    maps.out_w = bev.grid_w * DetHeadConfig::kUpsampleFactor;
    const int64_t cells = maps.out_h * maps.out_w;
    maps.heatmap.assign(static_cast<size_t>(cells * cfg.n_classes), 0.0);
    maps.regression.assign(static_cast<size_t>(cells * DetHeadConfig::kRegChannels), 0.0);
    const double sigma = cfg.gaussian_sigma();
    const int64_t radius = cfg.kernel_size / 2;
    for (const auto& box : gt_boxes) {
        const double u = (box.center[0] - bev.x_range.min) / bev.x_range.span() * static_cast<double>(maps.out_h);
        const double v = (box.center[1] - bev.y_range.min) / bev.y_range.span() * static_cast<double>(maps.out_w);
        const int64_t ch = static_cast<int64_t>(std::floor(u));
        const int64_t cw = static_cast<int64_t>(std::floor(v));
        if (ch < 0 || ch >= maps.out_h || cw < 0 || cw >= maps.out_w || box.class_id < 0 ||
            box.class_id >= cfg.n_classes) {
            ++maps.skipped;
            continue;
        }
        for (int64_t dh = -radius; dh <= radius; ++dh)
            for (int64_t dw = -radius; dw <= radius; ++dw) {
                const int64_t h = ch + dh, w = cw + dw;
                if (h < 0 || h >= maps.out_h || w < 0 || w >= maps.out_w) continue;
                const double g = std::exp(-static_cast<double>(dh * dh + dw * dw) / (2.0 * sigma * sigma));
                double& cell = maps.heatmap[static_cast<size_t>((h * maps.out_w + w) * cfg.n_classes + box.class_id)];
                cell = std::max(cell, g);
            }
        const int64_t cell = ch * maps.out_w + cw;
        double* reg = maps.regression.data() + cell * DetHeadConfig::kRegChannels;
        reg[0] = u - (static_cast<double>(ch) + 0.5);
        reg[1] = v - (static_cast<double>(cw) + 0.5);
        reg[2] = box.center[2];
        reg[3] = std::log(box.size[0]);
        reg[4] = std::log(box.size[1]);
        reg[5] = std::log(box.size[2]);
        reg[6] = std::sin(box.yaw);
        reg[7] = std::cos(box.yaw);
        reg[8] = box.velocity[0];
        reg[9] = box.velocity[1];
        maps.center_cells.push_back(cell);
    }
    return maps;
}

Tensor focal_loss(const Tensor& pred_heatmap, const TargetMaps& targets) {
    if (pred_heatmap.values().size() != targets.heatmap.size())
        throw TensorError("focal_loss: prediction and target sizes differ");
    const size_t n = targets.heatmap.size();
    std::vector<double> pos_mask(n, 0.0), neg_weight(n, 0.0);
    int64_t n_pos = 0;
    for (size_t i = 0; i < n; ++i) {
        const double gt = targets.heatmap[i];
        if (gt >= 1.0) {
            pos_mask[i] = 1.0;
            ++n_pos;
        } else {
            const double om = 1.0 - gt;
            neg_weight[i] = om * om * om * om;  // beta = 4
        }
    }
    const Shape& s = pred_heatmap.shape();
    Tensor pos = Tensor::from_vector(s, std::move(pos_mask));
    Tensor neg = Tensor::from_vector(s, std::move(neg_weight));
    Tensor p = clamp(pred_heatmap, 1e-12, 1.0 - 1e-12);
    Tensor one_minus_p = add_scalar(scale(p, -1.0), 1.0);
    // alpha = 2 on both branches
    Tensor pos_term = mul(pos, mul(mul(one_minus_p, one_minus_p), log_op(p)));
    Tensor neg_term = mul(neg, mul(mul(p, p), log_op(one_minus_p)));
    Tensor total = sum(add(pos_term, neg_term));
    const double norm = static_cast<double>(std::max<int64_t>(n_pos, 1));
    return scale(total, -1.0 / norm);
}

Tensor reg_l1_loss(const Tensor& pred_regression, const TargetMaps& targets) {
    if (targets.center_cells.empty()) return Tensor::scalar(0.0);
    Tensor pred = gather_rows(pred_regression, targets.center_cells);
    std::vector<double> gt;
    gt.reserve(targets.center_cells.size() * DetHeadConfig::kRegChannels);
    for (int64_t cell : targets.center_cells)
        for (int64_t c = 0; c < DetHeadConfig::kRegChannels; ++c)
            gt.push_back(targets.regression[static_cast<size_t>(cell * DetHeadConfig::kRegChannels + c)]);
    Tensor target = Tensor::from_vector(pred.shape(), std::move(gt));
    return mean(abs_op(sub(pred, target)));
}

std::vector<DetectionBox> decode(const HeadOutput& output, const BevConfig& bev, const DetHeadConfig& cfg) {
    struct Peak {
        double score;
        int64_t cell;
        int class_id;
    };
    const auto& heat = output.heatmap.values();
    const auto& reg = output.regression.values();
    const int64_t Ho = output.out_h, Wo = output.out_w, nc = cfg.n_classes;
    std::vector<Peak> peaks;
    for (int64_t h = 0; h < Ho; ++h)
        for (int64_t w = 0; w < Wo; ++w)
            for (int64_t c = 0; c < nc; ++c) {
                const double v = heat[static_cast<size_t>((h * Wo + w) * nc + c)];
                if (v < cfg.score_threshold) continue;
                bool is_max = true;
                for (int64_t dh = -1; dh <= 1 && is_max; ++dh)
                    for (int64_t dw = -1; dw <= 1; ++dw) {
                        if (dh == 0 && dw == 0) continue;
                        const int64_t nh = h + dh, nw = w + dw;
                        if (nh < 0 || nh >= Ho || nw < 0 || nw >= Wo) continue;
                        if (heat[static_cast<size_t>((nh * Wo + nw) * nc + c)] > v) {
                            is_max = false;
                            break;
                        }
                    }
                if (is_max) peaks.push_back({v, h * Wo + w, static_cast<int>(c)});
            }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
    if (static_cast<int64_t>(peaks.size()) > cfg.top_k) peaks.resize(static_cast<size_t>(cfg.top_k));

    std::vector<DetectionBox> boxes;
    for (const Peak& p : peaks) {
        const int64_t h = p.cell / Wo, w = p.cell % Wo;
        const double* r = reg.data() + p.cell * DetHeadConfig::kRegChannels;
        DetectionBox box;
        box.center[0] =
            bev.x_range.min + (static_cast<double>(h) + 0.5 + r[0]) * bev.x_range.span() / static_cast<double>(Ho);
        box.center[1] =
            bev.y_range.min + (static_cast<double>(w) + 0.5 + r[1]) * bev.y_range.span() / static_cast<double>(Wo);
        box.center[2] = r[2];
        box.size = {std::exp(r[3]), std::exp(r[4]), std::exp(r[5])};
        box.yaw = normalize_yaw(std::atan2(r[6], r[7]));
        box.velocity = {r[8], r[9]};
        box.class_id = p.class_id;
        box.score = p.score;
        boxes.push_back(box);
    }

    // scale-nms: circular suppression with per-class scaled radii
    std::vector<DetectionBox> kept;
    for (const auto& box : boxes) {
        const double radius = cfg.nms_radius * cfg.nms_scale(box.class_id);
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id != box.class_id) continue;
            const double d = std::hypot(k.center[0] - box.center[0], k.center[1] - box.center[1]);
            if (d < radius) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(box);
    }
    return kept;
}

}  // namespace cft
