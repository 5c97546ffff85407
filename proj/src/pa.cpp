#include "cft/pa.hpp"

namespace cft {

const char* pa_design_name(PaDesign d) {
    switch (d) {
        case PaDesign::kImplicit:
            return "implicit";
        case PaDesign::kExplicit:
            return "explicit";
        case PaDesign::kEnhancedImplicit:
            return "enhanced_implicit";
    }
    return "?";
}

PaDesign pa_design_from_name(const std::string& name) {
    if (name == "implicit") return PaDesign::kImplicit;
    if (name == "explicit") return PaDesign::kExplicit;
    if (name == "enhanced_implicit") return PaDesign::kEnhancedImplicit;
    throw TensorError("unknown embedding design: " + name);
}

PaParams::PaParams(ParamSet& params, const std::string& name, const BevConfig& cfg, Rng& rng) {
    bev_pos = bev_coordinate_embedding(params, name + ".bev_pos", cfg);
    bev_content = params.add(name + ".bev_content", randn({cfg.cells(), cfg.content_channels}, rng, 0.02));
    height_ffn = Ffn(params, name + ".height_ffn", cfg.pos_channels, 1, rng);
    modulation_ffn = Ffn(params, name + ".modulation_ffn", cfg.content_channels, cfg.pos_channels, rng);
}

std::pair<Tensor, Tensor> reference_height(const Tensor& bev_pos, const Ffn& height_ffn, const Range& z_range,
                                           int64_t pos_channels) {
    if (z_range.min >= z_range.max) throw TensorError("reference_height: degenerate z_range");
    Tensor logits = height_ffn(bev_pos);  // [cells x 1]
    Tensor z = add_scalar(scale(sigmoid(logits), z_range.span()), z_range.min);
    Tensor enc = sinusoidal_encode(z, static_cast<int>(pos_channels), kSinusoidalTemperature);
    return {z, enc};
}

std::pair<Tensor, Tensor> enhance_position(const Tensor& bev_pos, const Tensor& bev_content,
                                           const Tensor& height_encoding, const Ffn& modulation_ffn) {
    Tensor m = modulation_ffn(bev_content);
    if (m.shape() != height_encoding.shape())
        throw TensorError("enhance_position: modulation width " + shape_str(m.shape()) +
                          " does not match height encoding " + shape_str(height_encoding.shape()));
    Tensor enhanced = add(mul(m, height_encoding), bev_pos);
    return {m, enhanced};
}

Tensor restructure_bev(const Tensor& bev_content, const Tensor& enhanced_pos) {
    return concat({bev_content, enhanced_pos}, 1);
}

Tensor restructure_image(const Tensor& image_features, const PositionBundle& bundle) {
    return concat({image_features, bundle.expand_pixel_x(), bundle.expand_pixel_y(), bundle.expand_view_rows()}, 1);
}

BevEmbedding pa_forward(const PaParams& pa, const BevConfig& cfg, PaDesign design) {
    BevEmbedding out;
    if (design == PaDesign::kImplicit) {
        if (cfg.content_channels != cfg.pos_channels)
            throw TensorError("implicit design needs equal content and position widths to mix by summation");
        out.bev_tokens = add(pa.bev_content, pa.bev_pos);
        return out;
    }
    auto [z, enc] = reference_height(pa.bev_pos, pa.height_ffn, cfg.z_range, cfg.pos_channels);
    out.ref_height = z;
    out.height_encoding = enc;
    auto [m, enhanced] = enhance_position(pa.bev_pos, pa.bev_content, enc, pa.modulation_ffn);
    out.modulation = m;
    out.enhanced_pos = enhanced;
    out.bev_tokens = restructure_bev(pa.bev_content, enhanced);
    return out;
}

Tensor height_loss(const Tensor& ref_height, const std::vector<DetectionBox>& gt_boxes, const BevConfig& cfg,
                   PaDesign design) {
    if (design != PaDesign::kExplicit) return Tensor::scalar(0.0);
    std::vector<int64_t> cells;
    std::vector<double> heights;
    for (const auto& box : gt_boxes) {
        const int64_t h = static_cast<int64_t>(
            std::floor((box.center[0] - cfg.x_range.min) / cfg.x_range.span() * static_cast<double>(cfg.grid_h)));
        const int64_t w = static_cast<int64_t>(
            std::floor((box.center[1] - cfg.y_range.min) / cfg.y_range.span() * static_cast<double>(cfg.grid_w)));
        if (h < 0 || h >= cfg.grid_h || w < 0 || w >= cfg.grid_w) continue;
        cells.push_back(h * cfg.grid_w + w);
        heights.push_back(box.center[2]);
    }
    if (cells.empty()) return Tensor::scalar(0.0);
    Tensor pred = gather_rows(ref_height, cells);  // [n x 1]
    Tensor target = Tensor::from_vector({static_cast<int64_t>(heights.size()), 1}, heights);
    return mean(abs_op(sub(pred, target)));
}

}  // namespace cft
