#pragma once

#include <vector>

#include "cft/box.hpp"
#include "cft/encodings.hpp"
#include "cft/nn.hpp"
#include "cft/tensor.hpp"

namespace cft {

// Embedding designs. Explicit and EnhancedImplicit run the full height
// enhancement and differ only in whether the reference height is supervised;
// Implicit skips the height path and mixes content and position by summation.
enum class PaDesign { kImplicit, kExplicit, kEnhancedImplicit };

const char* pa_design_name(PaDesign d);
PaDesign pa_design_from_name(const std::string& name);

struct PaParams {
    Tensor bev_pos;      // [cells x pos_channels]
    Tensor bev_content;  // [cells x content_channels], learned
    Ffn height_ffn;      // pos_channels -> 1
    Ffn modulation_ffn;  // content_channels -> pos_channels

    PaParams() = default;
    PaParams(ParamSet& params, const std::string& name, const BevConfig& cfg, Rng& rng);
};

// Forward products of the enhancement for one evaluation.
struct BevEmbedding {
    Tensor ref_height;       // [cells x 1] meters, inside z_range by construction
    Tensor height_encoding;  // [cells x pos_channels]
    Tensor modulation;       // [cells x pos_channels]
    Tensor enhanced_pos;     // [cells x pos_channels]
    Tensor bev_tokens;       // [cells x (content + pos)] or [cells x content] for Implicit
};

// ref_height = z_min + (z_max - z_min) * sigmoid(ffn(bev_pos)); the sigmoid
// rescale keeps it inside z_range for every parameter value.
std::pair<Tensor, Tensor> reference_height(const Tensor& bev_pos, const Ffn& height_ffn, const Range& z_range,
                                           int64_t pos_channels);

// modulation = ffn(bev_content); enhanced = modulation (.) height_encoding + bev_pos
std::pair<Tensor, Tensor> enhance_position(const Tensor& bev_pos, const Tensor& bev_content,
                                           const Tensor& height_encoding, const Ffn& modulation_ffn);

// Channel concatenation keeping content in [0, content_width) and position
// after it, on both the BEV and the image side.
Tensor restructure_bev(const Tensor& bev_content, const Tensor& enhanced_pos);
Tensor restructure_image(const Tensor& image_features, const PositionBundle& bundle);

// Full enhancement for one forward pass. Implicit returns summed
// content+position tokens and no height products.
BevEmbedding pa_forward(const PaParams& pa, const BevConfig& cfg, PaDesign design);

// L1 between predicted reference height and ground-truth center height,
// evaluated only at BEV cells containing an object center. Zero for designs
// without explicit supervision and for empty scenes.
Tensor height_loss(const Tensor& ref_height, const std::vector<DetectionBox>& gt_boxes, const BevConfig& cfg,
                   PaDesign design);

}  // namespace cft
