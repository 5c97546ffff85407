#pragma once

#include <memory>

#include "cft/attention.hpp"
#include "cft/encodings.hpp"
#include "cft/pa.hpp"
#include "cft/windows.hpp"

namespace cft {

// Three 3x3 conv blocks; the first two downsample by 2 so a 64x64 image maps
// to the 16x16 feature grid the rest of the model expects.
struct Backbone {
    struct Block {
        Tensor w, b;
        int stride = 1;
    };
    std::vector<Block> blocks;
    int64_t out_channels = 0;

    Backbone() = default;
    Backbone(ParamSet& params, const std::string& name, int64_t in_channels, const std::vector<int64_t>& widths,
             const std::vector<int>& strides, Rng& rng);
    Tensor operator()(const Tensor& images) const;  // NHWC -> NHWC
};

struct ModelConfig {
    int64_t views = 6;
    int64_t image_size = 64;
    int64_t image_channels = 3;
    std::vector<int64_t> backbone_widths = {8, 16, 32};  // last one is the content width
    std::vector<int> backbone_strides = {2, 2, 1};
    BevConfig bev;  // defaults: 16x16 grid, 32+32 channels
    int64_t image_pos_channels = 16;  // width of each pixel/view encoding part
    AttentionStack stack;
    PaDesign design = PaDesign::kExplicit;
    SchemeKind scheme = SchemeKind::kRec2x2;

    int64_t feat_size() const;
    int64_t pixels_per_view() const { return feat_size() * feat_size(); }
    int64_t content_channels() const { return backbone_widths.back(); }
    int64_t image_token_width() const;
    int64_t bev_token_width() const;
    void validate() const;
};

struct ModelForward {
    Tensor image_features;  // [views*pixels x content]
    Tensor image_tokens;    // restructured or mixed tokens after self-attention
    BevEmbedding bev;       // position-aware enhancement products
    Tensor bev_features;    // [cells x content] BEV representation
};

// The full view transformation: backbone -> encodings -> position-aware
// enhancement -> view-aware attention. Consumes images only; there is no way
// to pass camera intrinsics or extrinsics through this interface. Parameters
// register into the caller's ParamSet so a detector head can share the same
// checkpoint.
class CftModel {
public:
    CftModel(const ModelConfig& cfg, ParamSet& params, Rng& rng);

    ModelForward forward(const Tensor& images, PadMode pad_mode = PadMode::kExact, const Tensor* pad_row = nullptr,
                         AttnCapture* capture = nullptr) const;
    // reference forward replacing every windowed stage by masked global attention
    ModelForward forward_masked_global_reference(const Tensor& images) const;

    const ModelConfig& config() const { return cfg_; }
    const WindowScheme& scheme() const { return scheme_; }
    const PaParams& pa() const { return pa_; }
    const VaParams& va() const { return va_; }
    const PositionBundle& bundle() const { return bundle_; }

private:
    Tensor image_tokens_from_features(const Tensor& feats) const;

    ModelConfig cfg_;
    WindowScheme scheme_;
    Backbone backbone_;
    PositionBundle bundle_;
    PaParams pa_;
    VaParams va_;
};

// Convenience wrapper matching the rest of the pipeline: images in, BEV
// representation out, deterministic given parameters.
Tensor cft_forward(const CftModel& model, const Tensor& images);

}  // namespace cft
