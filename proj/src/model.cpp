#include "cft/model.hpp"

#include <cmath>

namespace cft {

Backbone::Backbone(ParamSet& params, const std::string& name, int64_t in_channels, const std::vector<int64_t>& widths,
                   const std::vector<int>& strides, Rng& rng) {
    if (widths.empty() || widths.size() != strides.size())
        throw TensorError("Backbone: widths and strides must be non-empty and aligned");
    int64_t cin = in_channels;
    for (size_t i = 0; i < widths.size(); ++i) {
        Block blk;
        const double std = std::sqrt(2.0 / static_cast<double>(9 * cin));
        blk.w = params.add(name + ".conv" + std::to_string(i) + ".w", randn({3, 3, cin, widths[i]}, rng, std));
        blk.b = params.add(name + ".conv" + std::to_string(i) + ".b", Tensor::zeros({widths[i]}));
        blk.stride = strides[i];
        blocks.push_back(blk);
        cin = widths[i];
    }
    out_channels = cin;
}

Tensor Backbone::operator()(const Tensor& images) const {
    Tensor x = images;
    for (const auto& blk : blocks) x = relu(conv2d(x, blk.w, blk.b, blk.stride, 1));
    return x;
}

int64_t ModelConfig::feat_size() const {
    int64_t s = image_size;
    for (int st : backbone_strides) {
        if (s % st != 0) throw TensorError("ModelConfig: image size not divisible by backbone strides");
        s /= st;
    }
    return s;
}

int64_t ModelConfig::image_token_width() const {
    if (design == PaDesign::kImplicit) return content_channels();
    return content_channels() + 3 * image_pos_channels;
}

int64_t ModelConfig::bev_token_width() const {
    if (design == PaDesign::kImplicit) return bev.content_channels;
    return bev.content_channels + bev.pos_channels;
}

void ModelConfig::validate() const {
    bev.validate();
    stack.validate();
    if (views <= 0) throw TensorError("ModelConfig: views must be positive");
    if (backbone_widths.back() != bev.content_channels)
        throw TensorError("ModelConfig: backbone output width must equal the BEV content width");
    if (design == PaDesign::kImplicit && bev.content_channels != bev.pos_channels)
        throw TensorError("ModelConfig: implicit design mixes content and position, widths must match");
    if (image_pos_channels <= 0 || image_pos_channels % 2 != 0)
        throw TensorError("ModelConfig: image_pos_channels must be positive and even");
    (void)feat_size();
}

CftModel::CftModel(const ModelConfig& cfg, ParamSet& params, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    scheme_ = build_scheme(cfg.scheme, cfg.bev, cfg.views);
    backbone_ = Backbone(params, "backbone", cfg.image_channels, cfg.backbone_widths, cfg.backbone_strides, rng);
    const int64_t bundle_width = cfg.design == PaDesign::kImplicit ? cfg.content_channels() : cfg.image_pos_channels;
    bundle_ =
        image_position_bundle(params, "image_pos", cfg.views, cfg.feat_size(), cfg.feat_size(), bundle_width, rng);
    pa_ = PaParams(params, "pa", cfg.bev, rng);
    va_ = VaParams(params, "va", cfg.stack, cfg_.image_token_width(), cfg.content_channels(), cfg_.bev_token_width(),
                   cfg.bev.content_channels, rng);
}

Tensor CftModel::image_tokens_from_features(const Tensor& feats) const {
    if (cfg_.design == PaDesign::kImplicit) {
        // mixed tokens: content plus summed positional encodings, all same width
        Tensor pos = add(add(bundle_.expand_pixel_x(), bundle_.expand_pixel_y()), bundle_.expand_view_rows());
        return add(feats, pos);
    }
    return restructure_image(feats, bundle_);
}

ModelForward CftModel::forward(const Tensor& images, PadMode pad_mode, const Tensor* pad_row,
                               AttnCapture* capture) const {
    ModelForward out;
    Tensor feat_maps = backbone_(images);  // [views, H_s, W_s, C_s]
    out.image_features = reshape(feat_maps, {cfg_.views * cfg_.pixels_per_view(), cfg_.content_channels()});
    Tensor tokens = image_tokens_from_features(out.image_features);
    out.image_tokens = self_attention_per_view(va_, tokens, cfg_.views, cfg_.pixels_per_view(), capture);
    out.bev = pa_forward(pa_, cfg_.bev, cfg_.design);
    CrossAttentionResult cross = cross_attention(va_, out.bev.bev_tokens, out.image_tokens, scheme_,
                                                 cfg_.pixels_per_view(), pad_mode, pad_row, capture);
    out.bev_features = cross.bev_features;
    return out;
}

ModelForward CftModel::forward_masked_global_reference(const Tensor& images) const {
    ModelForward out;
    Tensor feat_maps = backbone_(images);
    out.image_features = reshape(feat_maps, {cfg_.views * cfg_.pixels_per_view(), cfg_.content_channels()});
    Tensor tokens = image_tokens_from_features(out.image_features);
    out.image_tokens = self_attention_masked_global(va_, tokens, cfg_.views, cfg_.pixels_per_view());
    out.bev = pa_forward(pa_, cfg_.bev, cfg_.design);
    CrossAttentionResult cross =
        cross_attention_masked_global(va_, out.bev.bev_tokens, out.image_tokens, scheme_, cfg_.pixels_per_view());
    out.bev_features = cross.bev_features;
    return out;
}

Tensor cft_forward(const CftModel& model, const Tensor& images) { return model.forward(images).bev_features; }

}  // namespace cft
