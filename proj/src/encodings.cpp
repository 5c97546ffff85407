#include "cft/encodings.hpp"

namespace cft {

void BevConfig::validate() const {
    if (grid_h <= 0 || grid_w <= 0) throw TensorError("BevConfig: grid extents must be positive");
    if (pos_channels <= 0 || content_channels <= 0) throw TensorError("BevConfig: channel widths must be positive");
    if (pos_channels % 2 != 0) throw TensorError("BevConfig: pos_channels must be even for sin/cos pairing");
    if (z_range.min >= z_range.max) throw TensorError("BevConfig: degenerate z_range");
    if (x_range.min >= x_range.max || y_range.min >= y_range.max)
        throw TensorError("BevConfig: degenerate perception range");
}

double BevConfig::cell_x(int64_t h) const {
    return x_range.min + (static_cast<double>(h) + 0.5) * x_range.span() / static_cast<double>(grid_h);
}

double BevConfig::cell_y(int64_t w) const {
    return y_range.min + (static_cast<double>(w) + 0.5) * y_range.span() / static_cast<double>(grid_w);
}

Tensor bev_coordinate_embedding(ParamSet& params, const std::string& name, const BevConfig& cfg) {
    cfg.validate();
    const int64_t half = cfg.pos_channels / 2;
    if (half % 2 != 0) throw TensorError("bev_coordinate_embedding: pos_channels must be a multiple of 4");
    std::vector<double> xs(static_cast<size_t>(cfg.cells()));
    std::vector<double> ys(static_cast<size_t>(cfg.cells()));
    for (int64_t h = 0; h < cfg.grid_h; ++h)
        for (int64_t w = 0; w < cfg.grid_w; ++w) {
            xs[static_cast<size_t>(h * cfg.grid_w + w)] = cfg.cell_x(h);
            ys[static_cast<size_t>(h * cfg.grid_w + w)] = cfg.cell_y(w);
        }
    NoGradGuard off;
    Tensor ex = sinusoidal_encode(Tensor::from_vector({cfg.cells()}, std::move(xs)), static_cast<int>(half),
                                  kSinusoidalTemperature);
    Tensor ey = sinusoidal_encode(Tensor::from_vector({cfg.cells()}, std::move(ys)), static_cast<int>(half),
                                  kSinusoidalTemperature);
    Tensor init = concat({ex, ey}, 1);  // [cells x pos_channels]
    return params.add(name, init.clone());
}

Tensor PositionBundle::expand_pixel_x() const {
    std::vector<Tensor> parts(static_cast<size_t>(views), pixel_x);
    return concat(parts, 0);
}

Tensor PositionBundle::expand_pixel_y() const {
    std::vector<Tensor> parts(static_cast<size_t>(views), pixel_y);
    return concat(parts, 0);
}

Tensor PositionBundle::expand_view_rows() const { return repeat_rows(view_embed, feat_h * feat_w); }

PositionBundle image_position_bundle(ParamSet& params, const std::string& name, int64_t views, int64_t feat_h,
                                     int64_t feat_w, int64_t channels, Rng& rng) {
    if (views <= 0 || feat_h <= 0 || feat_w <= 0 || channels <= 0)
        throw TensorError("image_position_bundle: extents must be positive");
    PositionBundle bundle;
    bundle.views = views;
    bundle.feat_h = feat_h;
    bundle.feat_w = feat_w;
    bundle.channels = channels;
    const int64_t pixels = feat_h * feat_w;
    std::vector<double> us(static_cast<size_t>(pixels));
    std::vector<double> vs(static_cast<size_t>(pixels));
    for (int64_t i = 0; i < feat_h; ++i)
        for (int64_t j = 0; j < feat_w; ++j) {
            // normalized pixel coordinates in [0, 1); (0,0) encodes as value 0
            us[static_cast<size_t>(i * feat_w + j)] = static_cast<double>(j) / static_cast<double>(feat_w);
            vs[static_cast<size_t>(i * feat_w + j)] = static_cast<double>(i) / static_cast<double>(feat_h);
        }
    {
        NoGradGuard off;
        bundle.pixel_x = sinusoidal_encode(Tensor::from_vector({pixels}, std::move(us)), static_cast<int>(channels),
                                           kSinusoidalTemperature)
                             .clone();
        bundle.pixel_y = sinusoidal_encode(Tensor::from_vector({pixels}, std::move(vs)), static_cast<int>(channels),
                                           kSinusoidalTemperature)
                             .clone();
    }
    bundle.view_embed = params.add(name + ".view_embed", randn({views, channels}, rng, 0.02));
    return bundle;
}

}  // namespace cft
