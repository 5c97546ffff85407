#include "cft/costmodel.hpp"

#include <cmath>
#include <sstream>

namespace cft {

double polar_largest_sector_area(int64_t grid_h, int64_t grid_w) {
    const double hb = static_cast<double>(grid_h);
    const double wb = static_cast<double>(grid_w);
    return 0.5 * (hb / 2.0) * (wb - hb / (2.0 * std::sqrt(3.0)));
}

uint64_t analytic_cost(SchemeKind kind, int64_t feat_h, int64_t feat_w, int64_t grid_h, int64_t grid_w,
                       int64_t channels) {
    const uint64_t pixels = static_cast<uint64_t>(feat_h * feat_w);
    const uint64_t c = static_cast<uint64_t>(channels);
    const uint64_t hb = static_cast<uint64_t>(grid_h);
    const uint64_t wb = static_cast<uint64_t>(grid_w);
    const uint64_t sector = static_cast<uint64_t>(std::ceil(polar_largest_sector_area(grid_h, grid_w)));
    switch (kind) {
        case SchemeKind::kGlobal:
            return 6 * pixels * hb * wb * c;
        case SchemeKind::kRec2x2:
            return 4 * 3 * pixels * (hb / 2) * (wb / 2) * c;
        case SchemeKind::kRec2x3:
            return 6 * 3 * pixels * (hb / 2) * ((wb + 2) / 3) * c;
        case SchemeKind::kPolarA:
            return 6 * pixels * sector * c;
        case SchemeKind::kPolarB:
            return 6 * 2 * pixels * sector * c;
    }
    throw TensorError("analytic_cost: unknown scheme kind");
}

uint64_t analytic_cost_exact(const WindowScheme& scheme, int64_t feat_h, int64_t feat_w, int64_t channels) {
    const uint64_t pixels = static_cast<uint64_t>(feat_h * feat_w);
    uint64_t total = 0;
    for (size_t w = 0; w < scheme.window_cells.size(); ++w)
        total += static_cast<uint64_t>(scheme.window_cells[w].size()) *
                 static_cast<uint64_t>(scheme.groups[w].size()) * pixels * static_cast<uint64_t>(channels);
    return total;
}

namespace {

uint64_t cross_muladds_per_layer(const CftModel& model, const Tensor& images, PadMode pad_mode) {
    OpCounter counter;
    {
        NoGradGuard off;
        CounterGuard guard(counter);
        model.forward(images, pad_mode);
    }
    const uint64_t total = counter.labeled("cross_score") + counter.labeled("cross_value");
    const uint64_t layers = static_cast<uint64_t>(model.config().stack.n_cross);
    if (total % layers != 0) throw TensorError("measured_cost: cross-attention layers counted unevenly");
    return total / layers;
}

}  // namespace

CostReport measured_cost(const CftModel& model, const Tensor& images) {
    const ModelConfig& cfg = model.config();
    CostReport report;
    report.kind = cfg.scheme;
    const int64_t pair_channels = 2 * cfg.stack.inner_dim();  // score dims + value dims
    report.analytic_muladds =
        analytic_cost(cfg.scheme, cfg.feat_size(), cfg.feat_size(), cfg.bev.grid_h, cfg.bev.grid_w, pair_channels);
    report.analytic_exact_muladds =
        analytic_cost_exact(model.scheme(), cfg.feat_size(), cfg.feat_size(), pair_channels);
    report.measured_muladds = cross_muladds_per_layer(model, images, PadMode::kPadded);
    report.measured_exact_muladds = cross_muladds_per_layer(model, images, PadMode::kExact);
    report.pad_overhead = static_cast<double>(report.measured_muladds) /
                              static_cast<double>(report.measured_exact_muladds) -
                          1.0;
    return report;
}

std::vector<CostReport> cost_table(const ModelConfig& base_cfg, uint64_t seed) {
    std::vector<CostReport> reports;
    double global_measured = 0.0;
    for (SchemeKind kind : all_scheme_kinds()) {
        ModelConfig cfg = base_cfg;
        cfg.scheme = kind;
        ParamSet params;
        Rng rng(seed);
        CftModel model(cfg, params, rng);
        Rng img_rng(seed + 1);
        Tensor images = rand_uniform({cfg.views, cfg.image_size, cfg.image_size, cfg.image_channels}, img_rng, 0.0,
                                     1.0);
        CostReport report = measured_cost(model, images);
        if (kind == SchemeKind::kGlobal) global_measured = static_cast<double>(report.measured_muladds);
        report.ratio_vs_global = static_cast<double>(report.measured_muladds) / global_measured;
        reports.push_back(report);
    }
    return reports;
}

std::string cost_table_csv(const std::vector<CostReport>& reports) {
    std::ostringstream os;
    os << "scheme,analytic_muladds,analytic_exact_muladds,measured_muladds,measured_exact_muladds,"
          "ratio_vs_global,pad_overhead\n";
    for (const auto& r : reports) {
        os << scheme_name(r.kind) << "," << r.analytic_muladds << "," << r.analytic_exact_muladds << ","
           << r.measured_muladds << "," << r.measured_exact_muladds << "," << r.ratio_vs_global << ","
           << r.pad_overhead << "\n";
    }
    return os.str();
}

}  // namespace cft
