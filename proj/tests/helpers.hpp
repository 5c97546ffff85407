#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cft/tensor.hpp"

namespace cft::testing {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t checked = 0;
};

// Central finite-difference oracle: loss_fn rebuilds the graph from the
// leaves' current values; each checked coordinate is nudged by +-step.
// max_coords < 0 checks every coordinate, otherwise max_coords per leaf are
// sampled with the provided generator.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                       double step = 1e-5, int64_t max_coords = -1, Rng* sampler = nullptr) {
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.values().size(), 0.0));

    GradCheckResult result;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].mutable_values();
        std::vector<int64_t> coords;
        const int64_t n = static_cast<int64_t>(vals.size());
        if (max_coords < 0 || max_coords >= n) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < max_coords; ++i)
                coords.push_back(sampler ? sampler->uniform_int(0, n - 1) : (i * 7919) % n);
        }
        for (int64_t c : coords) {
            const double saved = vals[static_cast<size_t>(c)];
            vals[static_cast<size_t>(c)] = saved + step;
            const double up = loss_fn().item();
            vals[static_cast<size_t>(c)] = saved - step;
            const double down = loss_fn().item();
            vals[static_cast<size_t>(c)] = saved;
            const double numeric = (up - down) / (2.0 * step);
            result.max_rel_err = std::max(result.max_rel_err, rel_err(analytic[li][static_cast<size_t>(c)], numeric));
            ++result.checked;
        }
    }
    return result;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::fabs(a.values()[i] - b.values()[i]));
    return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (size_t i = 0; i < a.values().size(); ++i)
        if (a.values()[i] != b.values()[i]) return false;
    return true;
}

// random values bounded away from zero, for ops with a kink at the origin
inline Tensor randn_away_from_zero(Shape shape, Rng& rng, double min_abs = 0.2) {
    const int64_t n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) {
        const double mag = min_abs + std::fabs(rng.normal());
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor::from_vector(std::move(shape), std::move(data));
}

}  // namespace cft::testing
