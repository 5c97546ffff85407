#include "cft/nn.hpp"

#include <cmath>

namespace cft {

Linear::Linear(ParamSet& params, const std::string& name, int64_t in, int64_t out, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    w = params.add(name + ".w", randn({in, out}, rng, std));
    b = params.add(name + ".b", Tensor::zeros({out}));
}

Ffn::Ffn(ParamSet& params, const std::string& name, int64_t in, int64_t out, Rng& rng)
    : fc1(params, name + ".fc1", in, 2 * in, rng), fc2(params, name + ".fc2", 2 * in, out, rng) {}

LayerNorm::LayerNorm(ParamSet& params, const std::string& name, int64_t width) {
    gain = params.add(name + ".gain", Tensor::full({width}, 1.0));
    bias = params.add(name + ".bias", Tensor::zeros({width}));
}

AdamW::AdamW(ParamSet& params, Options opts) : params_(params), opts_(opts) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        const size_t n = params.entries()[i].tensor.values().size();
        m_[i].assign(n, 0.0);
        v_[i].assign(n, 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = const_cast<Tensor&>(params_.entries()[i].tensor);
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& val = p.mutable_values();
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t k = 0; k < val.size(); ++k) {
            m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * g[k];
            v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            val[k] -= opts_.lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * val[k]);
        }
    }
}

Tensor ffn_forward(const Tensor& x, const Ffn& ffn) { return ffn(x); }

}  // namespace cft
